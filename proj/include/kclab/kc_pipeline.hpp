#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kclab/core.hpp"
#include "kclab/embedding.hpp"
#include "kclab/llm/structured.hpp"

namespace kclab {

inline constexpr int kDefaultExemplarsPerProblem = 5;
inline constexpr int kDefaultGeneratedKcCount = 20;

/// Representative correct solutions of one problem, one per embedding cluster.
struct ExemplarSet {
  std::string problem_id;
  std::vector<Embedding> exemplars;  // id = submission_id, sorted by id
  int k = kDefaultExemplarsPerProblem;

  std::vector<std::string> ids() const;
};

/// KCs a specific exemplar uses, together with its embedding.
struct ExemplarKCProfile {
  std::string problem_id;
  std::string submission_id;
  KcIdSet kc_subset;
  Embedding embedding;
};

struct CandidateKC {
  std::string problem_id;
  std::string name;
  std::string description;

  /// Text that gets embedded for clustering.
  std::string clustering_text() const { return name + ": " + description; }
};

/// All solutions when there are at most k of them; otherwise k-means over
/// their embeddings and, per cluster, the member nearest the centroid
/// (Euclidean, ties to the smaller submission_id).
ExemplarSet select_exemplars(const Problem& problem, const std::vector<Submission>& correct_solutions, int k,
                             std::uint64_t seed, const EmbeddingStore& embeddings);

/// Asks for the KCs one correct solution exercises. Empty list is valid.
std::vector<CandidateKC> generate_candidate_kcs(const llm::LlmContext& ctx, const Problem& problem,
                                                const std::string& exemplar_code);

struct Consolidation {
  KCSet kcs;                     // exactly target_n generated KCs, ids G01, G02, ...
  std::vector<int> cluster_of;   // per input candidate
  QMatrix qmatrix;               // problem -> KCs whose cluster holds one of its candidates
};

/// Clusters candidate texts into target_n groups and summarizes each group
/// with one LLM call.
Consolidation consolidate_kcs(const llm::LlmContext& ctx, const std::vector<CandidateKC>& candidates, int target_n,
                              std::uint64_t seed, TextEmbedder& embedder);

/// Asks which of `problem_kcs` the exemplar uses. Any id outside the set (or
/// an empty selection) is a parse error, retried once.
ExemplarKCProfile profile_exemplar(const llm::LlmContext& ctx, const Problem& problem, const Submission& exemplar,
                                   const std::vector<KnowledgeComponent>& problem_kcs,
                                   const EmbeddingStore& embeddings);

/// KC subset of the exemplar closest (cosine) to the pair's last attempt;
/// ties go to the smaller submission_id.
std::pair<StudentProblem, KcIdSet> map_student_to_kcs(const AttemptPair& pair,
                                                      const std::vector<ExemplarKCProfile>& profiles,
                                                      const EmbeddingStore& embeddings);

}  // namespace kclab
