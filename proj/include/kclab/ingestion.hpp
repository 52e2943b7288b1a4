#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kclab/core.hpp"
#include "kclab/util/csv.hpp"

namespace kclab {

/// Everything loaded from one dataset directory.
struct DatasetBundle {
  std::vector<Problem> problems;        // sorted by problem_id
  std::vector<Submission> submissions;  // sorted by (student, problem, attempt)
  std::vector<KCSet> kc_sets;
  std::vector<QMatrix> q_matrices;
  std::optional<CodeKCMap> code_kc_map;

  const Problem* find_problem(const std::string& problem_id) const;
  const Problem& problem(const std::string& problem_id) const;
  const Submission* find_submission(const std::string& submission_id) const;

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

struct LoadOptions {
  double correct_threshold = kDefaultCorrectThreshold;
};

/// Reads submissions.csv and problems.csv (required) plus kcs.json,
/// qmatrix.csv and code_kc_map.csv when present. Attempt indices are
/// renumbered 1..m per (student, problem) in timestamp order.
DatasetBundle load_dataset(const std::filesystem::path& root, const LoadOptions& options = {});

/// Writes the canonical layout (code inline). load(save(b)) == b.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& root);

struct KcUsage {
  std::string set_id;
  KcId kc_id;
  int problem_count = 0;
};

struct ValidationReport {
  std::size_t student_count = 0;
  std::size_t problem_count = 0;
  std::size_t submission_count = 0;
  std::vector<KcUsage> kc_usage;
  std::vector<std::string> sparse_kcs;  // exercised by fewer than kSparseKcThreshold problems
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

inline constexpr int kSparseKcThreshold = 3;

ValidationReport validate_dataset(const DatasetBundle& bundle);

// Shared file formats, reused by pipeline stages.

struct KcsFile {
  KCSet set;
  nlohmann::json meta;  // null for a plain array file
};

/// Accepts either a plain JSON array of {kc_id, name, description, origin}
/// or an envelope {"meta": {...}, "kcs": [...]} as written by the pipeline.
KcsFile read_kcs_json(const std::filesystem::path& path);
std::string kcs_json(const KCSet& set, const nlohmann::json& meta = nullptr);

QMatrix read_qmatrix_csv(const std::filesystem::path& path);
csv::Writer qmatrix_writer(const QMatrix& q);

CodeKCMap read_code_kc_map_csv(const std::filesystem::path& path);
csv::Writer code_kc_map_writer(const CodeKCMap& map);

/// Throws IntegrityError if any referenced problem or KC is unknown.
void check_qmatrix(const QMatrix& q, const KCSet& kcs, const DatasetBundle& bundle);
void check_code_kc_map(const CodeKCMap& map, const KCSet& kcs, const DatasetBundle& bundle);

}  // namespace kclab
