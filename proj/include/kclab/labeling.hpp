#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kclab/core.hpp"
#include "kclab/llm/structured.hpp"
#include "kclab/prompts.hpp"
#include "kclab/util/csv.hpp"

namespace kclab {

enum class LabelMethod { llm_cot, llm_direct, baseline };
enum class PromptMode { cot, direct };

std::string to_string(LabelMethod method);
/// Accepts both "llm_cot" and the CLI spelling "llm-cot".
LabelMethod parse_label_method(std::string_view text);

/// KC-level correctness of one first attempt. used == false implies correct == false.
struct KCLabel {
  std::string student_id;
  std::string problem_id;
  KcId kc_id;
  bool used = false;
  bool correct = false;
  std::string rationale;
  LabelMethod method = LabelMethod::baseline;

  friend bool operator==(const KCLabel&, const KCLabel&) = default;
};

/// System instruction, then one user/assistant exchange per few-shot, then
/// the query. Greedy decoding (temperature 0, top_p 1).
llm::ChatRequest build_label_prompt(const llm::LlmContext& ctx, const Problem& problem, const std::string& code,
                                    const std::vector<KnowledgeComponent>& kcs,
                                    const std::vector<FewShotExample>& fewshots, PromptMode mode);

/// Renders the assistant turn a few-shot demonstrates for the given mode.
std::string render_fewshot_answer(const FewShotExample& example, PromptMode mode);

/// Reads the final JSON array of {kc_id, used, correct, reasoning}. It must
/// cover exactly `expected_kcs`. Prose before the block becomes a rationale
/// prefix. Unused-but-correct entries are coerced to incorrect with a note.
std::vector<KcJudgment> parse_label_response(const std::string& content, const std::vector<KcId>& expected_kcs);

/// One gateway call for all KCs of pair.first, one reprompt on parse failure.
std::vector<KCLabel> label_submission(const llm::LlmContext& ctx, const Problem& problem, const AttemptPair& pair,
                                      const std::vector<KnowledgeComponent>& kcs, PromptMode mode,
                                      const std::vector<FewShotExample>& fewshots);

/// Problem-level correctness copied onto every KC. Never calls an LLM.
std::vector<KCLabel> baseline_labels(const AttemptPair& pair, const std::vector<KnowledgeComponent>& kcs,
                                     double threshold = kDefaultCorrectThreshold);

struct LabelTask {
  const Problem* problem = nullptr;
  AttemptPair pair;
  std::vector<KnowledgeComponent> kcs;
};

struct LabelFailure {
  std::string student_id;
  std::string problem_id;
  std::string reason;
};

struct LabelRunReport {
  LabelMethod method = LabelMethod::baseline;
  std::size_t submissions = 0;
  std::size_t labeled_submissions = 0;
  std::size_t labels = 0;
  std::vector<LabelFailure> failures;
  long gateway_requests = 0;
  long cache_hits = 0;
  long provider_attempts = 0;
  double wall_seconds = 0.0;

  double cache_hit_ratio() const {
    return gateway_requests == 0 ? 1.0 : static_cast<double>(cache_hits) / static_cast<double>(gateway_requests);
  }
  nlohmann::json to_json() const;
};

struct LabelRunResult {
  std::vector<KCLabel> labels;  // sorted by (student, problem, kc)
  LabelRunReport report;
};

struct LabelRunOptions {
  LabelMethod method = LabelMethod::baseline;
  double threshold = kDefaultCorrectThreshold;
  int concurrency = 4;
};

/// Labels every task. LLM methods need `ctx`; per-submission parse and
/// provider failures are recorded in the report, authentication failures
/// abort the run.
LabelRunResult label_all(const llm::LlmContext* ctx, const std::vector<LabelTask>& tasks,
                         const LabelRunOptions& options);

csv::Writer labels_writer(const std::vector<KCLabel>& labels);
std::vector<KCLabel> read_labels_csv(const std::filesystem::path& path);
std::vector<KCLabel> parse_labels_csv(const csv::Table& table);

}  // namespace kclab
