#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kclab/analytics.hpp"
#include "kclab/ingestion.hpp"
#include "kclab/labeling.hpp"

namespace kclab {

struct AgreementReport {
  std::size_t n = 0;
  double observed_agreement = 0.0;  // p_o
  double expected_agreement = 0.0;  // p_e
  double kappa = 0.0;
  /// confusion[a][b]: index 1 = true, 0 = false.
  std::array<std::array<std::size_t, 2>, 2> confusion{};

  nlohmann::json to_json() const;
};

/// Cohen's kappa for two aligned binary raters. When both raters give the
/// same constant answer (p_e = 1) kappa is defined as 1.
AgreementReport cohens_kappa(const std::vector<bool>& a, const std::vector<bool>& b);

struct WorksheetRow {
  std::string student_id;
  std::string problem_id;
  KcId kc_id;
  std::string statement;
  std::string code;
  std::string kc_name;
  std::string judgment;
};

/// Seeded sample of n distinct (student, problem) first attempts without
/// replacement; one row per labeled KC, judgment left blank.
std::vector<WorksheetRow> sample_for_human_eval(const std::vector<KCLabel>& labels, int n, std::uint64_t seed,
                                                const DatasetBundle& bundle, const KCSet& kcs);

csv::Writer worksheet_writer(const std::vector<WorksheetRow>& rows);

using JudgmentKey = OpportunityKey;

/// Reads a filled worksheet (or any CSV with student_id, problem_id, kc_id
/// and a judgment/correct column). Judgments: 1/0, true/false, yes/no,
/// correct/incorrect, unused (= false). Blank judgments are errors.
std::map<JudgmentKey, bool> read_judgments_csv(const std::filesystem::path& path);

std::map<JudgmentKey, bool> judgments_from_labels(const std::vector<KCLabel>& labels);

/// Kappa over the items of `a`; every one must also be judged in `b`.
AgreementReport align_and_kappa(const std::map<JudgmentKey, bool>& a, const std::map<JudgmentKey, bool>& b);

struct MethodResult {
  std::string method;
  std::string kc_set;
  std::vector<FitRow> fits;
  std::optional<double> auc;
  std::optional<PowerLawFit> pooled;
};

struct ComparisonRow {
  std::string method;
  std::string kc_set;
  std::optional<double> mean_rmse;
  std::optional<double> mean_r2;
  std::optional<double> auc;
  int n_kcs = 0;
  std::optional<double> pooled_rmse;
  std::optional<double> pooled_r2;
};

/// One row per (method, KC set): mean per-KC RMSE and r2, AUC, and the fit of
/// the pooled aggregate curve. Rows keep input order.
std::vector<ComparisonRow> compare_methods(const std::vector<MethodResult>& results);

/// Published headline values for the problem-level baseline on human KCs and
/// the chain-of-thought labels on selected KCs.
std::vector<ComparisonRow> reference_rows();

std::string comparison_markdown(const std::vector<ComparisonRow>& rows, const std::vector<ComparisonRow>& reference);
csv::Writer comparison_writer(const std::vector<ComparisonRow>& rows);

}  // namespace kclab
