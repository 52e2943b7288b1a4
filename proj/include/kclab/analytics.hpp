#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kclab/core.hpp"
#include "kclab/labeling.hpp"
#include "kclab/util/csv.hpp"

namespace kclab {

// ---- learning curves ----

struct CurvePoint {
  int opportunity = 1;
  double error_rate = 0.0;
  int support = 0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct LearningCurve {
  KcId kc_id;
  std::vector<CurvePoint> points;  // strictly increasing opportunity

  friend bool operator==(const LearningCurve&, const LearningCurve&) = default;
};

inline constexpr int kDefaultMinSupport = 5;

/// Error rate of `kc_id` by opportunity n = T + 1, dropping points supported
/// by fewer than `min_support` labels. Throws PreconditionError when no label
/// mentions the KC and IntegrityError when a label has no opportunity entry.
LearningCurve empirical_curve(const std::vector<KCLabel>& labels, const KcId& kc_id,
                              const OpportunityTable& opportunities, int min_support = kDefaultMinSupport);

/// One curve per labeled KC, ordered by kc_id.
std::vector<LearningCurve> empirical_curves(const std::vector<KCLabel>& labels, const OpportunityTable& opportunities,
                                            int min_support = kDefaultMinSupport);

struct PowerLawFit {
  double a = 0.0;
  double b = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
  int n_points = 0;
  int min_n = 0;
  int max_n = 0;

  double predict(double n) const;
  bool covers(int n) const { return n >= min_n && n <= max_n; }
};

double power_law_sse(const LearningCurve& curve, double a, double b);

/// Best non-negative intercept for a fixed exponent.
double optimal_intercept(const LearningCurve& curve, double b);

/// Least squares a*n^b with a >= 0, b in [-10, 0]. Throws PreconditionError
/// for fewer than two points.
PowerLawFit fit_power_law(const LearningCurve& curve);

struct AggregatedPoint {
  int opportunity = 1;
  double empirical = 0.0;
  int n_kcs = 0;
  std::optional<double> fitted;
  int n_fitted = 0;
};

/// Unweighted mean across KCs at each opportunity. `fits` is parallel to
/// `curves`; a fit contributes at n when n lies within its fitted range.
std::vector<AggregatedPoint> aggregate_curves(const std::vector<LearningCurve>& curves,
                                              const std::vector<std::optional<PowerLawFit>>& fits);

/// Pools an aggregated trace back into a curve (support = contributing KCs).
LearningCurve aggregated_as_curve(const std::vector<AggregatedPoint>& points);

csv::Writer curves_writer(const std::vector<LearningCurve>& curves,
                          const std::vector<std::optional<PowerLawFit>>& fits);
csv::Writer fits_writer(const std::vector<LearningCurve>& curves, const std::vector<std::optional<PowerLawFit>>& fits);

struct CurvesFile {
  std::vector<LearningCurve> curves;
  std::vector<std::string> comments;
};
CurvesFile read_curves_csv(const std::filesystem::path& path);

struct FitRow {
  KcId kc_id;
  PowerLawFit fit;
};
std::vector<FitRow> read_fits_csv(const std::filesystem::path& path);

// ---- additive factors model ----

struct AfmObservation {
  std::size_t student = 0;  // index into AfmData::students
  std::size_t kc = 0;       // index into AfmData::kcs
  int prior = 0;            // T
  bool correct = false;
};

struct AfmData {
  std::vector<std::string> students;  // sorted
  std::vector<KcId> kcs;              // sorted
  std::vector<AfmObservation> observations;

  std::size_t parameter_count() const { return students.size() + 2 * kcs.size(); }
  std::size_t theta_index(std::size_t s) const { return s; }
  std::size_t beta_index(std::size_t k) const { return students.size() + k; }
  std::size_t gamma_index(std::size_t k) const { return students.size() + kcs.size() + k; }
};

/// One Bernoulli observation per label. Labels whose student is not in
/// `students` (when given) are skipped.
AfmData build_afm_data(const std::vector<KCLabel>& labels, const OpportunityTable& opportunities,
                       const std::set<std::string>* students = nullptr);

struct AFMParams {
  std::map<std::string, double> theta;
  std::map<KcId, double> beta;
  std::map<KcId, double> gamma;
  double lambda = 0.0;

  nlohmann::json to_json() const;
  static AFMParams from_json(const nlohmann::json& j);
};

inline constexpr double kDefaultAfmLambda = 0.1;

struct AfmFitOptions {
  double lambda = kDefaultAfmLambda;
  int max_iter = 500;
  double tolerance = 1e-5;
};

struct AfmFitResult {
  AFMParams params;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
  std::vector<double> objective_trace;  // after every accepted step, starting at x0
};

/// Penalized log-likelihood at flat parameters x = [theta, beta, gamma].
double afm_objective(const AfmData& data, const std::vector<double>& x, double lambda);
std::vector<double> afm_gradient(const AfmData& data, const std::vector<double>& x, double lambda);

/// Projected gradient ascent (gamma >= 0) with Armijo backtracking; the trial
/// step is the Barzilai-Borwein estimate from the previous iteration.
AfmFitResult fit_afm(const AfmData& data, const AfmFitOptions& options = {});

/// sigmoid(theta + sum_k (beta_k + gamma_k * T_k)); theta = 0 for unseen
/// students. Throws NotFoundError for unknown KCs.
double afm_predict(const AFMParams& params, const std::string& student_id, const std::vector<KcId>& kc_ids,
                   const std::vector<int>& prior_values);

/// Mean predicted error over the given students for one KC at opportunity n.
double afm_mean_error(const AFMParams& params, const std::vector<std::string>& students, const KcId& kc_id, int n);

/// Rank-based (Mann-Whitney) AUC with ties counted one half. Throws
/// PreconditionError on length mismatch or when a class is absent.
double auc(const std::vector<double>& scores, const std::vector<bool>& truth);

struct StudentSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Seeded shuffle, then the first round(train_fraction * n) students (at least
/// one on each side) train. Both halves come back sorted.
StudentSplit split_students(std::vector<std::string> students, double train_fraction, std::uint64_t seed);

struct AfmEvaluation {
  std::optional<double> auc;  // empty when the test observations are single-class
  std::size_t n_test_observations = 0;
  std::size_t n_skipped_observations = 0;  // test labels on KCs unseen in training
  std::uint64_t split_seed = 0;
  StudentSplit split;
  AfmFitResult fit;

  nlohmann::json to_json() const;
};

struct AfmEvalOptions {
  AfmFitOptions fit;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// Fits on the training students and scores every held-out label.
AfmEvaluation evaluate_afm(const std::vector<KCLabel>& labels, const OpportunityTable& opportunities,
                           const AfmEvalOptions& options);

}  // namespace kclab
