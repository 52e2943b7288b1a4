#include "kclab/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kclab/error.hpp"
#include "kclab/util/format.hpp"
#include "kclab/util/random.hpp"

using nlohmann::json;

namespace kclab {

// ---- learning curves ----

LearningCurve empirical_curve(const std::vector<KCLabel>& labels, const KcId& kc_id,
                              const OpportunityTable& opportunities, int min_support) {
  std::map<int, std::pair<int, int>> by_n;  // n -> (incorrect, total)
  bool seen = false;
  for (const auto& l : labels) {
    if (l.kc_id != kc_id) continue;
    seen = true;
    const auto it = opportunities.entries.find({l.student_id, l.problem_id, l.kc_id});
    if (it == opportunities.entries.end()) {
      throw IntegrityError("label (" + l.student_id + ", " + l.problem_id + ", " + l.kc_id +
                           ") has no opportunity count");
    }
    auto& [wrong, total] = by_n[it->second + 1];
    wrong += l.correct ? 0 : 1;
    ++total;
  }
  if (!seen) throw PreconditionError("no labels for KC '" + kc_id + "'");
  LearningCurve curve{kc_id, {}};
  for (const auto& [n, counts] : by_n) {
    if (counts.second < min_support) continue;
    curve.points.push_back({n, static_cast<double>(counts.first) / counts.second, counts.second});
  }
  return curve;
}

std::vector<LearningCurve> empirical_curves(const std::vector<KCLabel>& labels, const OpportunityTable& opportunities,
                                            int min_support) {
  std::set<KcId> kcs;
  for (const auto& l : labels) kcs.insert(l.kc_id);
  std::vector<LearningCurve> out;
  for (const auto& kc : kcs) out.push_back(empirical_curve(labels, kc, opportunities, min_support));
  return out;
}

double PowerLawFit::predict(double n) const { return a * std::pow(n, b); }

double power_law_sse(const LearningCurve& curve, double a, double b) {
  double sse = 0.0;
  for (const auto& p : curve.points) {
    const double r = p.error_rate - a * std::pow(static_cast<double>(p.opportunity), b);
    sse += r * r;
  }
  return sse;
}

double optimal_intercept(const LearningCurve& curve, double b) {
  double num = 0.0, den = 0.0;
  for (const auto& p : curve.points) {
    const double nb = std::pow(static_cast<double>(p.opportunity), b);
    num += p.error_rate * nb;
    den += nb * nb;
  }
  return std::max(0.0, num / den);
}

PowerLawFit fit_power_law(const LearningCurve& curve) {
  if (curve.points.size() < 2) {
    throw PreconditionError("power-law fit for KC '" + curve.kc_id + "' needs at least 2 points, got " +
                            std::to_string(curve.points.size()));
  }
  const auto sse_at = [&](double b) { return power_law_sse(curve, optimal_intercept(curve, b), b); };

  // Coarse scan to bracket the best basin, then golden-section inside it.
  constexpr double lo_b = -10.0, hi_b = 0.0;
  constexpr int grid = 40;
  const double h = (hi_b - lo_b) / grid;
  int best_i = 0;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= grid; ++i) {
    const double s = sse_at(lo_b + i * h);
    if (s < best_sse) {
      best_sse = s;
      best_i = i;
    }
  }
  double lo = lo_b + std::max(0, best_i - 1) * h;
  double hi = lo_b + std::min(grid, best_i + 1) * h;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = sse_at(x1), f2 = sse_at(x2);
  while (hi - lo > 1e-6) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = sse_at(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = sse_at(x2);
    }
  }
  double b = f1 <= f2 ? x1 : x2;
  double sse = std::min(f1, f2);
  const double sse0 = sse_at(0.0);
  if (sse0 <= sse) {
    b = 0.0;
    sse = sse0;
  }

  PowerLawFit fit;
  fit.b = b;
  fit.a = optimal_intercept(curve, b);
  fit.n_points = static_cast<int>(curve.points.size());
  fit.min_n = curve.points.front().opportunity;
  fit.max_n = curve.points.back().opportunity;
  fit.rmse = std::sqrt(sse / fit.n_points);
  double mean = 0.0;
  for (const auto& p : curve.points) mean += p.error_rate;
  mean /= fit.n_points;
  double ss_tot = 0.0;
  for (const auto& p : curve.points) ss_tot += (p.error_rate - mean) * (p.error_rate - mean);
  if (ss_tot == 0.0) {
    fit.r2 = sse <= 1e-18 ? 1.0 : 0.0;
  } else {
    fit.r2 = 1.0 - sse / ss_tot;
  }
  if (!std::isfinite(fit.a) || !std::isfinite(fit.rmse) || !std::isfinite(fit.r2)) {
    throw NumericalError("power-law fit for KC '" + curve.kc_id + "' is not finite");
  }
  return fit;
}

std::vector<AggregatedPoint> aggregate_curves(const std::vector<LearningCurve>& curves,
                                              const std::vector<std::optional<PowerLawFit>>& fits) {
  if (curves.empty()) throw PreconditionError("aggregate_curves: no curves");
  if (fits.size() != curves.size()) throw PreconditionError("aggregate_curves: fits and curves differ in length");
  std::map<int, AggregatedPoint> acc;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    for (const auto& p : curves[i].points) {
      auto& a = acc[p.opportunity];
      a.opportunity = p.opportunity;
      a.empirical += p.error_rate;
      ++a.n_kcs;
      if (fits[i] && fits[i]->covers(p.opportunity)) {
        a.fitted = a.fitted.value_or(0.0) + fits[i]->predict(p.opportunity);
        ++a.n_fitted;
      }
    }
  }
  // Fits also cover opportunities inside their range that a curve skipped.
  for (std::size_t i = 0; i < curves.size(); ++i) {
    if (!fits[i]) continue;
    std::set<int> own;
    for (const auto& p : curves[i].points) own.insert(p.opportunity);
    for (auto& [n, a] : acc) {
      if (own.count(n) || !fits[i]->covers(n)) continue;
      a.fitted = a.fitted.value_or(0.0) + fits[i]->predict(n);
      ++a.n_fitted;
    }
  }
  std::vector<AggregatedPoint> out;
  for (auto& [n, a] : acc) {
    a.empirical /= a.n_kcs;
    if (a.fitted) *a.fitted /= a.n_fitted;
    out.push_back(a);
  }
  return out;
}

LearningCurve aggregated_as_curve(const std::vector<AggregatedPoint>& points) {
  LearningCurve c{"(aggregate)", {}};
  for (const auto& p : points) c.points.push_back({p.opportunity, p.empirical, p.n_kcs});
  return c;
}

csv::Writer curves_writer(const std::vector<LearningCurve>& curves,
                          const std::vector<std::optional<PowerLawFit>>& fits) {
  csv::Writer w({"kc_id", "opportunity", "error_rate", "support", "fitted_error"});
  for (std::size_t i = 0; i < curves.size(); ++i) {
    for (const auto& p : curves[i].points) {
      const bool fitted = i < fits.size() && fits[i];
      w.row({curves[i].kc_id, std::to_string(p.opportunity), format_double(p.error_rate),
             std::to_string(p.support), fitted ? format_double(fits[i]->predict(p.opportunity)) : ""});
    }
  }
  return w;
}

csv::Writer fits_writer(const std::vector<LearningCurve>& curves, const std::vector<std::optional<PowerLawFit>>& fits) {
  csv::Writer w({"kc_id", "a", "b", "rmse", "r2", "n_points"});
  for (std::size_t i = 0; i < curves.size() && i < fits.size(); ++i) {
    if (!fits[i]) continue;
    const auto& f = *fits[i];
    w.row({curves[i].kc_id, format_double(f.a), format_double(f.b), format_double(f.rmse), format_double(f.r2),
           std::to_string(f.n_points)});
  }
  return w;
}

CurvesFile read_curves_csv(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const auto ck = t.column("kc_id"), cn = t.column("opportunity"), ce = t.column("error_rate"),
             cs = t.column("support");
  CurvesFile out;
  out.comments = t.comments;
  std::map<KcId, std::size_t> index;
  for (const auto& row : t.rows) {
    auto [it, inserted] = index.emplace(row[ck], out.curves.size());
    if (inserted) out.curves.push_back({row[ck], {}});
    out.curves[it->second].points.push_back({static_cast<int>(parse_int(row[cn], "opportunity")),
                                             parse_double(row[ce], "error_rate"),
                                             static_cast<int>(parse_int(row[cs], "support"))});
  }
  return out;
}

std::vector<FitRow> read_fits_csv(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const auto ck = t.column("kc_id"), ca = t.column("a"), cb = t.column("b"), cr = t.column("rmse"),
             c2 = t.column("r2"), cn = t.column("n_points");
  std::vector<FitRow> out;
  for (const auto& row : t.rows) {
    PowerLawFit f;
    f.a = parse_double(row[ca], "a");
    f.b = parse_double(row[cb], "b");
    f.rmse = parse_double(row[cr], "rmse");
    f.r2 = parse_double(row[c2], "r2");
    f.n_points = static_cast<int>(parse_int(row[cn], "n_points"));
    out.push_back({row[ck], f});
  }
  return out;
}

// ---- additive factors model ----

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double logit_at(const AfmData& d, const std::vector<double>& x, const AfmObservation& o) {
  return x[d.theta_index(o.student)] + x[d.beta_index(o.kc)] + x[d.gamma_index(o.kc)] * o.prior;
}

void project(const AfmData& d, std::vector<double>& x) {
  for (std::size_t k = 0; k < d.kcs.size(); ++k) x[d.gamma_index(k)] = std::max(0.0, x[d.gamma_index(k)]);
}

double projected_grad_norm(const AfmData& d, const std::vector<double>& x, const std::vector<double>& g) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double gi = g[i];
    if (i >= d.gamma_index(0) && i < d.parameter_count() && x[i] <= 0.0 && gi < 0.0) gi = 0.0;
    m = std::max(m, std::abs(gi));
  }
  return m;
}

}  // namespace

AfmData build_afm_data(const std::vector<KCLabel>& labels, const OpportunityTable& opportunities,
                       const std::set<std::string>* students) {
  std::set<std::string> sids;
  std::set<KcId> kids;
  for (const auto& l : labels) {
    if (students && !students->count(l.student_id)) continue;
    sids.insert(l.student_id);
    kids.insert(l.kc_id);
  }
  AfmData d;
  d.students.assign(sids.begin(), sids.end());
  d.kcs.assign(kids.begin(), kids.end());
  const auto index_of = [](const auto& v, const std::string& key) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), key) - v.begin());
  };
  for (const auto& l : labels) {
    if (students && !students->count(l.student_id)) continue;
    const auto it = opportunities.entries.find({l.student_id, l.problem_id, l.kc_id});
    if (it == opportunities.entries.end()) {
      throw IntegrityError("label (" + l.student_id + ", " + l.problem_id + ", " + l.kc_id +
                           ") has no opportunity count");
    }
    d.observations.push_back({index_of(d.students, l.student_id), index_of(d.kcs, l.kc_id), it->second, l.correct});
  }
  return d;
}

json AFMParams::to_json() const {
  return {{"lambda", lambda}, {"theta", theta}, {"beta", beta}, {"gamma", gamma}};
}

AFMParams AFMParams::from_json(const json& j) {
  try {
    AFMParams p;
    p.lambda = j.at("lambda").get<double>();
    p.theta = j.at("theta").get<std::map<std::string, double>>();
    p.beta = j.at("beta").get<std::map<std::string, double>>();
    p.gamma = j.at("gamma").get<std::map<std::string, double>>();
    return p;
  } catch (const json::exception& e) {
    throw ParseError(std::string("AFM parameters: ") + e.what());
  }
}

double afm_objective(const AfmData& data, const std::vector<double>& x, double lambda) {
  double ll = 0.0;
  for (const auto& o : data.observations) {
    const double z = logit_at(data, x, o);
    ll -= o.correct ? softplus(-z) : softplus(z);
  }
  double sq = 0.0;
  for (double v : x) sq += v * v;
  return ll - lambda * sq;
}

std::vector<double> afm_gradient(const AfmData& data, const std::vector<double>& x, double lambda) {
  std::vector<double> g(x.size(), 0.0);
  for (const auto& o : data.observations) {
    const double r = (o.correct ? 1.0 : 0.0) - sigmoid(logit_at(data, x, o));
    g[data.theta_index(o.student)] += r;
    g[data.beta_index(o.kc)] += r;
    g[data.gamma_index(o.kc)] += r * o.prior;
  }
  for (std::size_t i = 0; i < x.size(); ++i) g[i] -= 2.0 * lambda * x[i];
  return g;
}

AfmFitResult fit_afm(const AfmData& data, const AfmFitOptions& options) {
  if (data.observations.empty()) throw PreconditionError("AFM: empty training set");
  if (options.lambda < 0) throw PreconditionError("AFM: lambda must be >= 0");
  constexpr double armijo = 1e-4;

  std::vector<double> x(data.parameter_count(), 0.0);
  double f = afm_objective(data, x, options.lambda);
  AfmFitResult result;
  result.objective_trace.push_back(f);
  std::vector<double> g = afm_gradient(data, x, options.lambda);
  std::vector<double> x_prev, g_prev;
  double step = 1.0 / std::max<double>(1.0, static_cast<double>(data.observations.size()) / 4.0);

  for (;;) {
    result.grad_norm = projected_grad_norm(data, x, g);
    if (!std::isfinite(result.grad_norm)) throw NumericalError("AFM: non-finite gradient");
    if (result.grad_norm < options.tolerance) {
      result.converged = true;
      break;
    }
    if (result.iterations >= options.max_iter) break;
    if (!x_prev.empty()) {
      double sy = 0.0, ss = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = x[i] - x_prev[i];
        const double y = g_prev[i] - g[i];  // gradient of the negated objective
        sy += s * y;
        ss += s * s;
      }
      step = sy > 0 ? ss / sy : step * 2.0;
    }
    step = std::clamp(step, 1e-12, 1e6);

    std::vector<double> candidate;
    double f_new = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 80; ++tries) {
      candidate = x;
      for (std::size_t i = 0; i < x.size(); ++i) candidate[i] += step * g[i];
      project(data, candidate);
      double ascent = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) ascent += g[i] * (candidate[i] - x[i]);
      f_new = afm_objective(data, candidate, options.lambda);
      if (std::isfinite(f_new) && f_new >= f + armijo * ascent) {
        accepted = true;
        break;
      }
      step /= 2.0;
    }
    if (!accepted) break;
    x_prev = std::move(x);
    g_prev = std::move(g);
    x = std::move(candidate);
    f = f_new;
    g = afm_gradient(data, x, options.lambda);
    result.objective_trace.push_back(f);
    ++result.iterations;
  }
  if (!std::isfinite(f)) throw NumericalError("AFM: non-finite likelihood");

  result.params.lambda = options.lambda;
  for (std::size_t s = 0; s < data.students.size(); ++s) result.params.theta[data.students[s]] = x[data.theta_index(s)];
  for (std::size_t k = 0; k < data.kcs.size(); ++k) {
    result.params.beta[data.kcs[k]] = x[data.beta_index(k)];
    result.params.gamma[data.kcs[k]] = x[data.gamma_index(k)];
  }
  return result;
}

double afm_predict(const AFMParams& params, const std::string& student_id, const std::vector<KcId>& kc_ids,
                   const std::vector<int>& prior_values) {
  if (kc_ids.empty()) throw PreconditionError("afm_predict: no KCs");
  if (kc_ids.size() != prior_values.size()) throw PreconditionError("afm_predict: KC and T lists differ in length");
  const auto th = params.theta.find(student_id);
  double z = th == params.theta.end() ? 0.0 : th->second;
  for (std::size_t i = 0; i < kc_ids.size(); ++i) {
    const auto b = params.beta.find(kc_ids[i]);
    const auto g = params.gamma.find(kc_ids[i]);
    if (b == params.beta.end() || g == params.gamma.end()) {
      throw NotFoundError("afm_predict: unknown KC '" + kc_ids[i] + "'");
    }
    z += b->second + g->second * prior_values[i];
  }
  return sigmoid(z);
}

double afm_mean_error(const AFMParams& params, const std::vector<std::string>& students, const KcId& kc_id, int n) {
  if (students.empty()) return 1.0 - afm_predict(params, "", {kc_id}, {n - 1});
  double sum = 0.0;
  for (const auto& s : students) sum += 1.0 - afm_predict(params, s, {kc_id}, {n - 1});
  return sum / static_cast<double>(students.size());
}

double auc(const std::vector<double>& scores, const std::vector<bool>& truth) {
  if (scores.size() != truth.size()) throw PreconditionError("auc: scores and truth differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (truth[order[t]]) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw PreconditionError("auc: both classes must be present");
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

StudentSplit split_students(std::vector<std::string> students, double train_fraction, std::uint64_t seed) {
  std::sort(students.begin(), students.end());
  students.erase(std::unique(students.begin(), students.end()), students.end());
  if (students.size() < 2) throw PreconditionError("student split needs at least 2 students");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw PreconditionError("train fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  rng.shuffle(students);
  const auto n = static_cast<long>(students.size());
  const long n_train = std::clamp(std::lround(train_fraction * static_cast<double>(n)), 1L, n - 1);
  StudentSplit split;
  split.train.assign(students.begin(), students.begin() + n_train);
  split.test.assign(students.begin() + n_train, students.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

json AfmEvaluation::to_json() const {
  json j;
  j["auc"] = auc ? json(*auc) : json(nullptr);
  j["n_test_observations"] = n_test_observations;
  j["split_seed"] = split_seed;
  j["n_train_students"] = split.train.size();
  j["n_test_students"] = split.test.size();
  j["n_skipped_observations"] = n_skipped_observations;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  return j;
}

AfmEvaluation evaluate_afm(const std::vector<KCLabel>& labels, const OpportunityTable& opportunities,
                           const AfmEvalOptions& options) {
  std::vector<std::string> students;
  for (const auto& l : labels) students.push_back(l.student_id);
  AfmEvaluation ev;
  ev.split_seed = options.seed;
  ev.split = split_students(std::move(students), options.train_fraction, options.seed);
  const std::set<std::string> train(ev.split.train.begin(), ev.split.train.end());
  const std::set<std::string> test(ev.split.test.begin(), ev.split.test.end());
  ev.fit = fit_afm(build_afm_data(labels, opportunities, &train), options.fit);

  std::vector<double> scores;
  std::vector<bool> truth;
  for (const auto& l : labels) {
    if (!test.count(l.student_id)) continue;
    if (!ev.fit.params.beta.count(l.kc_id)) {
      ++ev.n_skipped_observations;
      continue;
    }
    scores.push_back(afm_predict(ev.fit.params, l.student_id, {l.kc_id}, {opportunities.prior(l.student_id, l.problem_id, l.kc_id)}));
    truth.push_back(l.correct);
  }
  ev.n_test_observations = scores.size();
  const auto pos = std::count(truth.begin(), truth.end(), true);
  if (pos > 0 && pos < static_cast<long>(truth.size())) ev.auc = auc(scores, truth);
  return ev;
}

}  // namespace kclab
