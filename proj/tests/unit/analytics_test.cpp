#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "kclab/analytics.hpp"
#include "kclab/error.hpp"
#include "kclab/util/files.hpp"
#include "kclab/util/random.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;
using namespace kclab;

namespace {

LearningCurve curve(std::vector<double> errors, int first = 1) {
  LearningCurve c{"k", {}};
  for (std::size_t i = 0; i < errors.size(); ++i) c.points.push_back({first + static_cast<int>(i), errors[i], 10});
  return c;
}

/// Dense scan over b with the intercept solved independently.
double brute_force_sse(const LearningCurve& c) {
  double best = 1e300;
  for (int i = 0; i <= 100000; ++i) {
    const double b = -10.0 + 1e-4 * i;
    double num = 0, den = 0;
    for (const auto& p : c.points) {
      num += p.error_rate * std::pow(p.opportunity, b);
      den += std::pow(p.opportunity, 2 * b);
    }
    const double a = std::max(0.0, num / den);
    double s = 0;
    for (const auto& p : c.points) s += std::pow(p.error_rate - a * std::pow(p.opportunity, b), 2);
    best = std::min(best, s);
  }
  return best;
}

/// Plain full-batch gradient ascent, written separately from the library.
std::vector<double> reference_afm(const AfmData& d, double lambda) {
  std::vector<double> x(d.parameter_count(), 0.0);
  for (int it = 0; it < 60000; ++it) {
    std::vector<double> g(x.size(), 0.0);
    for (const auto& o : d.observations) {
      const double z = x[d.theta_index(o.student)] + x[d.beta_index(o.kc)] + x[d.gamma_index(o.kc)] * o.prior;
      const double r = (o.correct ? 1.0 : 0.0) - 1.0 / (1.0 + std::exp(-z));
      g[d.theta_index(o.student)] += r;
      g[d.beta_index(o.kc)] += r;
      g[d.gamma_index(o.kc)] += r * o.prior;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += 0.02 * (g[i] - 2 * lambda * x[i]);
      if (i >= d.gamma_index(0)) x[i] = std::max(0.0, x[i]);
    }
  }
  return x;
}

KCLabel label(const std::string& s, const std::string& p, const std::string& k, bool correct) {
  return {s, p, k, true, correct, "", LabelMethod::llm_cot};
}

}  // namespace

TEST_CASE("empirical curve by hand") {
  OpportunityTable opp;
  std::vector<KCLabel> labels;
  // Three students with two opportunities each on k.
  for (const char* s : {"s1", "s2", "s3"}) {
    opp.entries[{s, "p1", "k"}] = 0;
    opp.entries[{s, "p2", "k"}] = 1;
  }
  labels = {label("s1", "p1", "k", false), label("s2", "p1", "k", false), label("s3", "p1", "k", true),
            label("s1", "p2", "k", true),  label("s2", "p2", "k", true),  label("s3", "p2", "k", false)};
  const auto c = empirical_curve(labels, "k", opp, 1);
  REQUIRE(c.points.size() == 2);
  CHECK(c.points[0] == CurvePoint{1, 2.0 / 3.0, 3});
  CHECK(c.points[1] == CurvePoint{2, 1.0 / 3.0, 3});
  CHECK(empirical_curve(labels, "k", opp, 4).points.empty());
  CHECK_THROWS_AS(empirical_curve(labels, "zz", opp, 1), PreconditionError);
  labels.push_back(label("s9", "p1", "k", true));
  CHECK_THROWS_AS(empirical_curve(labels, "k", opp, 1), IntegrityError);
}

TEST_CASE("power-law fit matches a dense brute-force scan") {
  Rng rng(13);
  for (int i = 0; i < 25; ++i) {
    std::vector<double> e(3 + rng.below(6));
    for (auto& v : e) v = rng.uniform01();
    const auto c = curve(e);
    const auto fit = fit_power_law(c);
    CHECK(power_law_sse(c, fit.a, fit.b) <= brute_force_sse(c) + 1e-9);
    CHECK(fit.b <= 0.0);
    CHECK(fit.a >= 0.0);
  }
}

TEST_CASE("power-law fit statistics") {
  const auto c = curve({0.5, 0.25, 0.2, 0.1});
  const auto fit = fit_power_law(c);
  const double sse = power_law_sse(c, fit.a, fit.b);
  CHECK(fit.rmse == doctest::Approx(std::sqrt(sse / 4)));
  const double mean = (0.5 + 0.25 + 0.2 + 0.1) / 4;
  double tot = 0;
  for (double v : {0.5, 0.25, 0.2, 0.1}) tot += (v - mean) * (v - mean);
  CHECK(fit.r2 == doctest::Approx(1 - sse / tot));
  CHECK(fit.min_n == 1);
  CHECK(fit.max_n == 4);
  CHECK(fit.predict(2) == doctest::Approx(fit.a * std::pow(2.0, fit.b)));
}

TEST_CASE("power-law edge cases") {
  const auto flat = fit_power_law(curve({0.3, 0.3, 0.3}));
  CHECK(flat.b == 0.0);
  CHECK(flat.a == doctest::Approx(0.3));
  CHECK(flat.r2 == 1.0);
  const auto zero = fit_power_law(curve({0.0, 0.0}));
  CHECK(zero.a == 0.0);
  const auto rising = fit_power_law(curve({0.1, 0.2, 0.3, 0.4}));
  CHECK(rising.b == 0.0);
  CHECK(rising.a == doctest::Approx(0.25));
  CHECK_THROWS_AS(fit_power_law(curve({0.5})), PreconditionError);
}

TEST_CASE("optimal intercept is the least-squares solution") {
  const auto c = curve({0.6, 0.4, 0.35});
  for (double b : {-1.5, -0.5, 0.0}) {
    const double a = optimal_intercept(c, b);
    CHECK(power_law_sse(c, a, b) <= power_law_sse(c, a + 1e-4, b));
    CHECK(power_law_sse(c, a, b) <= power_law_sse(c, a - 1e-4, b));
  }
  CHECK(optimal_intercept(curve({0.0, 0.0}), -1) == 0.0);
}

TEST_CASE("aggregation averages curves and covering fits") {
  const auto c1 = curve({0.6, 0.4, 0.2});
  auto c2 = curve({0.8, 0.6});
  c2.kc_id = "k2";
  const auto f1 = fit_power_law(c1);
  const auto f2 = fit_power_law(c2);
  const auto agg = aggregate_curves({c1, c2}, {f1, f2});
  REQUIRE(agg.size() == 3);
  CHECK(agg[0].empirical == doctest::Approx(0.7));
  CHECK(agg[0].n_kcs == 2);
  CHECK(*agg[0].fitted == doctest::Approx((f1.predict(1) + f2.predict(1)) / 2));
  CHECK(agg[2].n_kcs == 1);
  CHECK(agg[2].n_fitted == 1);
  CHECK(*agg[2].fitted == doctest::Approx(f1.predict(3)));
  const auto none = aggregate_curves({c1, c2}, {std::nullopt, std::nullopt});
  CHECK_FALSE(none[0].fitted);
  CHECK(aggregated_as_curve(agg).points.size() == 3);
  CHECK_THROWS_AS(aggregate_curves({}, {}), PreconditionError);
}

TEST_CASE("curve and fit csv round trip") {
  const auto dir = fs::temp_directory_path() / "kclab_curves_csv";
  fs::remove_all(dir);
  auto c1 = curve({0.6, 0.4, 0.2});
  auto c2 = curve({0.7});
  c2.kc_id = "k2";
  const std::vector<std::optional<PowerLawFit>> fits = {fit_power_law(c1), std::nullopt};
  write_file_atomic(dir / "curves.csv", curves_writer({c1, c2}, fits).str());
  write_file_atomic(dir / "fits.csv", fits_writer({c1, c2}, fits).str());
  const auto back = read_curves_csv(dir / "curves.csv");
  REQUIRE(back.curves.size() == 2);
  CHECK(back.curves[0] == c1);
  CHECK(back.curves[1] == c2);
  const auto rows = read_fits_csv(dir / "fits.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].kc_id == "k");
  CHECK(rows[0].fit.b == fits[0]->b);
  fs::remove_all(dir);
}

TEST_CASE("AFM matches an independent gradient-ascent solution") {
  const auto q = testing::round_robin_qmatrix(6, 3, 1);
  const auto sim = testing::simulate_afm(12, q, 0.5, 77);
  const auto data = build_afm_data(sim.labels, sim.opportunities);
  CHECK(data.students.size() == 12);
  CHECK(data.kcs.size() == 3);
  AfmFitOptions options;
  options.lambda = 0.5;
  options.tolerance = 1e-8;
  options.max_iter = 5000;
  const auto fit = fit_afm(data, options);
  CHECK(fit.converged);
  const auto ref = reference_afm(data, 0.5);
  for (std::size_t s = 0; s < data.students.size(); ++s) {
    CHECK(fit.params.theta.at(data.students[s]) == doctest::Approx(ref[data.theta_index(s)]).epsilon(1e-4));
  }
  for (std::size_t k = 0; k < data.kcs.size(); ++k) {
    CHECK(fit.params.beta.at(data.kcs[k]) == doctest::Approx(ref[data.beta_index(k)]).epsilon(1e-4));
    CHECK(fit.params.gamma.at(data.kcs[k]) == doctest::Approx(ref[data.gamma_index(k)]).epsilon(1e-4));
  }
}

TEST_CASE("AFM objective never decreases and gammas stay non-negative") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const auto q = testing::round_robin_qmatrix(8, 4, 2);
    // Negative true learning rates push the projection to work.
    const auto sim = testing::simulate_afm(30, q, trial % 2 ? -0.3 : 0.3, rng.next());
    const auto fit = fit_afm(build_afm_data(sim.labels, sim.opportunities));
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
      CHECK(fit.objective_trace[i] >= fit.objective_trace[i - 1] - 1e-12);
    }
    for (const auto& [_, g] : fit.params.gamma) CHECK(g >= 0.0);
    CHECK(fit.params.lambda == kDefaultAfmLambda);
  }
}

TEST_CASE("AFM input checks") {
  CHECK_THROWS_AS(fit_afm(AfmData{}), PreconditionError);
  const auto q = testing::round_robin_qmatrix(3, 2, 1);
  const auto sim = testing::simulate_afm(3, q, 0.1, 1);
  const auto data = build_afm_data(sim.labels, sim.opportunities);
  AfmFitOptions bad;
  bad.lambda = -1;
  CHECK_THROWS_AS(fit_afm(data, bad), PreconditionError);
  const std::set<std::string> only{"s000"};
  CHECK(build_afm_data(sim.labels, sim.opportunities, &only).students.size() == 1);
}

TEST_CASE("AFM predictions by hand") {
  AFMParams p;
  p.theta = {{"s", 0.5}};
  p.beta = {{"a", -1.0}, {"b", 0.25}};
  p.gamma = {{"a", 0.2}, {"b", 0.0}};
  const double z = 0.5 - 1.0 + 0.2 * 3 + 0.25;
  CHECK(afm_predict(p, "s", {"a", "b"}, {3, 7}) == doctest::Approx(1 / (1 + std::exp(-z))));
  CHECK(afm_predict(p, "new", {"a"}, {0}) == doctest::Approx(1 / (1 + std::exp(1.0))));
  CHECK_THROWS_AS(afm_predict(p, "s", {"c"}, {0}), NotFoundError);
  CHECK_THROWS_AS(afm_predict(p, "s", {"a"}, {0, 1}), PreconditionError);
  CHECK(afm_mean_error(p, {"s"}, "a", 1) == doctest::Approx(1 - afm_predict(p, "s", {"a"}, {0})));
  const auto back = AFMParams::from_json(p.to_json());
  CHECK(back.theta == p.theta);
  CHECK(back.gamma == p.gamma);
  CHECK_THROWS_AS(AFMParams::from_json(nlohmann::json::object()), ParseError);
}

TEST_CASE("auc by hand") {
  CHECK(auc({0.9, 0.8, 0.1}, {true, true, false}) == 1.0);
  CHECK(auc({0.1, 0.8, 0.9}, {true, false, false}) == 0.0);
  CHECK(auc({0.5, 0.5}, {true, false}) == 0.5);
  CHECK(auc({0.2, 0.6, 0.6, 0.9}, {false, true, false, true}) == doctest::Approx(0.875));
  CHECK_THROWS_AS(auc({0.5, 0.5}, {true, true}), PreconditionError);
  CHECK_THROWS_AS(auc({0.5}, {true, false}), PreconditionError);
}

TEST_CASE("student split is a deterministic partition") {
  std::vector<std::string> students;
  for (int i = 0; i < 37; ++i) students.push_back(testing::padded("s", static_cast<std::size_t>(i)));
  auto dup = students;
  dup.insert(dup.end(), students.begin(), students.begin() + 5);
  const auto a = split_students(dup, 0.8, 3);
  const auto b = split_students(students, 0.8, 3);
  CHECK(a.train == b.train);
  CHECK(a.train.size() == 30);
  CHECK(a.test.size() == 7);
  std::set<std::string> all(a.train.begin(), a.train.end());
  for (const auto& s : a.test) CHECK(all.insert(s).second);
  CHECK(all.size() == 37);
  CHECK(split_students(students, 0.8, 4).train != a.train);
  CHECK(split_students({"x", "y"}, 0.99, 1).test.size() == 1);
  CHECK_THROWS_AS(split_students({"x"}, 0.5, 1), PreconditionError);
  CHECK_THROWS_AS(split_students(students, 1.0, 1), PreconditionError);
}

TEST_CASE("evaluate_afm reports skipped and single-class test sets") {
  const auto q = testing::round_robin_qmatrix(6, 3, 1);
  auto sim = testing::simulate_afm(20, q, 0.3, 9);
  AfmEvalOptions options;
  options.seed = 5;
  const auto ev = evaluate_afm(sim.labels, sim.opportunities, options);
  CHECK(ev.split.test.size() == 4);
  CHECK(ev.n_test_observations == 24);
  CHECK(ev.to_json().at("split_seed") == 5);

  // Only a training student ever fails, so the test set is single-class.
  const auto& trainee = ev.split.train.front();
  for (auto& l : sim.labels) l.correct = l.student_id != trainee;
  const auto mono = evaluate_afm(sim.labels, sim.opportunities, options);
  CHECK_FALSE(mono.auc);
  CHECK(mono.to_json().at("auc").is_null());
}
