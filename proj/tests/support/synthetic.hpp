#pragma once

// Synthetic data generators shared by the unit and acceptance tests. Every
// generator is seeded and computes opportunity counts on its own, so the
// results can serve as oracles for the library code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "kclab/analytics.hpp"
#include "kclab/core.hpp"
#include "kclab/ingestion.hpp"
#include "kclab/labeling.hpp"
#include "kclab/util/random.hpp"

namespace kclab::testing {

inline std::string padded(const char* prefix, std::size_t i, int width = 3) {
  std::string n = std::to_string(i);
  while (static_cast<int>(n.size()) < width) n = "0" + n;
  return prefix + n;
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Problems each exercising `kcs_per_problem` distinct KCs, chosen round-robin
/// so every KC appears about equally often. When kcs is a multiple of
/// kcs_per_problem the same KC groups repeat on every problem.
inline QMatrix round_robin_qmatrix(std::size_t problems, std::size_t kcs, std::size_t kcs_per_problem) {
  QMatrix q;
  std::size_t next = 0;
  for (std::size_t p = 0; p < problems; ++p) {
    auto& set = q.entries[padded("p", p)];
    while (set.size() < kcs_per_problem) set.insert(padded("k", next++ % kcs, 2));
  }
  return q;
}

struct SyntheticLabels {
  std::vector<KCLabel> labels;
  OpportunityTable opportunities;
  std::map<std::string, double> theta;
  std::map<std::string, double> beta;
  std::map<std::string, double> gamma;
};

/// Every student answers every problem once, in a student-specific random
/// order; each (problem, KC) yields one Bernoulli label drawn from the AFM.
inline SyntheticLabels simulate_afm(std::size_t students, const QMatrix& q, double gamma, std::uint64_t seed,
                                    double theta_sd = 1.0, double beta_sd = 0.7) {
  Rng rng(seed);
  SyntheticLabels out;
  std::set<std::string> kcs;
  for (const auto& [_, set] : q.entries) kcs.insert(set.begin(), set.end());
  for (const auto& k : kcs) {
    out.beta[k] = beta_sd * rng.normal() - 0.5;
    out.gamma[k] = gamma;
  }
  std::vector<std::string> problems;
  for (const auto& [p, _] : q.entries) problems.push_back(p);
  for (std::size_t s = 0; s < students; ++s) {
    const auto sid = padded("s", s);
    out.theta[sid] = theta_sd * rng.normal();
    auto order = problems;
    rng.shuffle(order);
    std::map<std::string, int> seen;
    for (const auto& p : order) {
      for (const auto& k : q.entries.at(p)) {
        const int t = seen[k];
        const double pr = logistic(out.theta[sid] + out.beta[k] + gamma * t);
        const bool correct = rng.uniform01() < pr;
        out.labels.push_back({sid, p, k, true, correct, "", LabelMethod::llm_cot});
        out.opportunities.entries[{sid, p, k}] = t;
      }
      for (const auto& k : q.entries.at(p)) ++seen[k];
    }
  }
  return out;
}

/// Dataset whose students master a KC once their exposure count reaches a
/// personal threshold. Each submission's code starts with a marker line
/// "// sid=<student> pid=<problem>" so scripted providers can look up truth.
struct MasteryWorld {
  DatasetBundle bundle;
  QMatrix q;
  KCSet kcs;
  std::map<std::string, int> threshold;                       // per student
  std::map<OpportunityKey, bool> kc_correct;                  // truth per exposure
};

inline MasteryWorld mastery_world(std::size_t students, std::size_t problems, std::size_t n_kcs,
                                  std::size_t kcs_per_problem, std::uint64_t seed) {
  Rng rng(seed);
  MasteryWorld w;
  w.q = round_robin_qmatrix(problems, n_kcs, kcs_per_problem);
  w.kcs.set_id = "synthetic";
  for (std::size_t k = 0; k < n_kcs; ++k) {
    const auto id = padded("k", k, 2);
    w.kcs.components.push_back({id, "Skill " + id, "Synthetic skill number " + std::to_string(k) + ".", KcOrigin::human});
  }
  for (const auto& [p, _] : w.q.entries) {
    w.bundle.problems.push_back({p, "Synthetic problem " + p + ".", {}});
  }
  std::vector<std::string> order;
  for (const auto& [p, _] : w.q.entries) order.push_back(p);
  std::size_t sub = 0;
  for (std::size_t s = 0; s < students; ++s) {
    const auto sid = padded("s", s);
    // Thresholds concentrate on small counts with a long tail.
    int tau = 0;
    while (rng.uniform01() < 0.6 && tau < 12) ++tau;
    w.threshold[sid] = tau;
    auto mine = order;
    rng.shuffle(mine);
    std::map<std::string, int> seen;
    for (std::size_t j = 0; j < mine.size(); ++j) {
      const auto& p = mine[j];
      int correct = 0;
      for (const auto& k : w.q.entries.at(p)) {
        const bool ok = seen[k] >= tau;
        w.kc_correct[{sid, p, k}] = ok;
        correct += ok ? 1 : 0;
      }
      for (const auto& k : w.q.entries.at(p)) ++seen[k];
      Submission su;
      su.submission_id = padded("sub", sub++, 5);
      su.student_id = sid;
      su.problem_id = p;
      su.attempt_index = 1;
      su.timestamp = Timestamp(std::chrono::milliseconds((static_cast<long long>(s) * 1000 + static_cast<long long>(j)) * 60000));
      su.score = static_cast<double>(correct) / static_cast<double>(w.q.entries.at(p).size());
      su.code = "// sid=" + sid + " pid=" + p + "\nreturn 0;";
      w.bundle.submissions.push_back(std::move(su));
    }
  }
  std::sort(w.bundle.submissions.begin(), w.bundle.submissions.end(), [](const Submission& a, const Submission& b) {
    return std::tie(a.student_id, a.problem_id, a.attempt_index) < std::tie(b.student_id, b.problem_id, b.attempt_index);
  });
  w.bundle.kc_sets.push_back(w.kcs);
  w.bundle.q_matrices.push_back(w.q);
  return w;
}

/// Reads the "// sid=... pid=..." marker from the last user turn of a prompt.
inline std::pair<std::string, std::string> marker_of(const std::string& text) {
  const auto at = text.rfind("// sid=");
  if (at == std::string::npos) return {};
  const auto sp = text.find(' ', at + 7);
  const auto pid = text.find("pid=", at);
  const auto eol = text.find('\n', pid);
  return {text.substr(at + 7, sp - (at + 7)), text.substr(pid + 4, eol - (pid + 4))};
}

}  // namespace kclab::testing
