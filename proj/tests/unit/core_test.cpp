#include <doctest.h>

#include "kclab/core.hpp"
#include "kclab/error.hpp"
#include "kclab/util/random.hpp"
#include "support/synthetic.hpp"

using namespace kclab;

namespace {

Submission sub(const std::string& id, const std::string& s, const std::string& p, int attempt, int minute,
               double score = 1.0) {
  Submission x;
  x.submission_id = id;
  x.student_id = s;
  x.problem_id = p;
  x.attempt_index = attempt;
  x.timestamp = Timestamp(std::chrono::minutes(minute));
  x.score = score;
  x.code = "x";
  return x;
}

}  // namespace

TEST_CASE("attempt pairs take the first and last attempt") {
  const std::vector<Submission> subs = {sub("c", "s1", "p1", 2, 5, 1.0), sub("a", "s1", "p1", 1, 1, 0.0),
                                        sub("b", "s2", "p1", 1, 3), sub("d", "s1", "p2", 1, 0)};
  const auto pairs = build_attempt_pairs(subs);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].student_id == "s1");
  CHECK(pairs[0].problem_id == "p1");
  CHECK(pairs[0].first.submission_id == "a");
  CHECK(pairs[0].last.submission_id == "c");
  CHECK(pairs[1].problem_id == "p2");
  CHECK(pairs[1].first.submission_id == pairs[1].last.submission_id);
  CHECK(pairs[2].student_id == "s2");
}

TEST_CASE("attempt pairs reject gaps and duplicates") {
  CHECK_THROWS_AS(build_attempt_pairs({sub("a", "s", "p", 1, 0), sub("b", "s", "p", 3, 1)}), ValidationError);
  CHECK_THROWS_AS(build_attempt_pairs({sub("a", "s", "p", 1, 0), sub("b", "s", "p", 1, 1)}), ValidationError);
  CHECK_THROWS_AS(build_attempt_pairs({}), PreconditionError);
}

TEST_CASE("problem correctness threshold") {
  const auto s = sub("a", "s", "p", 1, 0, 0.75);
  CHECK_FALSE(is_problem_correct(s));
  CHECK(is_problem_correct(s, 0.75));
  CHECK_THROWS_AS(is_problem_correct(s, 0.0), PreconditionError);
  CHECK_THROWS_AS(is_problem_correct(s, 1.5), PreconditionError);
}

TEST_CASE("kc set lookup and validation") {
  KCSet set{"h", KcSetKind::human, {{"k1", "One", "d", KcOrigin::human}, {"k2", "Two", "d", KcOrigin::human}}};
  CHECK(set.at("k2").name == "Two");
  CHECK(set.find("zz") == nullptr);
  CHECK_THROWS_AS(set.at("zz"), NotFoundError);
  set.validate();
  set.components.push_back({"k1", "Dup", "d", KcOrigin::human});
  CHECK_THROWS_AS(set.validate(), ValidationError);
  CHECK_THROWS_AS(KCSet{}.validate(), ValidationError);
}

TEST_CASE("enum string round trips") {
  for (auto k : {KcSetKind::human, KcSetKind::generated, KcSetKind::selected}) {
    CHECK(parse_kc_set_kind(to_string(k)) == k);
  }
  for (auto o : {KcOrigin::human, KcOrigin::generated}) CHECK(parse_kc_origin(to_string(o)) == o);
  CHECK_THROWS_AS(parse_kc_set_kind("nope"), ParseError);
}

TEST_CASE("opportunity counts match a brute-force count of earlier exposures") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto q = testing::round_robin_qmatrix(3 + rng.below(6), 2 + rng.below(4), 1 + rng.below(2));
    std::vector<Submission> subs;
    int id = 0;
    for (int s = 0; s < 4; ++s) {
      for (const auto& [p, _] : q.entries) {
        if (rng.below(4) == 0) continue;
        // Ties in time are broken by problem id.
        subs.push_back(sub(std::to_string(id++), "s" + std::to_string(s), p, 1, static_cast<int>(rng.below(5))));
      }
    }
    if (subs.empty()) continue;
    const auto pairs = build_attempt_pairs(subs);
    const auto table = opportunity_counts(pairs, q);
    for (const auto& a : pairs) {
      for (const auto& k : q.entries.at(a.problem_id)) {
        int expect = 0;
        for (const auto& b : pairs) {
          if (b.student_id != a.student_id || !q.entries.at(b.problem_id).count(k)) continue;
          const bool earlier = b.first.timestamp < a.first.timestamp ||
                               (b.first.timestamp == a.first.timestamp && b.problem_id < a.problem_id);
          expect += earlier ? 1 : 0;
        }
        CHECK(table.prior(a.student_id, a.problem_id, k) == expect);
        CHECK(table.opportunity(a.student_id, a.problem_id, k) == expect + 1);
      }
    }
  }
}

TEST_CASE("opportunity counts require a KC entry for every pair") {
  QMatrix q;
  q.entries["p1"] = {"k"};
  const auto pairs = build_attempt_pairs({sub("a", "s", "p1", 1, 0), sub("b", "s", "p2", 1, 1)});
  CHECK_THROWS_AS(opportunity_counts(pairs, q), IntegrityError);
  CodeKCMap m;
  m.entries[{"s", "p1"}] = {"k"};
  m.entries[{"s", "p2"}] = {"k", "j"};
  const auto t = opportunity_counts(pairs, m);
  CHECK(t.prior("s", "p2", "k") == 1);
  CHECK(t.prior("s", "p2", "j") == 0);
  CHECK_THROWS_AS(t.prior("s", "p1", "j"), NotFoundError);
}
