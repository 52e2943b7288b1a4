#include <doctest.h>

#include <nlohmann/json.hpp>

#include "kclab/error.hpp"
#include "kclab/kc_pipeline.hpp"
#include "kclab/prompts.hpp"

using nlohmann::json;
using namespace kclab;
using namespace kclab::llm;

namespace {

Submission solution(const std::string& id, const std::string& problem, const std::string& code = "code") {
  Submission s;
  s.submission_id = id;
  s.student_id = "s_" + id;
  s.problem_id = problem;
  s.score = 1.0;
  s.code = code;
  return s;
}

struct Harness {
  PromptLibrary prompts = PromptLibrary::builtin();
  std::shared_ptr<ScriptedProvider> provider;
  Gateway gateway;
  LlmContext ctx;

  explicit Harness(ScriptedProvider::Handler h)
      : provider(std::make_shared<ScriptedProvider>(std::move(h))),
        gateway(provider, GatewayOptions{RetryPolicy{0, std::chrono::milliseconds(0)}, 2, std::nullopt}),
        ctx{gateway, prompts, "m"} {}

};

}  // namespace

TEST_CASE("exemplars: all solutions when k covers them") {
  EmbeddingStore store({{"a", {1, 0}}, {"b", {0, 1}}});
  const Problem p{"p", "stmt", {}};
  const auto set = select_exemplars(p, {solution("b", "p"), solution("a", "p")}, 5, 1, store);
  CHECK(set.ids() == std::vector<std::string>{"a", "b"});
  CHECK_THROWS_AS(select_exemplars(p, {}, 5, 1, store), PreconditionError);
  CHECK_THROWS_AS(select_exemplars(p, {solution("a", "q")}, 5, 1, store), PreconditionError);
  CHECK_THROWS_AS(select_exemplars(p, {solution("zz", "p")}, 5, 1, store), NotFoundError);
}

TEST_CASE("exemplars: one medoid-like member per cluster") {
  // Two tight groups; the member nearest each centroid is the middle one.
  EmbeddingStore store({{"a1", {1, 0}}, {"a2", {1, 1}}, {"a3", {1, 2}}, {"b1", {10, 0}}, {"b2", {10, 1}}, {"b3", {10, 2}}});
  const Problem p{"p", "stmt", {}};
  std::vector<Submission> subs;
  for (const char* id : {"a1", "a2", "a3", "b1", "b2", "b3"}) subs.push_back(solution(id, "p"));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto set = select_exemplars(p, subs, 2, seed, store);
    CHECK(set.ids() == std::vector<std::string>{"a2", "b2"});
  }
}

TEST_CASE("candidate generation parses and retries once") {
  int calls = 0;
  Harness h([&](const ChatRequest&) {
    ++calls;
    if (calls == 1) return std::string("sorry, here: [{\"name\": \"Loops\"}]");
    return std::string("```json\n[{\"name\": \"Loops\", \"description\": \"Iterate\"},"
                       " {\"name\": \"Sums\", \"description\": \"Accumulate\"}]\n```");
  });
  const auto out = generate_candidate_kcs(h.ctx, Problem{"p", "Add numbers", {}}, "int s=0;");
  REQUIRE(out.size() == 2);
  CHECK(out[0].problem_id == "p");
  CHECK(out[1].clustering_text() == "Sums: Accumulate");
  CHECK(calls == 2);

  Harness empty([](const ChatRequest&) { return std::string("[]"); });
  CHECK(generate_candidate_kcs(empty.ctx, Problem{"p", "x", {}}, "y").empty());
}

TEST_CASE("consolidation yields exactly target_n KCs and a consistent Q-matrix") {
  Harness h([&](const ChatRequest& r) {
    const auto& text = r.messages[1].content;
    const std::string name = text.find("loop") != std::string::npos ? "Looping" : "Strings";
    return json{{"name", name}, {"description", "summary of " + name}}.dump();
  });
  const std::vector<CandidateKC> cands = {{"p1", "for loop", "iterate with a for loop"},
                                          {"p2", "while loop", "iterate with a while loop"},
                                          {"p2", "string concat", "join string pieces"},
                                          {"p3", "string split", "split a string on spaces"}};
  HashedTextEmbedder embedder(128);
  const auto c = consolidate_kcs(h.ctx, cands, 2, 3, embedder);
  REQUIRE(c.kcs.components.size() == 2);
  CHECK(c.kcs.components[0].kc_id == "G01");
  CHECK(c.kcs.components[1].kc_id == "G02");
  CHECK(c.kcs.kind == KcSetKind::generated);
  REQUIRE(c.cluster_of.size() == 4);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto& id = c.kcs.components[static_cast<std::size_t>(c.cluster_of[i])].kc_id;
    CHECK(c.qmatrix.entries.at(cands[i].problem_id).count(id) == 1);
  }
  CHECK(h.provider->calls() == 2);
  CHECK_THROWS_AS(consolidate_kcs(h.ctx, cands, 5, 3, embedder), PreconditionError);
}

TEST_CASE("exemplar profiles reject ids outside the problem's KCs") {
  EmbeddingStore store({{"e1", {1, 0}}});
  const std::vector<KnowledgeComponent> kcs = {{"G01", "Loops", "d", KcOrigin::generated},
                                               {"G02", "Sums", "d", KcOrigin::generated}};
  int calls = 0;
  Harness h([&](const ChatRequest&) { return ++calls == 1 ? std::string("[\"G09\"]") : std::string("[\"G02\"]"); });
  const auto prof = profile_exemplar(h.ctx, Problem{"p", "s", {}}, solution("e1", "p"), kcs, store);
  CHECK(prof.kc_subset == KcIdSet{"G02"});
  CHECK(prof.embedding.id == "e1");

  Harness never([](const ChatRequest&) { return std::string("[]"); });
  CHECK_THROWS_AS(profile_exemplar(never.ctx, Problem{"p", "s", {}}, solution("e1", "p"), kcs, store), ParseError);
  CHECK_THROWS_AS(profile_exemplar(never.ctx, Problem{"p", "s", {}}, solution("e1", "p"), {}, store),
                  PreconditionError);
}

TEST_CASE("students map to the nearest exemplar's KC subset") {
  EmbeddingStore store({{"ex_a", {1, 0}}, {"ex_b", {0, 1}}, {"ex_c", {0, 2}}, {"last1", {0.9, 0.2}}, {"last2", {0.1, 1}}});
  std::vector<ExemplarKCProfile> profiles = {{"p", "ex_b", {"K2"}, store.get_embedding("ex_b")},
                                             {"p", "ex_a", {"K1"}, store.get_embedding("ex_a")},
                                             {"p", "ex_c", {"K3"}, store.get_embedding("ex_c")}};
  AttemptPair pair{"s", "p", solution("first", "p"), solution("last1", "p")};
  auto [key, kcs] = map_student_to_kcs(pair, profiles, store);
  CHECK(key.student_id == "s");
  CHECK(kcs == KcIdSet{"K1"});
  pair.last.submission_id = "last2";
  // ex_b and ex_c point the same way; the smaller id wins.
  CHECK(map_student_to_kcs(pair, profiles, store).second == KcIdSet{"K2"});
  CHECK_THROWS_AS(map_student_to_kcs(pair, {}, store), PreconditionError);
}
