#include <doctest.h>

#include <filesystem>

#include <nlohmann/json.hpp>

#include "kclab/error.hpp"
#include "kclab/labeling.hpp"
#include "kclab/util/csv.hpp"
#include "kclab/util/files.hpp"
#include "kclab/util/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kclab;
using namespace kclab::llm;

namespace {

const std::vector<KnowledgeComponent> kKcs = {{"K1", "Loops", "Iterate", KcOrigin::human},
                                              {"K2", "Conditionals", "Branch", KcOrigin::human}};

AttemptPair pair_with(const std::string& student, const std::string& problem, double score,
                      const std::string& code = "code") {
  Submission s;
  s.submission_id = student + problem;
  s.student_id = student;
  s.problem_id = problem;
  s.score = score;
  s.code = code;
  return {student, problem, s, s};
}

std::string answer(const std::vector<std::tuple<std::string, bool, bool>>& items, const std::string& prose = "") {
  json arr = json::array();
  for (const auto& [id, used, correct] : items) {
    arr.push_back({{"kc_id", id}, {"used", used}, {"correct", correct}, {"reasoning", "r" + id}});
  }
  return prose + "```json\n" + arr.dump() + "\n```";
}

struct Harness {
  PromptLibrary prompts = PromptLibrary::builtin();
  std::shared_ptr<ScriptedProvider> provider;
  Gateway gateway;
  LlmContext ctx;

  explicit Harness(ScriptedProvider::Handler h)
      : provider(std::make_shared<ScriptedProvider>(std::move(h))),
        gateway(provider, GatewayOptions{RetryPolicy{0, std::chrono::milliseconds(0)}, 4, std::nullopt}),
        ctx{gateway, prompts, "m"} {}
};

}  // namespace

TEST_CASE("template rendering leaves unknown braces alone") {
  CHECK(render_template("a {x} b {y} {z}", {{"x", "1"}, {"y", "{x}"}}) == "a 1 b {x} {z}");
  CHECK(format_kc_list(kKcs).find("- K1: Loops. Iterate") == 0);
}

TEST_CASE("builtin prompt library is complete") {
  const auto lib = PromptLibrary::builtin();
  for (const char* name : {"label.user", "label_cot.system", "label_direct.system", "label.format_reminder",
                           "generate.system", "generate.user", "summarize.system", "summarize.user", "select.system",
                           "select.user", "json.format_reminder"}) {
    CHECK_FALSE(lib.get(name).empty());
  }
  CHECK(lib.fewshots().size() == 2);
  CHECK_THROWS_AS(lib.get("nope"), NotFoundError);
}

TEST_CASE("prompt directory overrides builtin files") {
  const auto dir = fs::temp_directory_path() / "kclab_prompts_override";
  fs::remove_all(dir);
  write_file_atomic(dir / "label_cot.system.txt", "Custom system\n");
  const auto lib = PromptLibrary::load_dir(dir);
  CHECK(lib.get("label_cot.system") == "Custom system");
  CHECK(lib.get("label.user") == PromptLibrary::builtin().get("label.user"));
  CHECK(lib.fewshots().size() == 2);
  fs::remove_all(dir);
  CHECK_THROWS_AS(PromptLibrary::load_dir(dir), NotFoundError);
}

TEST_CASE("few-shot files are validated") {
  const std::string ok = R"({"problem_statement":"p","code":"c","kcs":[{"kc_id":"A","name":"a"}],
                             "expected":[{"kc_id":"A","used":true,"correct":false}]})";
  CHECK(parse_fewshot_json(ok, "x").kc_list.size() == 1);
  CHECK_THROWS_AS(parse_fewshot_json("{", "x"), ParseError);
  CHECK_THROWS_AS(parse_fewshot_json(R"({"problem_statement":"p","code":"c","kcs":[{"kc_id":"A","name":"a"}],
                                         "expected":[{"kc_id":"B","used":true,"correct":false}]})",
                                     "x"),
                  ValidationError);
  CHECK_THROWS_AS(parse_fewshot_json(R"({"problem_statement":"p","code":"c","kcs":[{"kc_id":"A","name":"a"}],
                                         "expected":[{"kc_id":"A","used":false,"correct":true}]})",
                                     "x"),
                  ValidationError);
}

TEST_CASE("label prompt layout") {
  Harness h([](const ChatRequest&) { return std::string(); });
  const Problem p{"P1", "Print numbers", {}};
  const auto cot = build_label_prompt(h.ctx, p, "for(;;){}", kKcs, h.prompts.fewshots(), PromptMode::cot);
  REQUIRE(cot.messages.size() == 1 + 2 * h.prompts.fewshots().size() + 1);
  CHECK(cot.messages[0].role == Role::system);
  CHECK(cot.messages[0].content == h.prompts.get("label_cot.system"));
  CHECK(cot.messages[1].role == Role::user);
  CHECK(cot.messages[2].role == Role::assistant);
  CHECK(cot.messages.back().content.find("for(;;){}") != std::string::npos);
  CHECK(cot.messages.back().content.find("K2: Conditionals") != std::string::npos);
  CHECK(cot.temperature == 0.0);
  CHECK(cot.top_p == 1.0);

  const auto direct = build_label_prompt(h.ctx, p, "x", kKcs, h.prompts.fewshots(), PromptMode::direct);
  CHECK(direct.messages[0].content == h.prompts.get("label_direct.system"));
  CHECK(direct.messages[2].content.find("reasoning") == std::string::npos);
  CHECK(cot.messages[2].content.find("reasoning") != std::string::npos);
  CHECK(cache_key(cot) != cache_key(direct));
  CHECK_THROWS_AS(build_label_prompt(h.ctx, p, "x", {}, {}, PromptMode::cot), PreconditionError);
}

TEST_CASE("few-shot answers parse back to their expected output") {
  const auto lib = PromptLibrary::builtin();
  for (const auto& shot : lib.fewshots()) {
    std::vector<KcId> ids;
    for (const auto& k : shot.kc_list) ids.push_back(k.kc_id);
    for (auto mode : {PromptMode::cot, PromptMode::direct}) {
      const auto parsed = parse_label_response(render_fewshot_answer(shot, mode), ids);
      REQUIRE(parsed.size() == shot.expected_output.size());
      for (std::size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].used == shot.expected_output[i].used);
        CHECK(parsed[i].correct == shot.expected_output[i].correct);
      }
    }
  }
}

TEST_CASE("label responses must cover exactly the requested KCs") {
  const std::vector<KcId> ids = {"K1", "K2"};
  const auto good = parse_label_response(answer({{"K2", true, false}, {"K1", true, true}}, "Thoughts.\n"), ids);
  REQUIRE(good.size() == 2);
  CHECK(good[0].kc_id == "K1");
  CHECK(good[0].reasoning == "Thoughts.\n\nrK1");
  try {
    parse_label_response(answer({{"K1", true, true}, {"K3", true, true}}), ids);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("missing: K2") != std::string::npos);
    CHECK(msg.find("unexpected: K3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_label_response(answer({{"K1", true, true}, {"K1", true, true}, {"K2", true, true}}), ids),
                  ParseError);
  CHECK_THROWS_AS(parse_label_response(R"([{"kc_id":"K1","used":"yes","correct":true},{"kc_id":"K2","used":true,"correct":true}])", ids),
                  ParseError);
  CHECK_THROWS_AS(parse_label_response("no json", ids), ParseError);
  CHECK_THROWS_AS(parse_label_response("[1, 2]", ids), ParseError);
}

TEST_CASE("unused-but-correct judgments are coerced") {
  const auto j = parse_label_response(answer({{"K1", false, true}}), {"K1"});
  CHECK_FALSE(j[0].used);
  CHECK_FALSE(j[0].correct);
  CHECK(j[0].reasoning.find("[coerced") != std::string::npos);
}

TEST_CASE("label_submission reprompts once on a bad answer") {
  int calls = 0;
  Harness h([&](const ChatRequest& r) {
    ++calls;
    if (calls == 1) return answer({{"K1", true, true}});
    CHECK(r.messages.back().content.find("K1, K2") != std::string::npos);
    return answer({{"K1", true, true}, {"K2", false, false}}, "Because.\n");
  });
  const Problem p{"P1", "s", {}};
  const auto labels = label_submission(h.ctx, p, pair_with("s1", "P1", 0.0), kKcs, PromptMode::cot, {});
  REQUIRE(labels.size() == 2);
  CHECK(labels[0].correct);
  CHECK_FALSE(labels[1].used);
  CHECK(labels[0].method == LabelMethod::llm_cot);
  CHECK(labels[0].rationale.find("Because.") == 0);
  CHECK(calls == 2);

  Harness d([](const ChatRequest&) { return answer({{"K1", true, true}, {"K2", true, true}}); });
  const auto direct = label_submission(d.ctx, p, pair_with("s1", "P1", 0.0), kKcs, PromptMode::direct, {});
  CHECK(direct[0].rationale.empty());
  CHECK(direct[0].method == LabelMethod::llm_direct);
}

TEST_CASE("baseline labels copy problem correctness") {
  const auto right = baseline_labels(pair_with("s", "p", 1.0), kKcs);
  const auto wrong = baseline_labels(pair_with("s", "p", 0.9), kKcs);
  for (const auto& l : right) CHECK((l.used && l.correct && l.method == LabelMethod::baseline));
  for (const auto& l : wrong) CHECK((!l.used && !l.correct));
  CHECK(baseline_labels(pair_with("s", "p", 0.9), kKcs, 0.8)[0].correct);
}

TEST_CASE("label_all records failures and sorts output") {
  Harness h([](const ChatRequest& r) {
    for (const auto& m : r.messages) {
      if (m.content.find("BROKEN") != std::string::npos) return std::string("nothing");
    }
    return answer({{"K1", true, true}, {"K2", true, false}});
  });
  const Problem p{"P1", "s", {}};
  std::vector<LabelTask> tasks;
  for (const char* s : {"s3", "s1", "s2"}) tasks.push_back({&p, pair_with(s, "P1", 0.0), kKcs});
  tasks.push_back({&p, pair_with("s0", "P1", 0.0, "BROKEN"), kKcs});
  const auto r = label_all(&h.ctx, tasks, {LabelMethod::llm_direct, 1.0, 3});
  CHECK(r.labels.size() == 6);
  CHECK(r.labels.front().student_id == "s1");
  CHECK(r.labels.back().student_id == "s3");
  REQUIRE(r.report.failures.size() == 1);
  CHECK(r.report.failures[0].student_id == "s0");
  CHECK(r.report.submissions == 4);
  CHECK(r.report.labeled_submissions == 3);
  CHECK(r.report.gateway_requests == 5);  // the broken task is asked twice
  CHECK(r.report.to_json().at("failures").size() == 1);
  CHECK_THROWS_AS(label_all(nullptr, tasks, {LabelMethod::llm_cot, 1.0, 1}), PreconditionError);
}

TEST_CASE("authentication errors abort labeling") {
  Harness h([](const ChatRequest&) -> std::string { throw AuthenticationError("bad key"); });
  const Problem p{"P1", "s", {}};
  std::vector<LabelTask> tasks;
  for (int i = 0; i < 10; ++i) tasks.push_back({&p, pair_with("s" + std::to_string(i), "P1", 0.0), kKcs});
  CHECK_THROWS_AS(label_all(&h.ctx, tasks, {LabelMethod::llm_cot, 1.0, 4}), AuthenticationError);
  CHECK(h.provider->calls() <= 4);
}

TEST_CASE("labels csv round trip") {
  Rng rng(2);
  std::vector<KCLabel> labels;
  for (int i = 0; i < 50; ++i) {
    const bool used = rng.below(2) == 1;
    labels.push_back({"s" + std::to_string(i % 7), "p" + std::to_string(i), "K" + std::to_string(i % 3), used,
                      used && rng.below(2) == 1, "why, \"quoted\"\nnext line", LabelMethod::llm_cot});
  }
  const auto text = labels_writer(labels).str();
  CHECK(text.rfind("student_id,problem_id,kc_id,used,correct,method,rationale\n", 0) == 0);
  CHECK(parse_labels_csv(csv::parse(text)) == labels);
  CHECK_THROWS_AS(parse_labels_csv(csv::parse(
                      "student_id,problem_id,kc_id,used,correct,method,rationale\ns,p,k,0,1,baseline,\n")),
                  ValidationError);
  CHECK_THROWS_AS(parse_labels_csv(csv::parse(
                      "student_id,problem_id,kc_id,used,correct,method,rationale\ns,p,k,0,0,magic,\n")),
                  ParseError);
}

TEST_CASE("method names") {
  CHECK(parse_label_method("llm-cot") == LabelMethod::llm_cot);
  CHECK(parse_label_method("llm_direct") == LabelMethod::llm_direct);
  CHECK(to_string(LabelMethod::baseline) == "baseline");
  CHECK_THROWS_AS(parse_label_method("oracle"), ParseError);
}
