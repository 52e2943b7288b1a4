#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kclab/config.hpp"
#include "kclab/error.hpp"
#include "kclab/ingestion.hpp"
#include "kclab/labeling.hpp"
#include "kclab/pipeline.hpp"
#include "kclab/plot.hpp"
#include "kclab/util/csv.hpp"
#include "kclab/util/files.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kclab;

namespace {

const std::string kBaseToml =
    "[dataset]\nroot = \"data\"\n[output]\ndir = \"out\"\n[gateway]\nprovider = \"mock\"\n"
    "[seeds]\nkmeans = 7\nsplit = 11\nsample = 13\n[labeling]\nmethod = \"baseline\"\nkc_set = \"human\"\n"
    "[analytics]\nmin_support = 2\n";

fs::path smoke_copy(const std::string& name) {
  const auto root = fs::temp_directory_path() / ("kclab_pipeline_" + name);
  fs::remove_all(root);
  fs::create_directories(root);
  fs::copy(fs::path(KCLAB_SMOKE_FIXTURE) / "data", root / "data", fs::copy_options::recursive);
  return root;
}

RunConfig config_for(const fs::path& root, const std::string& extra = "") {
  return parse_run_config(kBaseToml + extra, root);
}

/// Every regular file below `root` except the label run report and the run log.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == "run_report.json" || name == "run_log.jsonl") continue;
    out[fs::relative(e.path(), root).generic_string()] = read_text_file(e.path());
  }
  return out;
}

std::string problem_message(const std::string& what, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  FAIL("expected " << what);
  return {};
}

std::vector<std::string> listed_kc_ids(const std::string& user_text) {
  std::vector<std::string> ids;
  std::istringstream in(user_text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("- ", 0) != 0) continue;
    const auto colon = line.find(':');
    if (colon != std::string::npos) ids.push_back(line.substr(2, colon - 2));
  }
  return ids;
}

/// Answers each prompt family with a well-formed reply.
std::string stub_answer(const llm::ChatRequest& r) {
  const auto& system = r.messages.front().content;
  // Few-shot turns precede the real request; format reminders follow it.
  std::string user = r.messages.at(1).content;
  for (const auto& m : r.messages) {
    if (m.role == llm::Role::user && m.content.find("Knowledge components:") != std::string::npos) user = m.content;
  }
  if (system.find("name the knowledge components") != std::string::npos) {
    if (user.find("even") != std::string::npos) {
      return R"([{"name": "Array loop", "description": "loop over array elements"},
                 {"name": "Modulo test", "description": "test parity with the modulo operator"}])";
    }
    return R"([{"name": "Counting loop", "description": "loop over a numeric range"},
               {"name": "Print output", "description": "print values to standard output"}])";
  }
  if (system.find("merge closely related") != std::string::npos) {
    return json{{"name", "Merged"}, {"description", "merged " + std::to_string(user.size())}}.dump();
  }
  const auto ids = listed_kc_ids(user);
  if (system.find("Select the KCs") != std::string::npos) return json(ids).dump();
  json arr = json::array();
  for (const auto& id : ids) arr.push_back({{"kc_id", id}, {"used", true}, {"correct", true}});
  return "```json\n" + arr.dump() + "\n```";
}

LearningCurve hand_curve() { return {"K1", {{1, 0.6, 10}, {2, 0.4, 10}, {3, 0.3, 8}, {5, 0.2, 6}}}; }

}  // namespace

TEST_CASE("config defaults and relative paths") {
  const auto root = smoke_copy("config");
  const auto c = parse_run_config("[dataset]\nroot = \"data\"\n", root);
  CHECK(c.dataset == root / "data");
  CHECK(c.method == LabelMethod::baseline);
  CHECK(c.kc_set == KcSetKind::human);
  CHECK(c.analytics.lambda == doctest::Approx(0.1));
  CHECK(c.plot.kind == PlotKind::aggregated);
  CHECK_FALSE(c.plot.max_opportunity);
  CHECK(c.hash().size() == 16);
  const auto loaded = load_run_config(fs::path(KCLAB_SMOKE_FIXTURE) / "run.toml");
  CHECK(loaded.dataset == fs::path(KCLAB_SMOKE_FIXTURE) / "data");
  CHECK(loaded.analytics.min_support == 2);
  CHECK_THROWS_AS(load_run_config(root / "absent.toml"), NotFoundError);
  fs::remove_all(root);
}

TEST_CASE("config problems are reported together") {
  const auto root = smoke_copy("config_bad");
  const auto msg = problem_message("ValidationError", [&] {
    parse_run_config(kBaseToml + "[colors]\nred = 1\n[plot]\nshade = 2\n[kc]\ntarget_n = \"many\"\n", root);
  });
  CHECK(msg.find("unknown section [colors]") != std::string::npos);
  CHECK(msg.find("unknown key plot.shade") != std::string::npos);
  CHECK(msg.find("kc.target_n has the wrong type") != std::string::npos);
  CHECK_THROWS_AS(parse_run_config(kBaseToml + "[colors]\n", root), ValidationError);
  CHECK_THROWS_AS(parse_run_config("[output]\ndir = \"out\"\n", root).validate(), ValidationError);
  CHECK_THROWS_AS(parse_run_config("[dataset]\nroot = \"nowhere\"\n", root).validate(), ValidationError);
  CHECK_THROWS_AS(config_for(root, "[plot]\nkind = \"stacked\"\n"), Error);

  const auto syntax = problem_message("ParseError", [&] { parse_run_config("[dataset]\nroot = \n", root, "run.toml"); });
  CHECK(syntax.find("run.toml:2") != std::string::npos);
  CHECK_THROWS_AS(parse_run_config("[dataset\n", root), ParseError);
  fs::remove_all(root);
}

TEST_CASE("config hash covers content settings only") {
  const auto root = smoke_copy("hash");
  const auto base = config_for(root).hash();
  CHECK(config_for(root).hash() == base);
  CHECK(config_for(root, "[plot]\nkind = \"per_kc\"\nmax_opportunity = 3\n").hash() == base);
  auto other_method = config_for(root);
  other_method.method = LabelMethod::llm_cot;
  other_method.kc_set = KcSetKind::generated;
  CHECK(other_method.hash() == base);
  auto transport = config_for(root);
  transport.gateway.retries = 9;
  transport.gateway.concurrency = 1;
  CHECK(transport.hash() == base);

  auto lambda = config_for(root);
  lambda.analytics.lambda = 0.2;
  CHECK(lambda.hash() != base);
  auto seed = config_for(root);
  seed.seeds.split = 12;
  CHECK(seed.hash() != base);
  auto model = config_for(root);
  model.gateway.model = "other";
  CHECK(model.hash() != base);

  write_file_atomic(root / "data" / "problems.csv", read_text_file(root / "data" / "problems.csv") + "P9,extra\n");
  CHECK(config_for(root).hash() != base);
  CHECK(directory_fingerprint(root / "data") == directory_fingerprint(root / "data"));
  fs::remove_all(root);
}

TEST_CASE("stage names round trip") {
  for (auto s : all_stages()) CHECK(parse_stage(to_string(s)) == s);
  CHECK(parse_stage("gen_kcs") == Stage::gen_kcs);
  CHECK(all_stages().size() == 7);
  CHECK_THROWS_AS(parse_stage("train"), ParseError);
  CHECK(parse_plot_kind(to_string(PlotKind::per_kc)) == PlotKind::per_kc);
}

TEST_CASE("stages refuse to run before their inputs exist") {
  const auto root = smoke_copy("prereq");
  Pipeline p(config_for(root));
  const auto curves = p.run(Stage::curves);
  CHECK_FALSE(curves.ok);
  CHECK(curves.message.find("missing") != std::string::npos);
  CHECK_FALSE(p.run(Stage::label).ok);
  CHECK_FALSE(p.run(Stage::report).ok);

  const auto outcomes = p.run({Stage::ingest, Stage::afm, Stage::label});
  REQUIRE(outcomes.size() == 2);
  CHECK(outcomes[0].ok);
  CHECK_FALSE(outcomes[1].ok);
  CHECK(outcomes[1].message.find("kclab label") != std::string::npos);

  std::size_t logged = 0;
  std::istringstream log(read_text_file(root / "out" / "run_log.jsonl"));
  for (std::string line; std::getline(log, line);) {
    const auto j = json::parse(line);
    CHECK(j.contains("stage"));
    ++logged;
  }
  CHECK(logged == 5);

  auto generated = config_for(root);
  generated.kc_set = KcSetKind::generated;
  const auto gen = Pipeline(generated).run(Stage::label);
  CHECK_FALSE(gen.ok);
  CHECK(gen.message.find("gen-kcs") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("artifacts from another config hash are rejected") {
  const auto root = smoke_copy("mismatch");
  Pipeline first(config_for(root));
  for (const auto& o : first.run({Stage::ingest, Stage::label, Stage::curves})) REQUIRE_MESSAGE(o.ok, o.message);
  auto changed = config_for(root);
  changed.analytics.lambda = 0.5;
  Pipeline second(changed);
  const auto afm = second.run(Stage::afm);
  CHECK_FALSE(afm.ok);
  CHECK(afm.message.find(first.config_hash()) != std::string::npos);
  CHECK(afm.message.find(second.config_hash()) != std::string::npos);
  CHECK(second.run({Stage::ingest, Stage::label, Stage::curves, Stage::afm}).back().ok);
  fs::remove_all(root);
}

TEST_CASE("baseline run is byte-identical when repeated") {
  const auto root = smoke_copy("rerun");
  const std::vector<Stage> stages = {Stage::ingest, Stage::label, Stage::curves, Stage::afm, Stage::report};
  Pipeline first(config_for(root));
  for (const auto& o : first.run(stages)) REQUIRE_MESSAGE(o.ok, o.message);
  const auto a = snapshot(root / "out");
  Pipeline second(config_for(root));
  for (const auto& o : second.run(stages)) REQUIRE_MESSAGE(o.ok, o.message);
  const auto b = snapshot(root / "out");
  CHECK(a.size() == b.size());
  for (const auto& [name, bytes] : a) {
    INFO(name);
    REQUIRE(b.count(name) == 1);
    CHECK(b.at(name) == bytes);
  }

  const auto dir = first.run_dir();
  CHECK(dir == root / "out" / "runs" / "human" / "baseline");
  for (const char* f : {"labels.csv", "curves.csv", "fits.csv", "fit_aggregate.json", "afm_params.json",
                        "afm_eval.json", "run_report.json"}) {
    INFO(f);
    const auto meta = read_artifact_meta(dir / f);
    REQUIRE(meta);
    CHECK(meta->at("config_hash") == first.config_hash());
  }
  CHECK(fs::exists(dir / "plots" / "learning_curve.svg"));
  CHECK(read_artifact_meta(dir / "plots" / "learning_curve.csv"));
  CHECK(fs::exists(root / "out" / "report" / "comparison.md"));
  CHECK(first.gateway_stats().requests == 0);
  fs::remove_all(root);
}

TEST_CASE("per-KC plots and the opportunity cap") {
  const auto root = smoke_copy("perkc");
  Pipeline p(config_for(root, "[plot]\nkind = \"per_kc\"\nmax_opportunity = 2\n"));
  for (const auto& o : p.run({Stage::ingest, Stage::label, Stage::curves, Stage::afm, Stage::report})) {
    REQUIRE_MESSAGE(o.ok, o.message);
  }
  const auto dir = p.run_dir();
  const auto curves = read_curves_csv(dir / "curves.csv").curves;
  std::size_t expected = 0;
  for (const auto& c : curves) {
    if (!c.points.empty() && c.points.front().opportunity <= 2) ++expected;
  }
  std::size_t svgs = 0, csvs = 0;
  for (const auto& e : fs::directory_iterator(dir / "plots")) {
    const auto name = e.path().filename().string();
    CHECK(name.rfind("kc_", 0) == 0);
    if (e.path().extension() == ".svg") ++svgs;
    if (e.path().extension() != ".csv") continue;
    ++csvs;
    const auto t = csv::read_file(e.path());
    CHECK_FALSE(t.rows.empty());
    for (const auto& r : t.rows) CHECK(std::stoi(r[0]) <= 2);
  }
  CHECK(expected > 0);
  CHECK(svgs == expected);
  CHECK(csvs == expected);
  fs::remove_all(root);
}

TEST_CASE("generated and selected KC sets through the pipeline") {
  const auto root = smoke_copy("generated");
  auto cfg = config_for(root, "[kc]\nexemplars_per_problem = 2\ntarget_n = 3\n");
  cfg.method = LabelMethod::llm_cot;
  cfg.kc_set = KcSetKind::generated;
  auto provider = std::make_shared<llm::ScriptedProvider>(stub_answer);
  PipelineHooks hooks{provider, nullptr, std::make_shared<HashedTextEmbedder>(64)};
  Pipeline gen(cfg, hooks);
  for (const auto& o : gen.run({Stage::ingest, Stage::gen_kcs, Stage::map, Stage::label})) {
    REQUIRE_MESSAGE(o.ok, o.message);
  }
  const auto kcs = read_kcs_json(root / "out" / "generated" / "kcs.json").set;
  REQUIRE(kcs.components.size() == 3);
  std::set<std::string> ids;
  for (const auto& k : kcs.components) ids.insert(k.kc_id);
  CHECK(ids == std::set<std::string>{"G01", "G02", "G03"});
  CHECK(fs::exists(root / "out" / "generated" / "exemplars.csv"));
  CHECK(fs::exists(root / "out" / "selected" / "code_kc_map.csv"));
  CHECK(fs::exists(root / "out" / "embeddings_cache.jsonl"));
  for (const auto& l : read_labels_csv(gen.run_dir() / "labels.csv")) CHECK(ids.count(l.kc_id) == 1);

  cfg.kc_set = KcSetKind::selected;
  Pipeline sel(cfg, hooks);
  const auto before = provider->calls();
  for (const auto& o : sel.run({Stage::label, Stage::curves})) REQUIRE_MESSAGE(o.ok, o.message);
  CHECK(sel.run_dir() == root / "out" / "runs" / "selected" / "llm_cot");
  const auto labels = read_labels_csv(sel.run_dir() / "labels.csv");
  CHECK_FALSE(labels.empty());
  for (const auto& l : labels) CHECK(ids.count(l.kc_id) == 1);
  CHECK(provider->calls() >= before);
  fs::remove_all(root);
}

TEST_CASE("worksheet through the pipeline") {
  const auto root = smoke_copy("worksheet");
  Pipeline p(config_for(root));
  for (const auto& o : p.run({Stage::ingest, Stage::label})) REQUIRE_MESSAGE(o.ok, o.message);
  const auto path = p.write_worksheet(4);
  const auto first = read_text_file(path);
  CHECK(first.rfind("student_id,problem_id,kc_id,statement,code,kc_name,judgment\n", 0) == 0);
  CHECK(read_text_file(p.write_worksheet(4)) == first);
  CHECK_THROWS_AS(Pipeline(config_for(smoke_copy("worksheet_empty"))).write_worksheet(4), PrerequisiteError);
  fs::remove_all(root);
  fs::remove_all(fs::temp_directory_path() / "kclab_pipeline_worksheet_empty");
}

TEST_CASE("artifact metadata reading") {
  const auto dir = fs::temp_directory_path() / "kclab_pipeline_meta";
  fs::remove_all(dir);
  const auto meta = artifact_meta("0123456789abcdef", Stage::curves);
  CHECK(meta.at("config_hash") == "0123456789abcdef");
  CHECK(meta.at("stage") == "curves");
  write_file_atomic(dir / "a.csv", "# kclab " + meta.dump() + "\nx\n1\n");
  write_file_atomic(dir / "b.json", json{{"meta", meta}, {"x", 1}}.dump());
  write_file_atomic(dir / "c.csv", "x\n1\n");
  write_file_atomic(dir / "d.json", "{\"x\": 1}");
  CHECK(*read_artifact_meta(dir / "a.csv") == meta);
  CHECK(*read_artifact_meta(dir / "b.json") == meta);
  CHECK_FALSE(read_artifact_meta(dir / "c.csv"));
  CHECK_FALSE(read_artifact_meta(dir / "d.json"));
  fs::remove_all(dir);
}

TEST_CASE("per-KC plot series") {
  AFMParams params;
  params.theta = {{"s1", 0.5}, {"s2", -0.5}};
  params.beta = {{"K1", 0.2}};
  params.gamma = {{"K1", 0.3}};
  PowerLawFit fit;
  fit.a = 0.6;
  fit.b = -0.7;
  fit.min_n = 1;
  fit.max_n = 3;
  const AfmSeries afm{&params, {"s1", "s2"}};
  const auto plot = per_kc_plot(hand_curve(), fit, afm, std::nullopt);
  REQUIRE(plot.rows.size() == 4);
  CHECK(plot.title.find("K1") != std::string::npos);
  for (const auto& r : plot.rows) {
    double expect = 0.0;
    for (double th : {0.5, -0.5}) expect += 1.0 - 1.0 / (1.0 + std::exp(-(th + 0.2 + 0.3 * (r.opportunity - 1))));
    CHECK(*r.afm == doctest::Approx(expect / 2));
  }
  CHECK(*plot.rows[1].powerlaw == doctest::Approx(0.6 * std::pow(2.0, -0.7)));
  CHECK_FALSE(plot.rows[3].powerlaw);
  CHECK(*plot.rows[3].empirical == 0.2);

  const auto capped = per_kc_plot(hand_curve(), std::nullopt, AfmSeries{}, 4);
  REQUIRE(capped.rows.size() == 3);
  CHECK_FALSE(capped.rows[0].afm);
  CHECK_FALSE(capped.rows[0].powerlaw);

  const auto table = csv::parse(plot_csv(capped).str());
  CHECK(table.header == std::vector<std::string>{"opportunity", "empirical", "powerlaw", "afm"});
  CHECK(table.rows.size() == 3);
  CHECK(table.rows[2][0] == "3");
  CHECK(table.rows[2][2].empty());
}

TEST_CASE("aggregated plot and svg rendering") {
  const LearningCurve other{"K2", {{1, 0.8, 10}, {2, 0.6, 10}}};
  const auto plot = aggregated_plot({hand_curve(), other}, {std::nullopt, std::nullopt}, AfmSeries{}, std::nullopt);
  REQUIRE(plot.rows.size() == 4);
  CHECK(*plot.rows[0].empirical == doctest::Approx(0.7));
  CHECK(*plot.rows[1].empirical == doctest::Approx(0.5));
  CHECK(*plot.rows[2].empirical == doctest::Approx(0.3));
  CHECK(plot.title.find("2 KCs") != std::string::npos);

  const auto svg = render_svg(PlotData{"A <b> & c", plot.rows});
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("A &lt;b&gt; &amp; c") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK_THROWS_AS(render_svg(PlotData{"empty", {}}), PreconditionError);
}
