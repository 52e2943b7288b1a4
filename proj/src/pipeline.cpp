#include "kclab/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "kclab/analytics.hpp"
#include "kclab/error.hpp"
#include "kclab/ingestion.hpp"
#include "kclab/kc_pipeline.hpp"
#include "kclab/labeling.hpp"
#include "kclab/plot.hpp"
#include "kclab/prompts.hpp"
#include "kclab/util/files.hpp"
#include "kclab/util/format.hpp"
#include "kclab/util/timestamp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kclab {

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::ingest: return "ingest";
    case Stage::gen_kcs: return "gen-kcs";
    case Stage::map: return "map";
    case Stage::label: return "label";
    case Stage::curves: return "curves";
    case Stage::afm: return "afm";
    case Stage::report: return "report";
  }
  return "ingest";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = {Stage::ingest, Stage::gen_kcs, Stage::map,   Stage::label,
                                            Stage::curves, Stage::afm,     Stage::report};
  return stages;
}

Stage parse_stage(std::string_view text) {
  for (auto s : all_stages()) {
    if (to_string(s) == text) return s;
  }
  if (text == "gen_kcs") return Stage::gen_kcs;
  throw ParseError("unknown stage '" + std::string(text) +
                   "' (ingest | gen-kcs | map | label | curves | afm | report)");
}

json artifact_meta(const std::string& config_hash, Stage stage) {
  return {{"config_hash", config_hash}, {"stage", to_string(stage)}, {"version", kVersion}};
}

std::optional<json> read_artifact_meta(const fs::path& path) {
  const auto text = read_text_file(path);
  if (path.extension() == ".csv") {
    constexpr std::string_view prefix = "# kclab ";
    if (text.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
    const auto eol = text.find('\n');
    try {
      return json::parse(text.substr(prefix.size(), eol == std::string::npos ? eol : eol - prefix.size()));
    } catch (const json::parse_error&) {
      return std::nullopt;
    }
  }
  try {
    const auto doc = json::parse(text);
    if (doc.is_object() && doc.contains("meta") && doc["meta"].is_object()) return std::optional<json>(doc["meta"]);
  } catch (const json::parse_error&) {
  }
  return std::nullopt;
}

namespace {

/// Maps `fn` over `items` on up to `threads` workers; results keep input
/// order and the first failure (by index) is rethrown after all workers stop.
template <class In, class Fn>
auto parallel_map(const std::vector<In>& items, int threads, Fn fn) {
  using Out = decltype(fn(items.front()));
  std::vector<std::optional<Out>> slots(items.size());
  std::vector<std::exception_ptr> errors(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < items.size();) {
      try {
        slots[i].emplace(fn(items[i]));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(items.size())));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<Out> out;
  out.reserve(items.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::string safe_file_name(const std::string& id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return out.empty() ? "_" : out;
}

json fit_json(const PowerLawFit& f) {
  return {{"a", f.a}, {"b", f.b}, {"rmse", f.rmse}, {"r2", f.r2}, {"n_points", f.n_points}};
}

struct KcSource {
  KCSet set;
  std::optional<QMatrix> q;
  std::optional<CodeKCMap> map;
};

}  // namespace

struct Pipeline::Impl {
  Impl(Pipeline& o, PipelineHooks h) : owner(o), hooks(std::move(h)) {}

  Pipeline& owner;
  PipelineHooks hooks;
  std::optional<DatasetBundle> bundle;
  std::optional<PromptLibrary> prompts;
  std::unique_ptr<llm::Gateway> gateway;
  std::unique_ptr<llm::LlmContext> ctx;
  std::unique_ptr<EmbeddingStore> code_store;
  std::shared_ptr<TextEmbedder> text_embedder;
  std::mutex log_mutex;

  const RunConfig& cfg() const { return owner.config_; }
  const std::string& hash() const { return owner.hash_; }
  fs::path out(const fs::path& rel) const { return cfg().output_dir / rel; }

  // ---- lazily built services ----

  const DatasetBundle& data() {
    if (!bundle) bundle = load_dataset(cfg().dataset, LoadOptions{cfg().analytics.threshold});
    return *bundle;
  }

  const PromptLibrary& prompt_library() {
    if (!prompts) prompts = cfg().kc.prompts_dir.empty() ? PromptLibrary::builtin()
                                                         : PromptLibrary::load_dir(cfg().kc.prompts_dir);
    return *prompts;
  }

  RetryPolicy retry_policy() const {
    return RetryPolicy{cfg().gateway.retries, std::chrono::milliseconds(cfg().gateway.backoff_ms)};
  }

  const llm::LlmContext& llm() {
    if (ctx) return *ctx;
    const auto& g = cfg().gateway;
    std::shared_ptr<llm::Provider> provider = hooks.provider;
    if (!provider) {
      if (g.provider == "mock") {
        if (g.mock_fixture.empty()) throw ValidationError("gateway.provider = 'mock' needs gateway.mock_fixture");
        provider = llm::MockProvider::from_file(g.mock_fixture);
      } else {
        provider = std::make_shared<llm::HttpChatProvider>(
            llm::HttpProviderConfig{g.endpoint, g.api_key, std::chrono::seconds(g.timeout_s)});
      }
    }
    llm::GatewayOptions options;
    options.retry = retry_policy();
    options.concurrency = g.concurrency;
    options.cache_dir = cfg().cache_dir;
    gateway = std::make_unique<llm::Gateway>(std::move(provider), options);
    ctx = std::make_unique<llm::LlmContext>(llm::LlmContext{*gateway, prompt_library(), g.model, g.max_tokens});
    return *ctx;
  }

  const EmbeddingStore& code_embeddings() {
    if (code_store) return *code_store;
    const auto& e = cfg().embeddings;
    std::shared_ptr<TextEmbedder> embedder = hooks.code_embedder;
    if (!embedder && e.mode == "remote") {
      embedder = std::make_shared<HttpTextEmbedder>(e.endpoint, cfg().gateway.api_key, retry_policy());
    }
    if (embedder) {
      const auto& b = data();
      auto lookup = [&b](const std::string& id) -> std::optional<std::string> {
        if (const auto* s = b.find_submission(id)) return s->code;
        return std::nullopt;
      };
      const fs::path cache = e.path.empty() ? out("embeddings_cache.jsonl") : e.path;
      code_store = EmbeddingStore::remote(std::move(embedder), lookup, cache);
    } else {
      if (e.path.empty()) {
        throw PrerequisiteError("code embeddings are required but embeddings.path is not set; export embeddings "
                                "for the dataset and point embeddings.path at the JSONL file");
      }
      code_store = EmbeddingStore::load_jsonl(e.path);
    }
    return *code_store;
  }

  TextEmbedder& text_embeddings() {
    if (!text_embedder) {
      if (hooks.text_embedder) {
        text_embedder = hooks.text_embedder;
      } else if (cfg().embeddings.text_mode == "remote") {
        text_embedder = std::make_shared<HttpTextEmbedder>(cfg().embeddings.text_endpoint, cfg().gateway.api_key,
                                                           retry_policy());
      } else {
        text_embedder = std::make_shared<HashedTextEmbedder>();
      }
    }
    return *text_embedder;
  }

  // ---- artifacts ----

  void write_csv(const fs::path& path, csv::Writer writer, Stage stage) {
    writer.comment(" kclab " + artifact_meta(hash(), stage).dump());
    fs::create_directories(path.parent_path());
    write_file_atomic(path, writer.str());
  }

  void write_json(const fs::path& path, json doc, Stage stage) {
    doc["meta"] = artifact_meta(hash(), stage);
    fs::create_directories(path.parent_path());
    write_file_atomic(path, doc.dump(2) + "\n");
  }

  void require(const fs::path& path, Stage producer) {
    if (!fs::exists(path)) {
      throw PrerequisiteError("missing " + path.string() + "; run `kclab " + to_string(producer) + "` first");
    }
    const auto meta = read_artifact_meta(path);
    if (!meta) throw ValidationError(path.string() + " carries no kclab metadata line");
    const auto got = meta->value("config_hash", std::string());
    if (got != hash()) {
      throw ValidationError(path.string() + " was produced under config hash " + got + " but the current config hash is " +
                            hash() + "; rerun `kclab " + to_string(producer) + "`");
    }
  }

  void require_ingest() { require(out("validation_report.json"), Stage::ingest); }

  KcSource kc_source(KcSetKind kind) {
    const auto& b = data();
    KcSource src;
    switch (kind) {
      case KcSetKind::human:
        if (b.kc_sets.empty() || b.q_matrices.empty()) {
          throw PrerequisiteError("KC set 'human' needs kcs.json and qmatrix.csv in the dataset directory; "
                                  "otherwise run `kclab gen-kcs` (and `kclab map`) and pick --kc-set generated or selected");
        }
        src.set = b.kc_sets.front();
        src.q = b.q_matrices.front();
        break;
      case KcSetKind::generated: {
        const auto kcs = out("generated/kcs.json"), q = out("generated/qmatrix.csv");
        if (!fs::exists(kcs)) {
          throw PrerequisiteError("KC set 'generated' has no KCs yet; run `kclab gen-kcs` first");
        }
        require(kcs, Stage::gen_kcs);
        require(q, Stage::gen_kcs);
        src.set = read_kcs_json(kcs).set;
        src.q = read_qmatrix_csv(q);
        break;
      }
      case KcSetKind::selected: {
        const auto map = out("selected/code_kc_map.csv");
        if (fs::exists(map)) {
          require(map, Stage::map);
          require(out("generated/kcs.json"), Stage::gen_kcs);
          src.set = read_kcs_json(out("generated/kcs.json")).set;
          src.set.kind = KcSetKind::selected;
          src.map = read_code_kc_map_csv(map);
        } else if (b.code_kc_map && !b.kc_sets.empty()) {
          src.set = b.kc_sets.front();
          src.set.kind = KcSetKind::selected;
          src.map = *b.code_kc_map;
        } else {
          throw PrerequisiteError("KC set 'selected' needs a code-KC map; run `kclab gen-kcs` then `kclab map`, "
                                  "or provide code_kc_map.csv in the dataset directory");
        }
        break;
      }
    }
    return src;
  }

  std::vector<AttemptPair> covered_pairs(const KcSource& src, std::size_t* dropped = nullptr) {
    std::vector<AttemptPair> pairs;
    std::size_t skipped = 0;
    for (auto& p : build_attempt_pairs(data().submissions)) {
      bool covered = false;
      if (src.q) {
        const auto it = src.q->entries.find(p.problem_id);
        covered = it != src.q->entries.end() && !it->second.empty();
      } else {
        const auto it = src.map->entries.find({p.student_id, p.problem_id});
        covered = it != src.map->entries.end() && !it->second.empty();
      }
      if (covered) {
        pairs.push_back(std::move(p));
      } else {
        ++skipped;
      }
    }
    if (dropped) *dropped = skipped;
    return pairs;
  }

  OpportunityTable opportunities(const KcSource& src) {
    const auto pairs = covered_pairs(src);
    return src.q ? opportunity_counts(pairs, *src.q) : opportunity_counts(pairs, *src.map);
  }

  std::vector<KCLabel> load_labels(const fs::path& dir) {
    require(dir / "labels.csv", Stage::label);
    return read_labels_csv(dir / "labels.csv");
  }

  json gateway_counts(const llm::GatewayStats& before) const {
    if (!gateway) return json::object();
    const auto after = gateway->stats();
    return {{"gateway_requests", after.requests - before.requests},
            {"cache_hits", after.cache_hits - before.cache_hits},
            {"provider_attempts", after.provider_attempts - before.provider_attempts}};
  }

  // ---- stages ----

  json ingest() {
    const auto report = validate_dataset(data());
    write_json(out("validation_report.json"), report.to_json(), Stage::ingest);
    return {{"students", report.student_count},
            {"problems", report.problem_count},
            {"submissions", report.submission_count},
            {"warnings", report.warnings.size()}};
  }

  json gen_kcs() {
    require_ingest();
    const auto& b = data();
    const auto& store = code_embeddings();
    const auto& c = llm();
    const auto before = gateway->stats();

    std::vector<ExemplarSet> exemplar_sets;
    std::size_t skipped = 0;
    for (const auto& p : b.problems) {
      std::vector<Submission> solutions;
      for (const auto& id : p.correct_solution_ids) solutions.push_back(*b.find_submission(id));
      if (solutions.empty()) {
        ++skipped;
        continue;
      }
      exemplar_sets.push_back(select_exemplars(p, solutions, cfg().kc.exemplars_per_problem, cfg().seeds.kmeans, store));
    }
    if (exemplar_sets.empty()) throw PreconditionError("no problem has a fully correct solution to learn KCs from");

    struct Job {
      const Problem* problem;
      const Submission* exemplar;
    };
    std::vector<Job> jobs;
    csv::Writer exemplars({"problem_id", "submission_id"});
    for (const auto& set : exemplar_sets) {
      for (const auto& e : set.exemplars) {
        jobs.push_back({&b.problem(set.problem_id), b.find_submission(e.id)});
        exemplars.row({set.problem_id, e.id});
      }
    }
    const auto per_job = parallel_map(jobs, cfg().gateway.concurrency, [&](const Job& j) {
      return generate_candidate_kcs(c, *j.problem, j.exemplar->code);
    });
    std::vector<CandidateKC> candidates;
    std::vector<std::string> candidate_source;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      for (const auto& cand : per_job[i]) {
        candidates.push_back(cand);
        candidate_source.push_back(jobs[i].exemplar->submission_id);
      }
    }
    auto consolidation = consolidate_kcs(c, candidates, cfg().kc.target_n, cfg().seeds.kmeans, text_embeddings());

    json cands = json::array();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      cands.push_back({{"problem_id", candidates[i].problem_id},
                       {"exemplar_id", candidate_source[i]},
                       {"name", candidates[i].name},
                       {"description", candidates[i].description},
                       {"kc_id", consolidation.kcs.components[static_cast<std::size_t>(consolidation.cluster_of[i])].kc_id}});
    }
    write_csv(out("generated/exemplars.csv"), std::move(exemplars), Stage::gen_kcs);
    write_json(out("generated/candidates.json"), {{"candidates", cands}}, Stage::gen_kcs);
    write_csv(out("generated/qmatrix.csv"), qmatrix_writer(consolidation.qmatrix), Stage::gen_kcs);
    fs::create_directories(out("generated"));
    write_file_atomic(out("generated/kcs.json"), kcs_json(consolidation.kcs, artifact_meta(hash(), Stage::gen_kcs)));

    json counts = {{"exemplars", jobs.size()},
                   {"candidates", candidates.size()},
                   {"kcs", consolidation.kcs.components.size()},
                   {"problems_without_solutions", skipped}};
    counts.update(gateway_counts(before));
    return counts;
  }

  json map() {
    require_ingest();
    for (const char* f : {"generated/kcs.json", "generated/qmatrix.csv", "generated/exemplars.csv"}) {
      require(out(f), Stage::gen_kcs);
    }
    const auto& b = data();
    const auto kcs = read_kcs_json(out("generated/kcs.json")).set;
    const auto q = read_qmatrix_csv(out("generated/qmatrix.csv"));
    const auto exemplar_table = csv::read_file(out("generated/exemplars.csv"));
    const auto& store = code_embeddings();
    const auto& c = llm();
    const auto before = gateway->stats();

    struct Job {
      const Problem* problem;
      const Submission* exemplar;
      std::vector<KnowledgeComponent> kcs;
    };
    std::vector<Job> jobs;
    const auto cp = exemplar_table.column("problem_id"), cs = exemplar_table.column("submission_id");
    for (const auto& row : exemplar_table.rows) {
      const auto it = q.entries.find(row[cp]);
      if (it == q.entries.end() || it->second.empty()) continue;
      const auto* sub = b.find_submission(row[cs]);
      if (!sub) throw IntegrityError("exemplar " + row[cs] + " is not in the dataset");
      Job j{&b.problem(row[cp]), sub, {}};
      for (const auto& id : it->second) j.kcs.push_back(kcs.at(id));
      jobs.push_back(std::move(j));
    }
    const auto profiles = parallel_map(jobs, cfg().gateway.concurrency, [&](const Job& j) {
      return profile_exemplar(c, *j.problem, *j.exemplar, j.kcs, store);
    });
    std::map<std::string, std::vector<ExemplarKCProfile>> by_problem;
    json pj = json::array();
    for (const auto& p : profiles) {
      by_problem[p.problem_id].push_back(p);
      pj.push_back({{"problem_id", p.problem_id},
                    {"submission_id", p.submission_id},
                    {"kcs", std::vector<std::string>(p.kc_subset.begin(), p.kc_subset.end())}});
    }
    CodeKCMap map;
    std::size_t unmapped = 0;
    for (const auto& pair : build_attempt_pairs(b.submissions)) {
      const auto it = by_problem.find(pair.problem_id);
      if (it == by_problem.end()) {
        ++unmapped;
        continue;
      }
      auto [key, set] = map_student_to_kcs(pair, it->second, store);
      map.entries.emplace(std::move(key), std::move(set));
    }
    write_json(out("selected/profiles.json"), {{"profiles", pj}}, Stage::map);
    write_csv(out("selected/code_kc_map.csv"), code_kc_map_writer(map), Stage::map);
    json counts = {{"profiles", profiles.size()}, {"mapped_pairs", map.entries.size()}, {"unmapped_pairs", unmapped}};
    counts.update(gateway_counts(before));
    return counts;
  }

  json label(std::string& message) {
    require_ingest();
    const auto src = kc_source(cfg().kc_set);
    std::size_t dropped = 0;
    const auto pairs = covered_pairs(src, &dropped);
    std::vector<LabelTask> tasks;
    for (const auto& p : pairs) {
      LabelTask t{&data().problem(p.problem_id), p, {}};
      const auto& ids = src.q ? src.q->entries.at(p.problem_id) : src.map->entries.at({p.student_id, p.problem_id});
      for (const auto& id : ids) t.kcs.push_back(src.set.at(id));
      tasks.push_back(std::move(t));
    }
    const bool uses_llm = cfg().method != LabelMethod::baseline;
    const llm::LlmContext* c = uses_llm ? &llm() : nullptr;
    LabelRunOptions options{cfg().method, cfg().analytics.threshold, cfg().gateway.concurrency};
    const auto result = label_all(c, tasks, options);

    const auto dir = owner.run_dir();
    write_csv(dir / "labels.csv", labels_writer(result.labels), Stage::label);
    auto report = result.report.to_json();
    report["kc_set"] = to_string(cfg().kc_set);
    report["pairs_without_kcs"] = dropped;
    write_json(dir / "run_report.json", report, Stage::label);
    if (!result.report.failures.empty()) {
      message = std::to_string(result.report.failures.size()) + " submission(s) could not be labeled; see " +
                (dir / "run_report.json").string();
    }
    return {{"submissions", result.report.submissions},
            {"labels", result.report.labels},
            {"failures", result.report.failures.size()},
            {"gateway_requests", result.report.gateway_requests},
            {"cache_hits", result.report.cache_hits},
            {"provider_attempts", result.report.provider_attempts}};
  }

  json curves() {
    require_ingest();
    const auto dir = owner.run_dir();
    const auto labels = load_labels(dir);
    if (labels.empty()) throw PreconditionError("labels.csv holds no labels");
    const auto opp = opportunities(kc_source(cfg().kc_set));
    const auto cs = empirical_curves(labels, opp, cfg().analytics.min_support);
    std::vector<std::optional<PowerLawFit>> fits;
    double rmse = 0.0, r2 = 0.0;
    int n_fitted = 0;
    for (const auto& c : cs) {
      if (c.points.size() >= 2) {
        fits.push_back(fit_power_law(c));
        rmse += fits.back()->rmse;
        r2 += fits.back()->r2;
        ++n_fitted;
      } else {
        fits.push_back(std::nullopt);
      }
    }
    json agg = json::array();
    json pooled = nullptr;
    const auto aggregated = aggregate_curves(cs, fits);
    for (const auto& a : aggregated) {
      agg.push_back({{"opportunity", a.opportunity},
                     {"empirical", a.empirical},
                     {"n_kcs", a.n_kcs},
                     {"fitted", a.fitted ? json(*a.fitted) : json(nullptr)},
                     {"n_fitted", a.n_fitted}});
    }
    if (aggregated.size() >= 2) pooled = fit_json(fit_power_law(aggregated_as_curve(aggregated)));

    write_csv(dir / "curves.csv", curves_writer(cs, fits), Stage::curves);
    write_csv(dir / "fits.csv", fits_writer(cs, fits), Stage::curves);
    write_json(dir / "fit_aggregate.json",
               {{"n_kcs", cs.size()},
                {"n_fitted", n_fitted},
                {"mean_rmse", n_fitted ? json(rmse / n_fitted) : json(nullptr)},
                {"mean_r2", n_fitted ? json(r2 / n_fitted) : json(nullptr)},
                {"pooled", pooled},
                {"aggregated", agg}},
               Stage::curves);
    return {{"kcs", cs.size()}, {"fitted_kcs", n_fitted}};
  }

  json afm() {
    require_ingest();
    const auto dir = owner.run_dir();
    const auto labels = load_labels(dir);
    if (labels.empty()) throw PreconditionError("labels.csv holds no labels");
    const auto opp = opportunities(kc_source(cfg().kc_set));
    AfmEvalOptions options;
    options.fit.lambda = cfg().analytics.lambda;
    options.fit.max_iter = cfg().analytics.max_iter;
    options.train_fraction = cfg().analytics.train_fraction;
    options.seed = cfg().seeds.split;
    const auto ev = evaluate_afm(labels, opp, options);

    json params = ev.fit.params.to_json();
    params["train_students"] = ev.split.train;
    params["test_students"] = ev.split.test;
    params["iterations"] = ev.fit.iterations;
    params["converged"] = ev.fit.converged;
    params["grad_norm"] = ev.fit.grad_norm;
    params["objective"] = ev.fit.objective_trace.back();
    write_json(dir / "afm_params.json", params, Stage::afm);
    write_json(dir / "afm_eval.json", ev.to_json(), Stage::afm);
    return {{"auc", ev.auc ? json(*ev.auc) : json(nullptr)},
            {"test_observations", ev.n_test_observations},
            {"iterations", ev.fit.iterations},
            {"converged", ev.fit.converged}};
  }

  json report() {
    require_ingest();
    std::vector<MethodResult> results;
    const auto runs = out("runs");
    std::vector<std::pair<KcSetKind, LabelMethod>> found;
    if (fs::is_directory(runs)) {
      for (const auto& set_dir : fs::directory_iterator(runs)) {
        if (!set_dir.is_directory()) continue;
        for (const auto& method_dir : fs::directory_iterator(set_dir.path())) {
          if (!method_dir.is_directory() || !fs::exists(method_dir.path() / "labels.csv")) continue;
          found.emplace_back(parse_kc_set_kind(set_dir.path().filename().string()),
                             parse_label_method(method_dir.path().filename().string()));
        }
      }
    }
    std::sort(found.begin(), found.end());
    if (found.empty()) {
      throw PrerequisiteError("no labeled runs under " + runs.string() + "; run `kclab label`, `kclab curves` and "
                              "`kclab afm` first");
    }
    std::size_t plots = 0;
    for (const auto& [set, method] : found) {
      const auto dir = owner.run_dir(set, method);
      require(dir / "curves.csv", Stage::curves);
      require(dir / "fits.csv", Stage::curves);
      require(dir / "fit_aggregate.json", Stage::curves);
      require(dir / "afm_params.json", Stage::afm);
      require(dir / "afm_eval.json", Stage::afm);

      const auto curve_file = read_curves_csv(dir / "curves.csv");
      const auto fit_rows = read_fits_csv(dir / "fits.csv");
      const auto eval = json::parse(read_text_file(dir / "afm_eval.json"));
      const auto agg = json::parse(read_text_file(dir / "fit_aggregate.json"));
      const auto params_doc = json::parse(read_text_file(dir / "afm_params.json"));
      const auto params = AFMParams::from_json(params_doc);

      MethodResult r{to_string(method), to_string(set), fit_rows, std::nullopt, std::nullopt};
      if (!eval.at("auc").is_null()) r.auc = eval.at("auc").get<double>();
      if (!agg.at("pooled").is_null()) {
        PowerLawFit f;
        f.a = agg["pooled"]["a"].get<double>();
        f.b = agg["pooled"]["b"].get<double>();
        f.rmse = agg["pooled"]["rmse"].get<double>();
        f.r2 = agg["pooled"]["r2"].get<double>();
        f.n_points = agg["pooled"]["n_points"].get<int>();
        r.pooled = f;
      }
      results.push_back(std::move(r));

      std::map<KcId, PowerLawFit> fit_by_kc;
      for (const auto& fr : fit_rows) fit_by_kc[fr.kc_id] = fr.fit;
      std::vector<std::optional<PowerLawFit>> fits;
      for (const auto& c : curve_file.curves) {
        const auto it = fit_by_kc.find(c.kc_id);
        if (it == fit_by_kc.end() || c.points.empty()) {
          fits.push_back(std::nullopt);
          continue;
        }
        auto f = it->second;
        f.min_n = c.points.front().opportunity;
        f.max_n = c.points.back().opportunity;
        fits.push_back(f);
      }
      const AfmSeries afm_series{&params, params_doc.at("train_students").get<std::vector<std::string>>()};
      const auto plot_dir = dir / "plots";
      fs::create_directories(plot_dir);
      const auto emit = [&](const PlotData& plot, const std::string& stem) {
        auto table = plot_csv(plot);
        write_csv(plot_dir / (stem + ".csv"), std::move(table), Stage::report);
        write_file_atomic(plot_dir / (stem + ".svg"), render_svg(plot));
        ++plots;
      };
      if (curve_file.curves.empty()) continue;
      if (cfg().plot.kind == PlotKind::aggregated) {
        emit(aggregated_plot(curve_file.curves, fits, afm_series, cfg().plot.max_opportunity), "learning_curve");
      } else {
        for (std::size_t i = 0; i < curve_file.curves.size(); ++i) {
          const auto plot = per_kc_plot(curve_file.curves[i], fits[i], afm_series, cfg().plot.max_opportunity);
          if (!plot.rows.empty()) emit(plot, "kc_" + safe_file_name(curve_file.curves[i].kc_id));
        }
      }
    }
    const auto rows = compare_methods(results);
    fs::create_directories(out("report"));
    write_csv(out("report/comparison.csv"), comparison_writer(rows), Stage::report);
    write_file_atomic(out("report/comparison.md"),
                      "<!-- kclab " + artifact_meta(hash(), Stage::report).dump() + " -->\n\n" +
                          comparison_markdown(rows, reference_rows()));
    return {{"runs", found.size()}, {"plots", plots}};
  }

  void log(const StageOutcome& o) {
    json line = {{"time", format_rfc3339(std::chrono::time_point_cast<std::chrono::milliseconds>(
                              std::chrono::system_clock::now()))},
                 {"stage", to_string(o.stage)},
                 {"status", o.ok ? "ok" : "failed"},
                 {"message", o.message},
                 {"seconds", o.seconds},
                 {"counts", o.counts},
                 {"config_hash", hash()},
                 {"version", kVersion},
                 {"method", to_string(cfg().method)},
                 {"kc_set", to_string(cfg().kc_set)},
                 {"seeds", {{"kmeans", cfg().seeds.kmeans}, {"split", cfg().seeds.split}, {"sample", cfg().seeds.sample}}}};
    std::lock_guard lock(log_mutex);
    fs::create_directories(cfg().output_dir);
    std::ofstream(out("run_log.jsonl"), std::ios::app) << line.dump() << "\n";
  }
};

Pipeline::Pipeline(RunConfig config, PipelineHooks hooks)
    : config_(std::move(config)), hash_(config_.hash()), impl_(std::make_unique<Impl>(*this, std::move(hooks))) {}

Pipeline::~Pipeline() = default;

fs::path Pipeline::run_dir() const { return run_dir(config_.kc_set, config_.method); }

fs::path Pipeline::run_dir(KcSetKind kc_set, LabelMethod method) const {
  return config_.output_dir / "runs" / to_string(kc_set) / to_string(method);
}

llm::GatewayStats Pipeline::gateway_stats() const {
  return impl_->gateway ? impl_->gateway->stats() : llm::GatewayStats{};
}

StageOutcome Pipeline::run(Stage stage) {
  StageOutcome o;
  o.stage = stage;
  const auto started = std::chrono::steady_clock::now();
  try {
    std::string message;
    switch (stage) {
      case Stage::ingest: o.counts = impl_->ingest(); break;
      case Stage::gen_kcs: o.counts = impl_->gen_kcs(); break;
      case Stage::map: o.counts = impl_->map(); break;
      case Stage::label: o.counts = impl_->label(message); break;
      case Stage::curves: o.counts = impl_->curves(); break;
      case Stage::afm: o.counts = impl_->afm(); break;
      case Stage::report: o.counts = impl_->report(); break;
    }
    o.ok = message.empty();
    o.message = message;
  } catch (const std::exception& e) {
    o.ok = false;
    o.message = e.what();
  }
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  try {
    impl_->log(o);
  } catch (const std::exception& e) {
    std::cerr << "kclab: could not append to run log: " << e.what() << "\n";
  }
  return o;
}

std::vector<StageOutcome> Pipeline::run(const std::vector<Stage>& stages) {
  std::vector<StageOutcome> outcomes;
  for (auto s : stages) {
    outcomes.push_back(run(s));
    if (!outcomes.back().ok) break;
  }
  return outcomes;
}

fs::path Pipeline::write_worksheet(int n) {
  impl_->require_ingest();
  const auto labels = impl_->load_labels(run_dir());
  const auto src = impl_->kc_source(config_.kc_set);
  const auto rows = sample_for_human_eval(labels, n, config_.seeds.sample, impl_->data(), src.set);
  const auto path = run_dir() / "worksheet.csv";
  write_file_atomic(path, worksheet_writer(rows).str());
  return path;
}

}  // namespace kclab
