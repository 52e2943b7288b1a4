#include "kclab/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>
#include <vector>

#include <toml.hpp>

#include "kclab/error.hpp"
#include "kclab/util/files.hpp"
#include "kclab/util/format.hpp"
#include "kclab/util/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kclab {

std::string to_string(PlotKind kind) { return kind == PlotKind::per_kc ? "per_kc" : "aggregated"; }

PlotKind parse_plot_kind(std::string_view text) {
  if (text == "per_kc" || text == "per-kc") return PlotKind::per_kc;
  if (text == "aggregated") return PlotKind::aggregated;
  throw ParseError("unknown plot kind '" + std::string(text) + "' (per_kc | aggregated)");
}

namespace {

class Reader {
public:
  Reader(const toml::table& root, fs::path base, std::string source)
      : root_(root), base_(std::move(base)), source_(std::move(source)) {}

  void check_keys() {
    static const std::map<std::string, std::set<std::string>> allowed = {
        {"dataset", {"root"}},
        {"output", {"dir", "cache_dir"}},
        {"gateway",
         {"provider", "endpoint", "model", "mock_fixture", "retries", "backoff_ms", "concurrency", "max_tokens",
          "timeout_s"}},
        {"embeddings", {"mode", "path", "endpoint", "text_mode", "text_endpoint"}},
        {"seeds", {"kmeans", "split", "sample"}},
        {"kc", {"exemplars_per_problem", "target_n", "prompts_dir"}},
        {"labeling", {"method", "kc_set"}},
        {"analytics", {"lambda", "min_support", "train_fraction", "threshold", "max_iter"}},
        {"plot", {"kind", "max_opportunity"}},
        {"evaluation", {"worksheet_size"}},
    };
    for (auto&& [key, node] : root_) {
      const std::string section(key.str());
      const auto it = allowed.find(section);
      if (it == allowed.end()) {
        problems_.push_back("unknown section [" + section + "]");
        continue;
      }
      const auto* tbl = node.as_table();
      if (!tbl) {
        problems_.push_back("[" + section + "] must be a table");
        continue;
      }
      for (auto&& [k, _] : *tbl) {
        if (!it->second.count(std::string(k.str()))) {
          problems_.push_back("unknown key " + section + "." + std::string(k.str()));
        }
      }
    }
  }

  template <class T>
  std::optional<T> get(std::string_view section, std::string_view key) {
    const auto node = root_[section][key];
    if (!node) return std::nullopt;
    if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = node.value<std::string>()) return v;
    } else if constexpr (std::is_same_v<T, double>) {
      if (node.is_number()) return node.value<double>();
    } else {
      if (auto v = node.value<std::int64_t>()) return static_cast<T>(*v);
    }
    problems_.push_back(std::string(section) + "." + std::string(key) + " has the wrong type");
    return std::nullopt;
  }

  template <class T>
  void set(T& target, std::string_view section, std::string_view key) {
    if (auto v = get<T>(section, key)) target = *v;
  }

  void set_path(fs::path& target, std::string_view section, std::string_view key) {
    if (auto v = get<std::string>(section, key)) target = resolve(*v);
  }

  fs::path resolve(const std::string& p) const {
    if (p.empty()) return {};
    const fs::path path(p);
    return (path.is_absolute() ? path : base_ / path).lexically_normal();
  }

  void fail(std::string message) { problems_.push_back(std::move(message)); }

  void finish() const {
    if (problems_.empty()) return;
    std::string msg = source_ + ": invalid configuration";
    for (const auto& p : problems_) msg += "\n  - " + p;
    throw ValidationError(msg);
  }

private:
  const toml::table& root_;
  fs::path base_;
  std::string source_;
  std::vector<std::string> problems_;
};

std::string file_digest(const fs::path& p) { return sha256_hex(read_text_file(p)); }

}  // namespace

RunConfig parse_run_config(std::string_view toml_text, const fs::path& base_dir, std::string_view source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    throw ParseError(std::string(source) + ":" + std::to_string(e.source().begin.line) + ": " +
                     std::string(e.description()));
  }
  Reader r(root, base_dir, std::string(source));
  r.check_keys();

  RunConfig c;
  r.set_path(c.dataset, "dataset", "root");
  c.output_dir = r.resolve("out");
  r.set_path(c.output_dir, "output", "dir");
  c.cache_dir = c.output_dir / "cache";
  r.set_path(c.cache_dir, "output", "cache_dir");

  auto& g = c.gateway;
  r.set(g.provider, "gateway", "provider");
  r.set(g.endpoint, "gateway", "endpoint");
  r.set(g.model, "gateway", "model");
  r.set_path(g.mock_fixture, "gateway", "mock_fixture");
  r.set(g.retries, "gateway", "retries");
  r.set(g.backoff_ms, "gateway", "backoff_ms");
  r.set(g.concurrency, "gateway", "concurrency");
  r.set(g.max_tokens, "gateway", "max_tokens");
  r.set(g.timeout_s, "gateway", "timeout_s");
  if (const char* key = std::getenv("KCLAB_API_KEY")) g.api_key = key;

  auto& e = c.embeddings;
  r.set(e.mode, "embeddings", "mode");
  r.set_path(e.path, "embeddings", "path");
  r.set(e.endpoint, "embeddings", "endpoint");
  r.set(e.text_mode, "embeddings", "text_mode");
  r.set(e.text_endpoint, "embeddings", "text_endpoint");

  r.set(c.seeds.kmeans, "seeds", "kmeans");
  r.set(c.seeds.split, "seeds", "split");
  r.set(c.seeds.sample, "seeds", "sample");

  r.set(c.kc.exemplars_per_problem, "kc", "exemplars_per_problem");
  r.set(c.kc.target_n, "kc", "target_n");
  r.set_path(c.kc.prompts_dir, "kc", "prompts_dir");

  try {
    if (auto m = r.get<std::string>("labeling", "method")) c.method = parse_label_method(*m);
    if (auto k = r.get<std::string>("labeling", "kc_set")) c.kc_set = parse_kc_set_kind(*k);
    if (auto k = r.get<std::string>("plot", "kind")) c.plot.kind = parse_plot_kind(*k);
  } catch (const Error& ex) {
    r.fail(ex.what());
  }

  auto& a = c.analytics;
  r.set(a.lambda, "analytics", "lambda");
  r.set(a.min_support, "analytics", "min_support");
  r.set(a.train_fraction, "analytics", "train_fraction");
  r.set(a.threshold, "analytics", "threshold");
  r.set(a.max_iter, "analytics", "max_iter");
  if (auto m = r.get<int>("plot", "max_opportunity")) c.plot.max_opportunity = *m;
  r.set(c.worksheet_size, "evaluation", "worksheet_size");
  r.finish();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  const auto text = read_text_file(path);
  auto c = parse_run_config(text, fs::absolute(path).parent_path(), path.string());
  c.config_file = path;
  c.validate();
  return c;
}

void RunConfig::validate() const {
  std::vector<std::string> p;
  if (dataset.empty()) {
    p.push_back("dataset.root is required");
  } else if (!fs::is_directory(dataset)) {
    p.push_back("dataset.root " + dataset.string() + " is not a directory");
  }
  if (gateway.provider != "http" && gateway.provider != "mock") {
    p.push_back("gateway.provider must be 'http' or 'mock'");
  }
  if (gateway.provider == "mock" && !gateway.mock_fixture.empty() && !fs::exists(gateway.mock_fixture)) {
    p.push_back("gateway.mock_fixture " + gateway.mock_fixture.string() + " does not exist");
  }
  if (gateway.retries < 0) p.push_back("gateway.retries must be >= 0");
  if (gateway.backoff_ms < 0) p.push_back("gateway.backoff_ms must be >= 0");
  if (gateway.concurrency < 1) p.push_back("gateway.concurrency must be >= 1");
  if (gateway.max_tokens < 1) p.push_back("gateway.max_tokens must be >= 1");
  if (gateway.timeout_s < 1) p.push_back("gateway.timeout_s must be >= 1");
  if (embeddings.mode != "file" && embeddings.mode != "remote") {
    p.push_back("embeddings.mode must be 'file' or 'remote'");
  }
  if (embeddings.text_mode != "hashed" && embeddings.text_mode != "remote") {
    p.push_back("embeddings.text_mode must be 'hashed' or 'remote'");
  }
  if (embeddings.mode == "file" && !embeddings.path.empty() && !fs::exists(embeddings.path)) {
    p.push_back("embeddings.path " + embeddings.path.string() + " does not exist");
  }
  if (!kc.prompts_dir.empty() && !fs::is_directory(kc.prompts_dir)) {
    p.push_back("kc.prompts_dir " + kc.prompts_dir.string() + " is not a directory");
  }
  if (kc.exemplars_per_problem < 1) p.push_back("kc.exemplars_per_problem must be >= 1");
  if (kc.target_n < 1) p.push_back("kc.target_n must be >= 1");
  if (analytics.lambda < 0) p.push_back("analytics.lambda must be >= 0");
  if (analytics.min_support < 1) p.push_back("analytics.min_support must be >= 1");
  if (!(analytics.train_fraction > 0 && analytics.train_fraction < 1)) {
    p.push_back("analytics.train_fraction must lie in (0, 1)");
  }
  if (!(analytics.threshold > 0 && analytics.threshold <= 1)) p.push_back("analytics.threshold must lie in (0, 1]");
  if (analytics.max_iter < 1) p.push_back("analytics.max_iter must be >= 1");
  if (plot.max_opportunity && *plot.max_opportunity < 1) p.push_back("plot.max_opportunity must be >= 1");
  if (worksheet_size < 1) p.push_back("evaluation.worksheet_size must be >= 1");
  if (p.empty()) return;
  std::string msg = "invalid configuration";
  for (const auto& s : p) msg += "\n  - " + s;
  throw ValidationError(msg);
}

json RunConfig::content_settings() const {
  return {{"gateway", {{"provider", gateway.provider}, {"model", gateway.model}, {"max_tokens", gateway.max_tokens}}},
          {"embeddings", {{"mode", embeddings.mode}, {"text_mode", embeddings.text_mode}}},
          {"seeds", {{"kmeans", seeds.kmeans}, {"split", seeds.split}, {"sample", seeds.sample}}},
          {"kc", {{"exemplars_per_problem", kc.exemplars_per_problem}, {"target_n", kc.target_n}}},
          {"analytics",
           {{"lambda", format_double(analytics.lambda)},
            {"min_support", analytics.min_support},
            {"train_fraction", format_double(analytics.train_fraction)},
            {"threshold", format_double(analytics.threshold)},
            {"max_iter", analytics.max_iter}}}};
}

std::string directory_fingerprint(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    files.emplace_back(fs::relative(entry.path(), root).generic_string(), file_digest(entry.path()));
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& [name, digest] : files) acc += name + '\0' + digest + '\n';
  return sha256_hex(acc);
}

std::string RunConfig::hash() const {
  json j = content_settings();
  j["dataset"] = directory_fingerprint(dataset);
  if (!kc.prompts_dir.empty()) j["prompts"] = directory_fingerprint(kc.prompts_dir);
  return sha256_hex(j.dump()).substr(0, 16);
}

}  // namespace kclab
