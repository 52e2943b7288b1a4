#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "kclab/core.hpp"
#include "kclab/labeling.hpp"

namespace kclab {

inline constexpr const char* kVersion = "0.1.0";

struct GatewayConfig {
  std::string provider = "http";  // http | mock
  std::string endpoint = "https://api.openai.com/v1";
  std::string model = "gpt-4o";
  std::filesystem::path mock_fixture;
  std::string api_key;  // from KCLAB_API_KEY, never serialized
  int retries = 3;
  int backoff_ms = 500;
  int concurrency = 4;
  int max_tokens = 2048;
  int timeout_s = 120;
};

struct EmbeddingConfig {
  std::string mode = "file";  // file | remote
  std::filesystem::path path;
  std::string endpoint;
  std::string text_mode = "hashed";  // hashed | remote
  std::string text_endpoint;
};

struct SeedConfig {
  std::uint64_t kmeans = 17;
  std::uint64_t split = 23;
  std::uint64_t sample = 29;
};

struct KcConfig {
  int exemplars_per_problem = 5;
  int target_n = 20;
  std::filesystem::path prompts_dir;
};

struct AnalyticsConfig {
  double lambda = 0.1;
  int min_support = 5;
  double train_fraction = 0.8;
  double threshold = kDefaultCorrectThreshold;
  int max_iter = 500;
};

enum class PlotKind { per_kc, aggregated };

struct PlotConfig {
  PlotKind kind = PlotKind::aggregated;
  std::optional<int> max_opportunity;
};

struct RunConfig {
  std::filesystem::path config_file;
  std::filesystem::path dataset;
  std::filesystem::path output_dir;
  std::filesystem::path cache_dir;
  GatewayConfig gateway;
  EmbeddingConfig embeddings;
  SeedConfig seeds;
  KcConfig kc;
  LabelMethod method = LabelMethod::baseline;
  KcSetKind kc_set = KcSetKind::human;
  AnalyticsConfig analytics;
  PlotConfig plot;
  int worksheet_size = 80;

  /// Settings that determine artifact contents. Excludes the method and KC
  /// set selectors (they pick the run directory), plot options and gateway
  /// transport knobs (retries, backoff, concurrency, timeout).
  nlohmann::json content_settings() const;
  /// SHA-256 of content_settings() plus fingerprints of the dataset files and
  /// any prompt override directory.
  std::string hash() const;

  /// Throws ValidationError describing every problem found.
  void validate() const;
};

/// Parses a TOML run file. Relative paths resolve against the file's
/// directory. Unknown sections or keys are rejected. KCLAB_API_KEY fills the
/// gateway key.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(std::string_view toml_text, const std::filesystem::path& base_dir,
                           std::string_view source = "<memory>");

std::string to_string(PlotKind kind);
PlotKind parse_plot_kind(std::string_view text);

/// Hash of every regular file below `root` (names and contents).
std::string directory_fingerprint(const std::filesystem::path& root);

}  // namespace kclab
