#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kclab/config.hpp"
#include "kclab/embedding.hpp"
#include "kclab/evaluation.hpp"
#include "kclab/llm/gateway.hpp"

namespace kclab {

enum class Stage { ingest, gen_kcs, map, label, curves, afm, report };

std::string to_string(Stage stage);
Stage parse_stage(std::string_view text);
const std::vector<Stage>& all_stages();

/// Substitutes for the configured services (tests, offline runs).
struct PipelineHooks {
  std::shared_ptr<llm::Provider> provider;
  std::shared_ptr<TextEmbedder> text_embedder;
  std::shared_ptr<TextEmbedder> code_embedder;
};

struct StageOutcome {
  Stage stage = Stage::ingest;
  bool ok = false;
  std::string message;
  nlohmann::json counts = nlohmann::json::object();
  double seconds = 0.0;
};

/// Artifact metadata carried by every output: CSVs start with
/// "# kclab {json}", JSON documents hold it under "meta".
nlohmann::json artifact_meta(const std::string& config_hash, Stage stage);

/// Reads the metadata of an existing artifact; nullopt when the file has none.
std::optional<nlohmann::json> read_artifact_meta(const std::filesystem::path& path);

class Pipeline {
public:
  explicit Pipeline(RunConfig config, PipelineHooks hooks = {});
  ~Pipeline();

  const RunConfig& config() const { return config_; }
  const std::string& config_hash() const { return hash_; }

  /// Runs one stage; failures are reported in the outcome, not thrown.
  StageOutcome run(Stage stage);
  /// Runs stages in order, stopping after the first failure.
  std::vector<StageOutcome> run(const std::vector<Stage>& stages);

  std::filesystem::path run_dir() const;
  std::filesystem::path run_dir(KcSetKind kc_set, LabelMethod method) const;

  /// Samples the current run's labels into a blank worksheet.
  std::filesystem::path write_worksheet(int n);

  /// Gateway statistics accumulated by this pipeline (zero if never used).
  llm::GatewayStats gateway_stats() const;

private:
  struct Impl;
  RunConfig config_;
  std::string hash_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace kclab
