#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kclab/config.hpp"
#include "kclab/error.hpp"
#include "kclab/evaluation.hpp"
#include "kclab/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string method;
  std::string kc_set;
  std::optional<std::uint64_t> seed;
  std::string plot_kind;
  std::optional<int> max_opportunity;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Run configuration (TOML)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--method", o.method, "Labeling method: llm-cot | llm-direct | baseline");
  cmd->add_option("--kc-set", o.kc_set, "KC set: human | generated | selected");
  cmd->add_option("--seed", o.seed, "Overrides every seed in the configuration");
  cmd->add_option("--plot-kind", o.plot_kind, "Plot kind: aggregated | per_kc");
  cmd->add_option("--max-opportunity", o.max_opportunity, "Drop plot points beyond this opportunity");
}

kclab::RunConfig load(const Overrides& o) {
  auto c = kclab::load_run_config(o.config);
  if (!o.method.empty()) c.method = kclab::parse_label_method(o.method);
  if (!o.kc_set.empty()) c.kc_set = kclab::parse_kc_set_kind(o.kc_set);
  if (o.seed) c.seeds = {*o.seed, *o.seed, *o.seed};
  if (!o.plot_kind.empty()) c.plot.kind = kclab::parse_plot_kind(o.plot_kind);
  if (o.max_opportunity) c.plot.max_opportunity = o.max_opportunity;
  c.validate();
  return c;
}

std::vector<kclab::Stage> split_stages(const std::string& list) {
  std::vector<kclab::Stage> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(kclab::parse_stage(item));
  }
  if (out.empty()) throw kclab::ParseError("--stages lists no stage");
  return out;
}

int run_stages(const Overrides& o, const std::vector<kclab::Stage>& stages) {
  kclab::Pipeline pipeline(load(o));
  std::cerr << "kclab " << kclab::kVersion << " config " << pipeline.config_hash() << " method "
            << kclab::to_string(pipeline.config().method) << " kc-set " << kclab::to_string(pipeline.config().kc_set)
            << "\n";
  const auto outcomes = pipeline.run(stages);
  bool ok = outcomes.size() == stages.size();
  for (const auto& r : outcomes) {
    ok = ok && r.ok;
    if (r.ok) {
      std::cout << kclab::to_string(r.stage) << ": ok " << r.counts.dump() << "\n";
    } else {
      std::cout << kclab::to_string(r.stage) << ": failed\n";
      std::cerr << "kclab " << kclab::to_string(r.stage) << ": " << r.message << "\n";
    }
  }
  for (std::size_t i = outcomes.size(); i < stages.size(); ++i) {
    std::cout << kclab::to_string(stages[i]) << ": skipped\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KC-level correctness labeling and learning-curve analysis"};
  app.set_version_flag("--version", std::string(kclab::kVersion));
  app.require_subcommand(1);

  Overrides o;
  std::vector<std::pair<CLI::App*, kclab::Stage>> stage_cmds;
  const std::pair<const char*, const char*> stage_help[] = {
      {"ingest", "Load and validate the dataset"},
      {"gen-kcs", "Generate a KC set from exemplar solutions"},
      {"map", "Map generated KCs onto each student's solution"},
      {"label", "Label KC-level correctness of first attempts"},
      {"curves", "Build learning curves and fit power laws"},
      {"afm", "Fit the additive factors model and score held-out students"},
      {"report", "Write comparison tables and learning-curve plots"}};
  for (const auto& [name, help] : stage_help) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, o);
    stage_cmds.emplace_back(cmd, kclab::parse_stage(name));
  }

  std::string stages = "ingest,gen-kcs,map,label,curves,afm,report";
  auto* run = app.add_subcommand("run", "Run several stages in order");
  add_common(run, o);
  run->add_option("--stages", stages, "Comma-separated stage list")->capture_default_str();

  int worksheet_n = 0;
  auto* worksheet = app.add_subcommand("worksheet", "Sample labeled submissions into a blank annotation worksheet");
  add_common(worksheet, o);
  worksheet->add_option("--n", worksheet_n, "Submissions to sample (default: evaluation.worksheet_size)");

  std::string rater_a, rater_b, kappa_out;
  auto* kappa = app.add_subcommand("kappa", "Cohen's kappa between two judgment files");
  kappa->add_option("--a", rater_a, "Annotations or labels CSV (defines the compared items)")
      ->required()
      ->check(CLI::ExistingFile);
  kappa->add_option("--b", rater_b, "Annotations or labels CSV")->required()->check(CLI::ExistingFile);
  kappa->add_option("--out", kappa_out, "Also write the agreement report as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [cmd, stage] : stage_cmds) {
      if (cmd->parsed()) return run_stages(o, {stage});
    }
    if (run->parsed()) return run_stages(o, split_stages(stages));
    if (worksheet->parsed()) {
      kclab::Pipeline pipeline(load(o));
      const int n = worksheet_n > 0 ? worksheet_n : pipeline.config().worksheet_size;
      std::cout << pipeline.write_worksheet(n).string() << "\n";
      return 0;
    }
    if (kappa->parsed()) {
      const auto report =
          kclab::align_and_kappa(kclab::read_judgments_csv(rater_a), kclab::read_judgments_csv(rater_b));
      const auto text = report.to_json().dump(2) + "\n";
      if (!kappa_out.empty()) std::ofstream(kappa_out) << text;
      std::cout << text;
      return 0;
    }
  } catch (const kclab::Error& e) {
    std::cerr << "kclab: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "kclab: unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
