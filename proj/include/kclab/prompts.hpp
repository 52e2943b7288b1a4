#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kclab/core.hpp"

namespace kclab {

/// One KC judgment as it appears in a structured labeling answer.
struct KcJudgment {
  KcId kc_id;
  bool used = false;
  bool correct = false;
  std::string reasoning;
};

/// Hand-built demonstration shown before the real labeling query.
struct FewShotExample {
  std::string problem_statement;
  std::string code;
  std::vector<KnowledgeComponent> kc_list;
  std::string analysis;  // step-by-step prose, shown in chain-of-thought mode only
  std::vector<KcJudgment> expected_output;

  /// expected_output must cover exactly kc_list. Throws ValidationError.
  void validate() const;
};

/// Named prompt templates plus labeling few-shots. Template names are file
/// stems under a prompts directory ("label.user", "generate.system", ...);
/// few-shots live in fewshots/*.json.
class PromptLibrary {
public:
  /// Templates compiled in from the repository's prompts/ directory.
  static PromptLibrary builtin();

  /// Built-in library with any files found in `dir` taking precedence.
  static PromptLibrary load_dir(const std::filesystem::path& dir);

  const std::string& get(std::string_view name) const;
  const std::vector<FewShotExample>& fewshots() const { return fewshots_; }

  void set(std::string name, std::string text) { templates_[std::move(name)] = std::move(text); }
  void set_fewshots(std::vector<FewShotExample> shots) { fewshots_ = std::move(shots); }

private:
  std::map<std::string, std::string, std::less<>> templates_;
  std::vector<FewShotExample> fewshots_;
};

FewShotExample parse_fewshot_json(std::string_view text, std::string_view source);

/// Substitutes `{name}` for each entry of `vars`; other braces are left alone.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars);

/// "- id: name. description" per line.
std::string format_kc_list(const std::vector<KnowledgeComponent>& kcs);

}  // namespace kclab
