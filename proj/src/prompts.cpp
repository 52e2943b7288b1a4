#include "kclab/prompts.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "kclab/error.hpp"
#include "kclab/util/files.hpp"

using nlohmann::json;

namespace kclab {

namespace {

struct BuiltinFile {
  const char* path;
  const char* text;
};

// Generated from prompts/ at configure time.
#include "kclab_builtin_prompts.inc"

std::string strip_trailing_newline(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace

void FewShotExample::validate() const {
  std::set<KcId> listed, answered;
  for (const auto& kc : kc_list) listed.insert(kc.kc_id);
  for (const auto& j : expected_output) {
    if (!answered.insert(j.kc_id).second) throw ValidationError("few-shot answers KC '" + j.kc_id + "' twice");
    if (!j.used && j.correct) throw ValidationError("few-shot marks unused KC '" + j.kc_id + "' correct");
  }
  if (listed != answered || kc_list.empty()) {
    throw ValidationError("few-shot expected output must cover exactly its KC list");
  }
}

FewShotExample parse_fewshot_json(std::string_view text, std::string_view source) {
  FewShotExample ex;
  try {
    const auto doc = json::parse(text);
    ex.problem_statement = doc.at("problem_statement").get<std::string>();
    ex.code = doc.at("code").get<std::string>();
    ex.analysis = doc.value("analysis", std::string());
    for (const auto& k : doc.at("kcs")) {
      ex.kc_list.push_back({k.at("kc_id").get<std::string>(), k.at("name").get<std::string>(),
                            k.value("description", std::string()), KcOrigin::human});
    }
    for (const auto& e : doc.at("expected")) {
      ex.expected_output.push_back({e.at("kc_id").get<std::string>(), e.at("used").get<bool>(),
                                    e.at("correct").get<bool>(), e.value("reasoning", std::string())});
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string(source) + ": " + e.what());
  }
  ex.validate();
  return ex;
}

PromptLibrary PromptLibrary::builtin() {
  PromptLibrary lib;
  std::vector<std::pair<std::string, std::string>> shots;
  for (const auto& f : kBuiltinPromptFiles) {
    const std::string path = f.path;
    if (path.starts_with("fewshots/") && path.ends_with(".json")) {
      shots.emplace_back(path, f.text);
    } else if (path.ends_with(".txt")) {
      lib.templates_[path.substr(0, path.size() - 4)] = strip_trailing_newline(f.text);
    }
  }
  std::sort(shots.begin(), shots.end());
  for (const auto& [path, text] : shots) lib.fewshots_.push_back(parse_fewshot_json(text, path));
  return lib;
}

PromptLibrary PromptLibrary::load_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw NotFoundError("prompts directory '" + dir.string() + "' does not exist");
  PromptLibrary lib = builtin();
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      lib.templates_[entry.path().stem().string()] = strip_trailing_newline(read_text_file(entry.path()));
    }
  }
  if (fs::is_directory(dir / "fewshots")) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir / "fewshots")) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    lib.fewshots_.clear();
    for (const auto& f : files) lib.fewshots_.push_back(parse_fewshot_json(read_text_file(f), f.string()));
  }
  return lib;
}

const std::string& PromptLibrary::get(std::string_view name) const {
  const auto it = templates_.find(name);
  if (it == templates_.end()) throw NotFoundError("no prompt template named '" + std::string(name) + "'");
  return it->second;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto it = vars.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

std::string format_kc_list(const std::vector<KnowledgeComponent>& kcs) {
  std::string out;
  for (const auto& kc : kcs) {
    out += "- " + kc.kc_id + ": " + kc.name;
    if (!kc.description.empty()) out += ". " + kc.description;
    out += "\n";
  }
  if (!out.empty()) out.pop_back();
  return out;
}

}  // namespace kclab
