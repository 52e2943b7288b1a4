#include "kclab/labeling.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "kclab/error.hpp"
#include "kclab/util/format.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace kclab {

std::string to_string(LabelMethod method) {
  switch (method) {
    case LabelMethod::llm_cot: return "llm_cot";
    case LabelMethod::llm_direct: return "llm_direct";
    case LabelMethod::baseline: return "baseline";
  }
  return "baseline";
}

LabelMethod parse_label_method(std::string_view text) {
  std::string t(text);
  std::replace(t.begin(), t.end(), '-', '_');
  if (t == "llm_cot") return LabelMethod::llm_cot;
  if (t == "llm_direct") return LabelMethod::llm_direct;
  if (t == "baseline") return LabelMethod::baseline;
  throw ParseError("unknown labeling method '" + std::string(text) + "' (llm-cot | llm-direct | baseline)");
}

namespace {

std::string render_judgments(const std::vector<KcJudgment>& judgments, bool with_reasoning) {
  std::string out = "```json\n[\n";
  for (std::size_t i = 0; i < judgments.size(); ++i) {
    ordered_json o;
    o["kc_id"] = judgments[i].kc_id;
    o["used"] = judgments[i].used;
    o["correct"] = judgments[i].correct;
    if (with_reasoning) o["reasoning"] = judgments[i].reasoning;
    out += "  " + o.dump() + (i + 1 < judgments.size() ? ",\n" : "\n");
  }
  out += "]\n```";
  return out;
}

std::string render_query(const llm::LlmContext& ctx, const std::string& statement, const std::string& code,
                         const std::vector<KnowledgeComponent>& kcs) {
  return render_template(ctx.prompts.get("label.user"),
                         {{"problem_statement", statement}, {"code", code}, {"kc_list", format_kc_list(kcs)}});
}

}  // namespace

std::string render_fewshot_answer(const FewShotExample& example, PromptMode mode) {
  if (mode == PromptMode::direct) return render_judgments(example.expected_output, false);
  std::string out = example.analysis;
  if (!out.empty()) out += "\n\n";
  return out + render_judgments(example.expected_output, true);
}

llm::ChatRequest build_label_prompt(const llm::LlmContext& ctx, const Problem& problem, const std::string& code,
                                    const std::vector<KnowledgeComponent>& kcs,
                                    const std::vector<FewShotExample>& fewshots, PromptMode mode) {
  if (kcs.empty()) {
    throw PreconditionError("build_label_prompt: no KCs assigned for problem '" + problem.problem_id + "'");
  }
  std::vector<llm::Message> messages;
  messages.push_back({llm::Role::system,
                      ctx.prompts.get(mode == PromptMode::cot ? "label_cot.system" : "label_direct.system")});
  for (const auto& shot : fewshots) {
    messages.push_back({llm::Role::user, render_query(ctx, shot.problem_statement, shot.code, shot.kc_list)});
    messages.push_back({llm::Role::assistant, render_fewshot_answer(shot, mode)});
  }
  messages.push_back({llm::Role::user, render_query(ctx, problem.statement, code, kcs)});
  auto request = ctx.request(std::move(messages));
  request.temperature = 0.0;
  request.top_p = 1.0;
  return request;
}

std::vector<KcJudgment> parse_label_response(const std::string& content, const std::vector<KcId>& expected_kcs) {
  const auto block = llm::extract_json(content, llm::JsonShape::array);
  if (!block) throw ParseError("no JSON array of KC judgments found");
  std::map<KcId, KcJudgment> by_id;
  for (const auto& item : block->value) {
    if (!item.is_object()) throw ParseError("KC judgment entries must be objects");
    if (!item.contains("kc_id") || !item["kc_id"].is_string()) throw ParseError("KC judgment without string kc_id");
    KcJudgment j;
    j.kc_id = item["kc_id"].get<std::string>();
    for (const char* field : {"used", "correct"}) {
      if (!item.contains(field) || !item[field].is_boolean()) {
        throw ParseError("KC '" + j.kc_id + "': field '" + field + "' must be a boolean");
      }
    }
    j.used = item["used"].get<bool>();
    j.correct = item["correct"].get<bool>();
    if (item.contains("reasoning")) {
      if (!item["reasoning"].is_string()) throw ParseError("KC '" + j.kc_id + "': reasoning must be a string");
      j.reasoning = item["reasoning"].get<std::string>();
    }
    if (!by_id.emplace(j.kc_id, j).second) throw ParseError("KC '" + j.kc_id + "' judged twice");
  }
  std::vector<std::string> missing, extra;
  const std::set<KcId> expected(expected_kcs.begin(), expected_kcs.end());
  for (const auto& id : expected_kcs) {
    if (!by_id.count(id)) missing.push_back(id);
  }
  for (const auto& [id, _] : by_id) {
    if (!expected.count(id)) extra.push_back(id);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "KC coverage mismatch;";
    if (!missing.empty()) msg += " missing: " + join_offenders(missing);
    if (!extra.empty()) msg += " unexpected: " + join_offenders(extra);
    throw ParseError(msg);
  }

  std::vector<KcJudgment> out;
  for (const auto& id : expected_kcs) {
    KcJudgment j = by_id.at(id);
    std::string rationale = block->prefix;
    if (!rationale.empty() && !j.reasoning.empty()) rationale += "\n\n";
    rationale += j.reasoning;
    if (!j.used && j.correct) {
      j.correct = false;
      rationale += (rationale.empty() ? "" : " ");
      rationale += "[coerced: KC not used, labeled incorrect]";
    }
    j.reasoning = std::move(rationale);
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<KCLabel> label_submission(const llm::LlmContext& ctx, const Problem& problem, const AttemptPair& pair,
                                      const std::vector<KnowledgeComponent>& kcs, PromptMode mode,
                                      const std::vector<FewShotExample>& fewshots) {
  auto request = build_label_prompt(ctx, problem, pair.first.code, kcs, fewshots, mode);
  std::vector<KcId> ids;
  for (const auto& kc : kcs) ids.push_back(kc.kc_id);
  std::string id_list;
  for (const auto& id : ids) id_list += (id_list.empty() ? "" : ", ") + id;
  const auto reminder = render_template(ctx.prompts.get("label.format_reminder"), {{"kc_ids", id_list}});

  const std::function<std::vector<KcJudgment>(const std::string&)> parse = [&](const std::string& content) {
    return parse_label_response(content, ids);
  };
  const auto judgments = llm::complete_structured(ctx, std::move(request), reminder, parse);
  const auto method = mode == PromptMode::cot ? LabelMethod::llm_cot : LabelMethod::llm_direct;
  std::vector<KCLabel> labels;
  for (const auto& j : judgments) {
    labels.push_back({pair.student_id, pair.problem_id, j.kc_id, j.used, j.used && j.correct,
                      mode == PromptMode::cot ? j.reasoning : std::string(), method});
  }
  return labels;
}

std::vector<KCLabel> baseline_labels(const AttemptPair& pair, const std::vector<KnowledgeComponent>& kcs,
                                     double threshold) {
  const bool correct = is_problem_correct(pair.first, threshold);
  std::vector<KCLabel> labels;
  labels.reserve(kcs.size());
  for (const auto& kc : kcs) {
    labels.push_back({pair.student_id, pair.problem_id, kc.kc_id, correct, correct, "", LabelMethod::baseline});
  }
  return labels;
}

json LabelRunReport::to_json() const {
  json f = json::array();
  for (const auto& x : failures) {
    f.push_back({{"student_id", x.student_id}, {"problem_id", x.problem_id}, {"reason", x.reason}});
  }
  return {{"method", to_string(method)},
          {"submissions", submissions},
          {"labeled_submissions", labeled_submissions},
          {"labels", labels},
          {"failures", f},
          {"gateway_requests", gateway_requests},
          {"cache_hits", cache_hits},
          {"provider_attempts", provider_attempts},
          {"cache_hit_ratio", cache_hit_ratio()},
          {"wall_seconds", wall_seconds}};
}

LabelRunResult label_all(const llm::LlmContext* ctx, const std::vector<LabelTask>& tasks,
                         const LabelRunOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const bool uses_llm = options.method != LabelMethod::baseline;
  if (uses_llm && !ctx) throw PreconditionError("LLM labeling requires a configured gateway");
  const auto before = uses_llm ? ctx->gateway.stats() : llm::GatewayStats{};
  const PromptMode mode = options.method == LabelMethod::llm_direct ? PromptMode::direct : PromptMode::cot;

  std::vector<std::vector<KCLabel>> per_task(tasks.size());
  std::vector<std::optional<LabelFailure>> failures(tasks.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto worker = [&] {
    while (!abort.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const auto& t = tasks[i];
      try {
        if (!uses_llm) {
          per_task[i] = baseline_labels(t.pair, t.kcs, options.threshold);
        } else {
          if (!t.problem) throw PreconditionError("label task without problem");
          per_task[i] = label_submission(*ctx, *t.problem, t.pair, t.kcs, mode, ctx->prompts.fewshots());
        }
      } catch (const AuthenticationError&) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      } catch (const Error& e) {
        failures[i] = LabelFailure{t.pair.student_id, t.pair.problem_id, e.what()};
      }
    }
  };
  const int threads = uses_llm ? std::max(1, std::min<int>(options.concurrency, static_cast<int>(tasks.size()))) : 1;
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);

  LabelRunResult result;
  result.report.method = options.method;
  result.report.submissions = tasks.size();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (failures[i]) {
      result.report.failures.push_back(*failures[i]);
      continue;
    }
    ++result.report.labeled_submissions;
    for (auto& l : per_task[i]) result.labels.push_back(std::move(l));
  }
  std::sort(result.labels.begin(), result.labels.end(), [](const KCLabel& a, const KCLabel& b) {
    return std::tie(a.student_id, a.problem_id, a.kc_id) < std::tie(b.student_id, b.problem_id, b.kc_id);
  });
  std::sort(result.report.failures.begin(), result.report.failures.end(),
            [](const LabelFailure& a, const LabelFailure& b) {
              return std::tie(a.student_id, a.problem_id) < std::tie(b.student_id, b.problem_id);
            });
  result.report.labels = result.labels.size();
  if (uses_llm) {
    const auto after = ctx->gateway.stats();
    result.report.gateway_requests = after.requests - before.requests;
    result.report.cache_hits = after.cache_hits - before.cache_hits;
    result.report.provider_attempts = after.provider_attempts - before.provider_attempts;
  }
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

csv::Writer labels_writer(const std::vector<KCLabel>& labels) {
  csv::Writer w({"student_id", "problem_id", "kc_id", "used", "correct", "method", "rationale"});
  for (const auto& l : labels) {
    w.row({l.student_id, l.problem_id, l.kc_id, l.used ? "1" : "0", l.correct ? "1" : "0", to_string(l.method),
           l.rationale});
  }
  return w;
}

std::vector<KCLabel> parse_labels_csv(const csv::Table& t) {
  const auto cs = t.column("student_id"), cp = t.column("problem_id"), ck = t.column("kc_id"),
             cu = t.column("used"), cc = t.column("correct"), cm = t.column("method"), cr = t.column("rationale");
  std::vector<KCLabel> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto where = t.source + ":" + std::to_string(t.line_numbers[r]);
    try {
      KCLabel l{row[cs], row[cp], row[ck], parse_bool(row[cu], "used"), parse_bool(row[cc], "correct"), row[cr],
                parse_label_method(row[cm])};
      if (!l.used && l.correct) throw ValidationError(where + ": label marks an unused KC correct");
      out.push_back(std::move(l));
    } catch (const ValidationError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return out;
}

std::vector<KCLabel> read_labels_csv(const std::filesystem::path& path) {
  return parse_labels_csv(csv::read_file(path));
}

}  // namespace kclab
