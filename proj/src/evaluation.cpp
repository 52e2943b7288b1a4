#include "kclab/evaluation.hpp"

#include <algorithm>
#include <set>

#include "kclab/error.hpp"
#include "kclab/util/format.hpp"
#include "kclab/util/random.hpp"

using nlohmann::json;

namespace kclab {

json AgreementReport::to_json() const {
  return {{"n", n},
          {"observed_agreement", observed_agreement},
          {"expected_agreement", expected_agreement},
          {"kappa", kappa},
          {"confusion",
           {{"a_true_b_true", confusion[1][1]},
            {"a_true_b_false", confusion[1][0]},
            {"a_false_b_true", confusion[0][1]},
            {"a_false_b_false", confusion[0][0]}}}};
}

AgreementReport cohens_kappa(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) {
    throw PreconditionError("kappa: rater lists differ in length (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw PreconditionError("kappa: no items");
  AgreementReport r;
  r.n = a.size();
  for (std::size_t i = 0; i < a.size(); ++i) ++r.confusion[a[i] ? 1 : 0][b[i] ? 1 : 0];
  const double n = static_cast<double>(r.n);
  r.observed_agreement = static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) / n;
  const double a_true = static_cast<double>(r.confusion[1][0] + r.confusion[1][1]) / n;
  const double b_true = static_cast<double>(r.confusion[0][1] + r.confusion[1][1]) / n;
  r.expected_agreement = a_true * b_true + (1.0 - a_true) * (1.0 - b_true);
  // p_e = 1 only when both raters give the same constant answer.
  if (r.expected_agreement >= 1.0) {
    r.kappa = 1.0;
  } else {
    r.kappa = (r.observed_agreement - r.expected_agreement) / (1.0 - r.expected_agreement);
  }
  return r;
}

std::vector<WorksheetRow> sample_for_human_eval(const std::vector<KCLabel>& labels, int n, std::uint64_t seed,
                                                const DatasetBundle& bundle, const KCSet& kcs) {
  std::map<StudentProblem, std::vector<const KCLabel*>> groups;
  for (const auto& l : labels) groups[{l.student_id, l.problem_id}].push_back(&l);
  if (n <= 0) throw PreconditionError("worksheet sample size must be positive");
  if (static_cast<std::size_t>(n) > groups.size()) {
    throw PreconditionError("worksheet sample of " + std::to_string(n) + " exceeds the " +
                            std::to_string(groups.size()) + " labeled submissions");
  }
  std::vector<StudentProblem> keys;
  for (const auto& [k, _] : groups) keys.push_back(k);
  Rng rng(seed);
  rng.shuffle(keys);
  keys.resize(static_cast<std::size_t>(n));

  std::map<StudentProblem, const Submission*> first_attempts;
  for (const auto& s : bundle.submissions) {
    if (s.attempt_index == 1) first_attempts[{s.student_id, s.problem_id}] = &s;
  }
  std::vector<WorksheetRow> rows;
  for (const auto& key : keys) {
    const auto sub = first_attempts.find(key);
    if (sub == first_attempts.end()) {
      throw IntegrityError("no first attempt for (" + key.student_id + ", " + key.problem_id + ")");
    }
    auto members = groups.at(key);
    std::sort(members.begin(), members.end(), [](const KCLabel* a, const KCLabel* b) { return a->kc_id < b->kc_id; });
    const auto& statement = bundle.problem(key.problem_id).statement;
    for (const auto* l : members) {
      const auto* kc = kcs.find(l->kc_id);
      if (!kc) throw IntegrityError("label references unknown KC '" + l->kc_id + "'");
      rows.push_back({l->student_id, l->problem_id, l->kc_id, statement, sub->second->code, kc->name, ""});
    }
  }
  return rows;
}

csv::Writer worksheet_writer(const std::vector<WorksheetRow>& rows) {
  csv::Writer w({"student_id", "problem_id", "kc_id", "statement", "code", "kc_name", "judgment"});
  for (const auto& r : rows) w.row({r.student_id, r.problem_id, r.kc_id, r.statement, r.code, r.kc_name, r.judgment});
  return w;
}

namespace {

bool parse_judgment(const std::string& raw, const std::string& where) {
  std::string t = trim(raw);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "1" || t == "true" || t == "yes" || t == "correct") return true;
  if (t == "0" || t == "false" || t == "no" || t == "incorrect" || t == "unused") return false;
  if (t.empty()) throw ParseError(where + ": blank judgment");
  throw ParseError(where + ": unrecognized judgment '" + raw + "'");
}

}  // namespace

std::map<JudgmentKey, bool> read_judgments_csv(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const auto cs = t.column("student_id"), cp = t.column("problem_id"), ck = t.column("kc_id");
  auto cj = t.find_column("judgment");
  if (cj < 0) cj = t.find_column("correct");
  if (cj < 0) throw ParseError(t.source + ": needs a 'judgment' or 'correct' column");
  std::map<JudgmentKey, bool> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto where = t.source + ":" + std::to_string(t.line_numbers[r]);
    const bool v = parse_judgment(row[static_cast<std::size_t>(cj)], where);
    if (!out.emplace(JudgmentKey{row[cs], row[cp], row[ck]}, v).second) {
      throw ValidationError(where + ": duplicate judgment for (" + row[cs] + ", " + row[cp] + ", " + row[ck] + ")");
    }
  }
  return out;
}

std::map<JudgmentKey, bool> judgments_from_labels(const std::vector<KCLabel>& labels) {
  std::map<JudgmentKey, bool> out;
  for (const auto& l : labels) out[{l.student_id, l.problem_id, l.kc_id}] = l.correct;
  return out;
}

AgreementReport align_and_kappa(const std::map<JudgmentKey, bool>& a, const std::map<JudgmentKey, bool>& b) {
  std::vector<bool> va, vb;
  std::vector<std::string> missing;
  for (const auto& [key, v] : a) {
    const auto it = b.find(key);
    if (it == b.end()) {
      missing.push_back("(" + key.student_id + ", " + key.problem_id + ", " + key.kc_id + ")");
      continue;
    }
    va.push_back(v);
    vb.push_back(it->second);
  }
  if (!missing.empty()) throw IntegrityError("items judged by only one rater: " + join_offenders(missing));
  return cohens_kappa(va, vb);
}

std::vector<ComparisonRow> compare_methods(const std::vector<MethodResult>& results) {
  if (results.empty()) throw PreconditionError("compare_methods: no results");
  std::vector<ComparisonRow> rows;
  for (const auto& r : results) {
    ComparisonRow row{r.method, r.kc_set, std::nullopt, std::nullopt, r.auc, static_cast<int>(r.fits.size()),
                      std::nullopt, std::nullopt};
    if (!r.fits.empty()) {
      double rmse = 0.0, r2 = 0.0;
      for (const auto& f : r.fits) {
        rmse += f.fit.rmse;
        r2 += f.fit.r2;
      }
      row.mean_rmse = rmse / static_cast<double>(r.fits.size());
      row.mean_r2 = r2 / static_cast<double>(r.fits.size());
    }
    if (r.pooled) {
      row.pooled_rmse = r.pooled->rmse;
      row.pooled_r2 = r.pooled->r2;
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<ComparisonRow> reference_rows() {
  return {{"baseline", "human", 0.110, 0.253, 0.529, 0, std::nullopt, std::nullopt},
          {"llm_cot", "selected", 0.069, 0.383, 0.631, 0, std::nullopt, std::nullopt}};
}

namespace {

std::string cell(const std::optional<double>& v, int decimals) { return v ? format_fixed(*v, decimals) : "n/a"; }
std::string raw(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

std::string comparison_markdown(const std::vector<ComparisonRow>& rows, const std::vector<ComparisonRow>& reference) {
  std::string out = "| Method | KC set | RMSE | r2 | AUC |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out += "| " + r.method + " | " + r.kc_set + " | " + cell(r.mean_rmse, 3) + " | " + cell(r.mean_r2, 3) + " | " +
           cell(r.auc, 3) + " |\n";
  }
  out += "\nRMSE and r2 are means over per-KC power-law fits.\n";
  out += "\n### Pooled aggregate curve\n\n| Method | KC set | KCs | RMSE | r2 |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out += "| " + r.method + " | " + r.kc_set + " | " + std::to_string(r.n_kcs) + " | " + cell(r.pooled_rmse, 3) +
           " | " + cell(r.pooled_r2, 3) + " |\n";
  }
  if (!reference.empty()) {
    out += "\n### Published reference values\n\n| Method | KC set | RMSE | r2 | AUC |\n|---|---|---|---|---|\n";
    for (const auto& r : reference) {
      out += "| " + r.method + " | " + r.kc_set + " | " + cell(r.mean_rmse, 3) + " | " + cell(r.mean_r2, 3) + " | " +
             cell(r.auc, 3) + " |\n";
    }
  }
  return out;
}

csv::Writer comparison_writer(const std::vector<ComparisonRow>& rows) {
  csv::Writer w({"method", "kc_set", "mean_rmse", "mean_r2", "auc", "n_kcs", "pooled_rmse", "pooled_r2"});
  for (const auto& r : rows) {
    w.row({r.method, r.kc_set, raw(r.mean_rmse), raw(r.mean_r2), raw(r.auc), std::to_string(r.n_kcs),
           raw(r.pooled_rmse), raw(r.pooled_r2)});
  }
  return w;
}

}  // namespace kclab
