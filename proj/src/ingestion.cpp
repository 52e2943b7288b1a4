#include "kclab/ingestion.hpp"

#include <algorithm>
#include <set>

#include "kclab/error.hpp"
#include "kclab/util/files.hpp"
#include "kclab/util/format.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kclab {

const Problem* DatasetBundle::find_problem(const std::string& problem_id) const {
  const auto it = std::lower_bound(problems.begin(), problems.end(), problem_id,
                                   [](const Problem& p, const std::string& id) { return p.problem_id < id; });
  return it != problems.end() && it->problem_id == problem_id ? &*it : nullptr;
}

const Problem& DatasetBundle::problem(const std::string& problem_id) const {
  if (const auto* p = find_problem(problem_id)) return *p;
  throw NotFoundError("unknown problem '" + problem_id + "'");
}

const Submission* DatasetBundle::find_submission(const std::string& submission_id) const {
  for (const auto& s : submissions) {
    if (s.submission_id == submission_id) return &s;
  }
  return nullptr;
}

namespace {

std::string where(const csv::Table& t, std::size_t row) {
  return t.source + ":" + std::to_string(t.line_numbers[row]);
}

std::vector<Problem> load_problems(const fs::path& path) {
  const auto t = csv::read_file(path);
  const auto c_id = t.column("problem_id");
  const auto c_stmt = t.column("statement");
  std::vector<Problem> out;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row[c_id].empty()) throw ValidationError(where(t, r) + ": empty problem_id");
    if (row[c_stmt].empty()) throw ValidationError(where(t, r) + ": empty statement for " + row[c_id]);
    if (!seen.insert(row[c_id]).second) {
      throw ValidationError(where(t, r) + ": duplicate problem_id '" + row[c_id] + "'");
    }
    out.push_back({row[c_id], row[c_stmt], {}});
  }
  std::sort(out.begin(), out.end(), [](const Problem& a, const Problem& b) { return a.problem_id < b.problem_id; });
  return out;
}

struct RawSubmission {
  Submission sub;
  std::optional<int> given_attempt;
  bool has_timestamp = false;
  std::size_t file_order = 0;
  std::string location;
};

std::vector<Submission> load_submissions(const fs::path& root, const std::vector<Problem>& problems) {
  const auto t = csv::read_file(root / "submissions.csv");
  const auto c_sid = t.column("submission_id");
  const auto c_student = t.column("student_id");
  const auto c_problem = t.column("problem_id");
  const auto c_attempt = t.find_column("attempt");
  const auto c_ts = t.find_column("timestamp");
  const auto c_score = t.column("score");
  const auto c_code = t.find_column("code");
  const auto c_path = t.find_column("code_path");
  if (c_code < 0 && c_path < 0) {
    throw ParseError(t.source + ": needs a 'code' or 'code_path' column");
  }

  std::set<std::string> problem_ids;
  for (const auto& p : problems) problem_ids.insert(p.problem_id);

  std::vector<RawSubmission> raw;
  std::set<std::string> submission_ids;
  std::set<std::tuple<std::string, std::string, int>> attempt_keys;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    RawSubmission rs;
    rs.location = where(t, r);
    rs.file_order = r;
    Submission& s = rs.sub;
    s.submission_id = row[c_sid];
    s.student_id = row[c_student];
    s.problem_id = row[c_problem];
    if (s.submission_id.empty() || s.student_id.empty() || s.problem_id.empty()) {
      throw ValidationError(rs.location + ": submission_id, student_id and problem_id are required");
    }
    if (!submission_ids.insert(s.submission_id).second) {
      throw ValidationError(rs.location + ": duplicate submission_id '" + s.submission_id + "'");
    }
    if (!problem_ids.count(s.problem_id)) {
      throw IntegrityError(rs.location + ": submission '" + s.submission_id +
                           "' references unknown problem_id '" + s.problem_id + "'");
    }
    try {
      s.score = parse_double(row[c_score], "score");
    } catch (const ParseError& e) {
      throw ParseError(rs.location + ": " + e.what());
    }
    if (s.score < 0.0 || s.score > 1.0) {
      throw ValidationError(rs.location + ": score " + row[c_score] + " outside [0, 1]");
    }
    if (c_attempt >= 0 && !trim(row[static_cast<std::size_t>(c_attempt)]).empty()) {
      long long a = 0;
      try {
        a = parse_int(row[static_cast<std::size_t>(c_attempt)], "attempt");
      } catch (const ParseError& e) {
        throw ParseError(rs.location + ": " + e.what());
      }
      if (a < 1) throw ValidationError(rs.location + ": attempt must be a positive integer");
      rs.given_attempt = static_cast<int>(a);
      if (!attempt_keys.emplace(s.student_id, s.problem_id, *rs.given_attempt).second) {
        throw ValidationError(rs.location + ": duplicate (student, problem, attempt) key (" +
                              s.student_id + ", " + s.problem_id + ", " + std::to_string(a) + ")");
      }
    }
    if (c_ts >= 0 && !trim(row[static_cast<std::size_t>(c_ts)]).empty()) {
      try {
        s.timestamp = parse_rfc3339(trim(row[static_cast<std::size_t>(c_ts)]));
      } catch (const ParseError& e) {
        throw ParseError(rs.location + ": " + e.what());
      }
      rs.has_timestamp = true;
    }
    const std::string inline_code = c_code >= 0 ? row[static_cast<std::size_t>(c_code)] : std::string();
    const std::string code_path = c_path >= 0 ? row[static_cast<std::size_t>(c_path)] : std::string();
    if (inline_code.empty() == code_path.empty()) {
      throw ValidationError(rs.location + ": exactly one of code/code_path must be non-empty");
    }
    s.code = inline_code.empty() ? read_text_file(root / code_path) : inline_code;
    raw.push_back(std::move(rs));
  }

  // Students with any missing timestamp get a synthetic clock in file order.
  std::map<std::string, bool> student_missing_ts;
  for (const auto& rs : raw) student_missing_ts[rs.sub.student_id] |= !rs.has_timestamp;
  std::map<std::string, long long> synthetic_tick;
  for (auto& rs : raw) {
    if (student_missing_ts[rs.sub.student_id]) {
      rs.sub.timestamp = Timestamp{std::chrono::seconds(synthetic_tick[rs.sub.student_id]++)};
    }
  }

  std::map<StudentProblem, std::vector<RawSubmission*>> groups;
  for (auto& rs : raw) groups[{rs.sub.student_id, rs.sub.problem_id}].push_back(&rs);
  std::vector<Submission> out;
  out.reserve(raw.size());
  for (auto& [key, members] : groups) {
    std::sort(members.begin(), members.end(), [](const RawSubmission* a, const RawSubmission* b) {
      if (a->sub.timestamp != b->sub.timestamp) return a->sub.timestamp < b->sub.timestamp;
      const int aa = a->given_attempt.value_or(0), ba = b->given_attempt.value_or(0);
      if (aa != ba) return aa < ba;
      return a->file_order < b->file_order;
    });
    int idx = 1;
    for (auto* m : members) {
      m->sub.attempt_index = idx++;
      out.push_back(m->sub);
    }
  }
  return out;
}

KnowledgeComponent kc_from_json(const json& j, const std::string& source) {
  if (!j.is_object() || !j.contains("kc_id") || !j["kc_id"].is_string()) {
    throw ParseError(source + ": each KC needs a string 'kc_id'");
  }
  KnowledgeComponent kc;
  kc.kc_id = j["kc_id"].get<std::string>();
  kc.name = j.value("name", kc.kc_id);
  kc.description = j.value("description", std::string());
  kc.origin = parse_kc_origin(j.value("origin", std::string("human")));
  return kc;
}

}  // namespace

KcsFile read_kcs_json(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  KcsFile out;
  const json* items = &doc;
  if (doc.is_object()) {
    out.meta = doc.value("meta", json());
    if (!doc.contains("kcs")) throw ParseError(path.string() + ": object form needs a 'kcs' array");
    items = &doc["kcs"];
  }
  if (!items->is_array()) throw ParseError(path.string() + ": expected a JSON array of KCs");
  out.set.set_id = path.stem().string();
  bool any_generated = false;
  for (const auto& j : *items) {
    out.set.components.push_back(kc_from_json(j, path.string()));
    any_generated |= out.set.components.back().origin == KcOrigin::generated;
  }
  out.set.kind = any_generated ? KcSetKind::generated : KcSetKind::human;
  out.set.validate();
  return out;
}

std::string kcs_json(const KCSet& set, const json& meta) {
  json arr = json::array();
  for (const auto& kc : set.components) {
    arr.push_back({{"kc_id", kc.kc_id},
                   {"name", kc.name},
                   {"description", kc.description},
                   {"origin", to_string(kc.origin)}});
  }
  if (meta.is_null()) return arr.dump(2) + "\n";
  return json{{"meta", meta}, {"kcs", arr}}.dump(2) + "\n";
}

QMatrix read_qmatrix_csv(const fs::path& path) {
  const auto t = csv::read_file(path);
  const auto c_p = t.column("problem_id");
  const auto c_k = t.column("kc_id");
  QMatrix q;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (t.rows[r][c_p].empty() || t.rows[r][c_k].empty()) {
      throw ValidationError(where(t, r) + ": empty problem_id or kc_id");
    }
    q.entries[t.rows[r][c_p]].insert(t.rows[r][c_k]);
  }
  return q;
}

csv::Writer qmatrix_writer(const QMatrix& q) {
  csv::Writer w({"problem_id", "kc_id"});
  for (const auto& [problem, kcs] : q.entries) {
    for (const auto& kc : kcs) w.row({problem, kc});
  }
  return w;
}

CodeKCMap read_code_kc_map_csv(const fs::path& path) {
  const auto t = csv::read_file(path);
  const auto c_s = t.column("student_id");
  const auto c_p = t.column("problem_id");
  const auto c_k = t.column("kc_id");
  CodeKCMap m;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row[c_s].empty() || row[c_p].empty() || row[c_k].empty()) {
      throw ValidationError(where(t, r) + ": empty student_id, problem_id or kc_id");
    }
    m.entries[{row[c_s], row[c_p]}].insert(row[c_k]);
  }
  return m;
}

csv::Writer code_kc_map_writer(const CodeKCMap& map) {
  csv::Writer w({"student_id", "problem_id", "kc_id"});
  for (const auto& [key, kcs] : map.entries) {
    for (const auto& kc : kcs) w.row({key.student_id, key.problem_id, kc});
  }
  return w;
}

void check_qmatrix(const QMatrix& q, const KCSet& kcs, const DatasetBundle& bundle) {
  std::vector<std::string> bad;
  for (const auto& [problem, ids] : q.entries) {
    if (!bundle.find_problem(problem)) bad.push_back("problem " + problem);
    for (const auto& id : ids) {
      if (!kcs.find(id)) bad.push_back("kc " + id + " (problem " + problem + ")");
    }
  }
  if (!bad.empty()) throw IntegrityError("Q-matrix references unknown entities: " + join_offenders(bad));
}

void check_code_kc_map(const CodeKCMap& map, const KCSet& kcs, const DatasetBundle& bundle) {
  std::set<std::string> students;
  for (const auto& s : bundle.submissions) students.insert(s.student_id);
  std::vector<std::string> bad;
  for (const auto& [key, ids] : map.entries) {
    if (!bundle.find_problem(key.problem_id)) bad.push_back("problem " + key.problem_id);
    if (!students.count(key.student_id)) bad.push_back("student " + key.student_id);
    if (ids.empty()) bad.push_back("empty entry (" + key.student_id + ", " + key.problem_id + ")");
    for (const auto& id : ids) {
      if (!kcs.find(id)) bad.push_back("kc " + id);
    }
  }
  if (!bad.empty()) throw IntegrityError("code-KC map references unknown entities: " + join_offenders(bad));
}

DatasetBundle load_dataset(const fs::path& root, const LoadOptions& options) {
  for (const char* required : {"submissions.csv", "problems.csv"}) {
    if (!fs::exists(root / required)) {
      throw NotFoundError("dataset '" + root.string() + "' is missing required file " + required);
    }
  }
  DatasetBundle b;
  b.problems = load_problems(root / "problems.csv");
  b.submissions = load_submissions(root, b.problems);

  for (auto& p : b.problems) p.correct_solution_ids.clear();
  std::map<std::string, Problem*> by_id;
  for (auto& p : b.problems) by_id[p.problem_id] = &p;
  for (const auto& s : b.submissions) {
    if (is_problem_correct(s, options.correct_threshold)) {
      by_id[s.problem_id]->correct_solution_ids.push_back(s.submission_id);
    }
  }
  for (auto& p : b.problems) std::sort(p.correct_solution_ids.begin(), p.correct_solution_ids.end());

  const bool has_kcs = fs::exists(root / "kcs.json");
  if (has_kcs) b.kc_sets.push_back(read_kcs_json(root / "kcs.json").set);
  if (fs::exists(root / "qmatrix.csv")) {
    if (!has_kcs) throw IntegrityError(root.string() + ": qmatrix.csv present without kcs.json");
    b.q_matrices.push_back(read_qmatrix_csv(root / "qmatrix.csv"));
    check_qmatrix(b.q_matrices.back(), b.kc_sets.front(), b);
  }
  if (fs::exists(root / "code_kc_map.csv")) {
    if (!has_kcs) throw IntegrityError(root.string() + ": code_kc_map.csv present without kcs.json");
    b.code_kc_map = read_code_kc_map_csv(root / "code_kc_map.csv");
    check_code_kc_map(*b.code_kc_map, b.kc_sets.front(), b);
  }
  return b;
}

void save_dataset(const DatasetBundle& bundle, const fs::path& root) {
  fs::create_directories(root);
  csv::Writer problems({"problem_id", "statement"});
  for (const auto& p : bundle.problems) problems.row({p.problem_id, p.statement});
  write_file_atomic(root / "problems.csv", problems.str());

  std::vector<const Submission*> subs;
  for (const auto& s : bundle.submissions) subs.push_back(&s);
  std::sort(subs.begin(), subs.end(), [](const Submission* a, const Submission* b) {
    return std::tie(a->student_id, a->problem_id, a->attempt_index) <
           std::tie(b->student_id, b->problem_id, b->attempt_index);
  });
  csv::Writer w({"submission_id", "student_id", "problem_id", "attempt", "timestamp", "score", "code", "code_path"});
  for (const auto* s : subs) {
    w.row({s->submission_id, s->student_id, s->problem_id, std::to_string(s->attempt_index),
           format_rfc3339(s->timestamp), format_double(s->score), s->code, ""});
  }
  write_file_atomic(root / "submissions.csv", w.str());

  if (!bundle.kc_sets.empty()) write_file_atomic(root / "kcs.json", kcs_json(bundle.kc_sets.front()));
  if (!bundle.q_matrices.empty()) write_file_atomic(root / "qmatrix.csv", qmatrix_writer(bundle.q_matrices.front()).str());
  if (bundle.code_kc_map) write_file_atomic(root / "code_kc_map.csv", code_kc_map_writer(*bundle.code_kc_map).str());
}

ValidationReport validate_dataset(const DatasetBundle& bundle) {
  ValidationReport r;
  std::set<std::string> students;
  for (const auto& s : bundle.submissions) students.insert(s.student_id);
  r.student_count = students.size();
  r.problem_count = bundle.problems.size();
  r.submission_count = bundle.submissions.size();

  for (std::size_t i = 0; i < bundle.kc_sets.size(); ++i) {
    const auto& set = bundle.kc_sets[i];
    std::map<KcId, int> usage;
    for (const auto& kc : set.components) usage[kc.kc_id] = 0;
    if (i < bundle.q_matrices.size()) {
      for (const auto& [problem, ids] : bundle.q_matrices[i].entries) {
        for (const auto& id : ids) ++usage[id];
      }
    } else {
      r.warnings.push_back("KC set '" + set.set_id + "' has no Q-matrix; usage counts are zero");
    }
    for (const auto& kc : set.components) {
      const int n = usage[kc.kc_id];
      r.kc_usage.push_back({set.set_id, kc.kc_id, n});
      if (n < kSparseKcThreshold) {
        r.sparse_kcs.push_back(kc.kc_id);
        r.warnings.push_back("KC '" + kc.kc_id + "' (" + kc.name + ") is exercised by only " +
                             std::to_string(n) + " problem(s), fewer than " +
                             std::to_string(kSparseKcThreshold));
      }
    }
  }
  return r;
}

json ValidationReport::to_json() const {
  json usage = json::array();
  for (const auto& u : kc_usage) {
    usage.push_back({{"set_id", u.set_id}, {"kc_id", u.kc_id}, {"problem_count", u.problem_count}});
  }
  return {{"student_count", student_count},
          {"problem_count", problem_count},
          {"submission_count", submission_count},
          {"kc_usage", usage},
          {"sparse_kcs", sparse_kcs},
          {"warnings", warnings}};
}

}  // namespace kclab
