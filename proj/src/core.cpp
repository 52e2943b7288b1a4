#include "kclab/core.hpp"

#include <algorithm>
#include <functional>

#include "kclab/error.hpp"

namespace kclab {

const KnowledgeComponent* KCSet::find(const KcId& id) const {
  for (const auto& kc : components) {
    if (kc.kc_id == id) return &kc;
  }
  return nullptr;
}

const KnowledgeComponent& KCSet::at(const KcId& id) const {
  if (const auto* kc = find(id)) return *kc;
  throw NotFoundError("KC '" + id + "' not in set '" + set_id + "'");
}

void KCSet::validate() const {
  if (components.empty()) throw ValidationError("KC set '" + set_id + "' is empty");
  std::set<KcId> seen;
  std::vector<std::string> dups;
  for (const auto& kc : components) {
    if (kc.kc_id.empty()) throw ValidationError("KC set '" + set_id + "' has an empty kc_id");
    if (!seen.insert(kc.kc_id).second) dups.push_back(kc.kc_id);
  }
  if (!dups.empty()) {
    throw ValidationError("KC set '" + set_id + "' has duplicate kc_id: " + join_offenders(dups));
  }
}

std::string to_string(KcOrigin origin) {
  return origin == KcOrigin::human ? "human" : "generated";
}

KcOrigin parse_kc_origin(std::string_view text) {
  if (text == "human") return KcOrigin::human;
  if (text == "generated") return KcOrigin::generated;
  throw ParseError("unknown KC origin '" + std::string(text) + "'");
}

std::string to_string(KcSetKind kind) {
  switch (kind) {
    case KcSetKind::human: return "human";
    case KcSetKind::generated: return "generated";
    case KcSetKind::selected: return "selected";
  }
  return "human";
}

KcSetKind parse_kc_set_kind(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "human") return KcSetKind::human;
  if (lower == "generated") return KcSetKind::generated;
  if (lower == "selected") return KcSetKind::selected;
  throw ParseError("unknown KC set kind '" + std::string(text) + "'");
}

bool is_problem_correct(const Submission& s, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw PreconditionError("correctness threshold must lie in (0, 1], got " +
                            std::to_string(threshold));
  }
  return s.score >= threshold;
}

std::vector<AttemptPair> build_attempt_pairs(const std::vector<Submission>& submissions) {
  if (submissions.empty()) throw PreconditionError("build_attempt_pairs: no submissions");

  std::map<StudentProblem, std::vector<const Submission*>> groups;
  for (const auto& s : submissions) groups[{s.student_id, s.problem_id}].push_back(&s);

  std::vector<AttemptPair> pairs;
  pairs.reserve(groups.size());
  for (auto& [key, members] : groups) {
    std::sort(members.begin(), members.end(),
              [](const Submission* a, const Submission* b) { return a->attempt_index < b->attempt_index; });
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (members[i]->attempt_index != static_cast<int>(i) + 1) {
        const bool dup = i > 0 && members[i]->attempt_index == members[i - 1]->attempt_index;
        throw ValidationError("group (student=" + key.student_id + ", problem=" + key.problem_id +
                              "): " + (dup ? "duplicate" : "non-contiguous") + " attempt index " +
                              std::to_string(members[i]->attempt_index) + ", expected 1.." +
                              std::to_string(members.size()));
      }
    }
    pairs.push_back({key.student_id, key.problem_id, *members.front(), *members.back()});
  }
  return pairs;
}

int OpportunityTable::prior(const std::string& student_id, const std::string& problem_id,
                            const KcId& kc_id) const {
  const auto it = entries.find({student_id, problem_id, kc_id});
  if (it == entries.end()) {
    throw NotFoundError("no opportunity entry for (student=" + student_id +
                        ", problem=" + problem_id + ", kc=" + kc_id + ")");
  }
  return it->second;
}

bool earlier_first_attempt(const AttemptPair& a, const AttemptPair& b) {
  if (a.first.timestamp != b.first.timestamp) return a.first.timestamp < b.first.timestamp;
  return a.problem_id < b.problem_id;
}

namespace {

using Resolver = std::function<const KcIdSet*(const AttemptPair&)>;

OpportunityTable count_with(const std::vector<AttemptPair>& pairs, const Resolver& resolve,
                            std::string_view source) {
  std::map<std::string, std::vector<const AttemptPair*>> by_student;
  std::vector<std::string> missing;
  for (const auto& p : pairs) {
    if (!resolve(p)) missing.push_back("(" + p.student_id + ", " + p.problem_id + ")");
    by_student[p.student_id].push_back(&p);
  }
  if (!missing.empty()) {
    throw IntegrityError(std::string(source) + " has no KC entry for " +
                         std::to_string(missing.size()) + " pair(s): " + join_offenders(missing));
  }

  OpportunityTable table;
  for (auto& [student, timeline] : by_student) {
    std::sort(timeline.begin(), timeline.end(),
              [](const AttemptPair* a, const AttemptPair* b) { return earlier_first_attempt(*a, *b); });
    std::map<KcId, int> seen;
    for (const AttemptPair* p : timeline) {
      for (const auto& kc : *resolve(*p)) {
        int& count = seen[kc];
        table.entries[{student, p->problem_id, kc}] = count;
        ++count;
      }
    }
  }
  return table;
}

}  // namespace

OpportunityTable opportunity_counts(const std::vector<AttemptPair>& pairs, const QMatrix& q) {
  return count_with(
      pairs,
      [&](const AttemptPair& p) -> const KcIdSet* {
        const auto it = q.entries.find(p.problem_id);
        return it == q.entries.end() ? nullptr : &it->second;
      },
      "Q-matrix");
}

OpportunityTable opportunity_counts(const std::vector<AttemptPair>& pairs, const CodeKCMap& map) {
  return count_with(
      pairs,
      [&](const AttemptPair& p) -> const KcIdSet* {
        const auto it = map.entries.find({p.student_id, p.problem_id});
        return it == map.entries.end() ? nullptr : &it->second;
      },
      "code-KC map");
}

}  // namespace kclab
