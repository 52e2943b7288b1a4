#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "kclab/util/timestamp.hpp"

namespace kclab {

using KcId = std::string;
using KcIdSet = std::set<KcId>;

struct Problem {
  std::string problem_id;
  std::string statement;
  std::vector<std::string> correct_solution_ids;

  friend bool operator==(const Problem&, const Problem&) = default;
};

struct Submission {
  std::string submission_id;
  std::string student_id;
  std::string problem_id;
  int attempt_index = 1;  // 1-based within (student, problem)
  Timestamp timestamp{};
  double score = 0.0;  // [0, 1]
  std::string code;

  friend bool operator==(const Submission&, const Submission&) = default;
};

/// First and last attempt of one student on one problem.
struct AttemptPair {
  std::string student_id;
  std::string problem_id;
  Submission first;
  Submission last;
};

enum class KcOrigin { human, generated };

struct KnowledgeComponent {
  KcId kc_id;
  std::string name;
  std::string description;
  KcOrigin origin = KcOrigin::human;

  friend bool operator==(const KnowledgeComponent&, const KnowledgeComponent&) = default;
};

enum class KcSetKind { human, generated, selected };

struct KCSet {
  std::string set_id;
  KcSetKind kind = KcSetKind::human;
  std::vector<KnowledgeComponent> components;

  const KnowledgeComponent* find(const KcId& id) const;
  /// Throws NotFoundError when `id` is absent.
  const KnowledgeComponent& at(const KcId& id) const;
  /// Checks non-emptiness and kc_id uniqueness; throws ValidationError.
  void validate() const;

  friend bool operator==(const KCSet&, const KCSet&) = default;
};

/// Problem-level KC tags (q_jk = 1 iff kc k in entries[j]).
struct QMatrix {
  std::map<std::string, KcIdSet> entries;

  friend bool operator==(const QMatrix&, const QMatrix&) = default;
};

struct StudentProblem {
  std::string student_id;
  std::string problem_id;

  friend auto operator<=>(const StudentProblem&, const StudentProblem&) = default;
};

/// Per-(student, problem) KC assignment produced by exemplar mapping.
struct CodeKCMap {
  std::map<StudentProblem, KcIdSet> entries;

  friend bool operator==(const CodeKCMap&, const CodeKCMap&) = default;
};

std::string to_string(KcOrigin origin);
KcOrigin parse_kc_origin(std::string_view text);
std::string to_string(KcSetKind kind);
KcSetKind parse_kc_set_kind(std::string_view text);

inline constexpr double kDefaultCorrectThreshold = 1.0;

/// Problem-level correctness: score >= threshold. threshold must lie in (0, 1].
bool is_problem_correct(const Submission& s, double threshold = kDefaultCorrectThreshold);

/// One pair per (student, problem) group, sorted by (student_id, problem_id).
/// Throws ValidationError naming the group if attempt indices are duplicated
/// or not exactly 1..m.
std::vector<AttemptPair> build_attempt_pairs(const std::vector<Submission>& submissions);

struct OpportunityKey {
  std::string student_id;
  std::string problem_id;
  KcId kc_id;

  friend auto operator<=>(const OpportunityKey&, const OpportunityKey&) = default;
};

/// T_ik: prior first-attempt exposures of student i to KC k, keyed by the
/// exposure (student, problem, kc). The opportunity index is T + 1.
struct OpportunityTable {
  std::map<OpportunityKey, int> entries;

  /// Throws NotFoundError when the key is absent.
  int prior(const std::string& student_id, const std::string& problem_id, const KcId& kc_id) const;
  int opportunity(const std::string& student_id, const std::string& problem_id,
                  const KcId& kc_id) const {
    return prior(student_id, problem_id, kc_id) + 1;
  }
};

/// Pairs are ordered per student by first-attempt timestamp, ties broken by
/// ascending problem_id. Missing problems/entries are reported together.
OpportunityTable opportunity_counts(const std::vector<AttemptPair>& pairs, const QMatrix& q);
OpportunityTable opportunity_counts(const std::vector<AttemptPair>& pairs, const CodeKCMap& map);

/// Per-student timeline order used by opportunity counting.
bool earlier_first_attempt(const AttemptPair& a, const AttemptPair& b);

}  // namespace kclab
