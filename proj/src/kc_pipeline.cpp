#include "kclab/kc_pipeline.hpp"

#include <algorithm>
#include <set>

#include "kclab/error.hpp"
#include "kclab/prompts.hpp"
#include "kclab/util/format.hpp"

using nlohmann::json;

namespace kclab {

std::vector<std::string> ExemplarSet::ids() const {
  std::vector<std::string> out;
  for (const auto& e : exemplars) out.push_back(e.id);
  return out;
}

ExemplarSet select_exemplars(const Problem& problem, const std::vector<Submission>& correct_solutions, int k,
                             std::uint64_t seed, const EmbeddingStore& embeddings) {
  if (k < 1) throw PreconditionError("select_exemplars: k must be positive");
  std::set<std::string> ids;
  for (const auto& s : correct_solutions) {
    if (s.problem_id != problem.problem_id) {
      throw PreconditionError("select_exemplars: submission '" + s.submission_id + "' belongs to problem '" +
                              s.problem_id + "', not '" + problem.problem_id + "'");
    }
    ids.insert(s.submission_id);
  }
  if (ids.empty()) {
    throw PreconditionError("problem '" + problem.problem_id + "' has no correct solutions to draw exemplars from");
  }
  std::vector<Embedding> points;
  for (const auto& id : ids) points.push_back(embeddings.get_embedding(id));

  ExemplarSet out{problem.problem_id, {}, k};
  if (points.size() <= static_cast<std::size_t>(k)) {
    out.exemplars = std::move(points);
    return out;
  }
  const auto clusters = kmeans(points, k, seed);
  for (int c = 0; c < k; ++c) {
    const Embedding* best = nullptr;
    double best_d = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (clusters.assignments[i] != c) continue;
      const double d = squared_euclidean(points[i].vector, clusters.centroids[c]);
      if (!best || d < best_d || (d == best_d && points[i].id < best->id)) {
        best = &points[i];
        best_d = d;
      }
    }
    if (best) out.exemplars.push_back(*best);
  }
  std::sort(out.exemplars.begin(), out.exemplars.end(),
            [](const Embedding& a, const Embedding& b) { return a.id < b.id; });
  return out;
}

namespace {

std::string require_string(const json& obj, const char* field) {
  if (!obj.is_object() || !obj.contains(field) || !obj[field].is_string() || obj[field].get<std::string>().empty()) {
    throw ParseError(std::string("expected a non-empty string field '") + field + "'");
  }
  return obj[field].get<std::string>();
}

}  // namespace

std::vector<CandidateKC> generate_candidate_kcs(const llm::LlmContext& ctx, const Problem& problem,
                                                const std::string& exemplar_code) {
  const std::map<std::string, std::string> vars = {{"problem_statement", problem.statement},
                                                   {"code", exemplar_code}};
  auto request = ctx.request({{llm::Role::system, ctx.prompts.get("generate.system")},
                              {llm::Role::user, render_template(ctx.prompts.get("generate.user"), vars)}});
  const std::function<std::vector<CandidateKC>(const std::string&)> parse = [&](const std::string& content) {
    const auto block = llm::extract_json(content, llm::JsonShape::array);
    if (!block) throw ParseError("no JSON array of {name, description} found");
    std::vector<CandidateKC> out;
    for (const auto& item : block->value) {
      out.push_back({problem.problem_id, require_string(item, "name"), require_string(item, "description")});
    }
    return out;
  };
  return llm::complete_structured(ctx, std::move(request), ctx.prompts.get("json.format_reminder"), parse);
}

Consolidation consolidate_kcs(const llm::LlmContext& ctx, const std::vector<CandidateKC>& candidates, int target_n,
                              std::uint64_t seed, TextEmbedder& embedder) {
  if (target_n < 1) throw PreconditionError("consolidate_kcs: target_n must be positive");
  if (candidates.size() < static_cast<std::size_t>(target_n)) {
    throw PreconditionError("consolidate_kcs: " + std::to_string(candidates.size()) +
                            " candidate KCs cannot form " + std::to_string(target_n) + " clusters");
  }
  std::vector<Embedding> points;
  points.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    points.push_back({std::to_string(i), embedder.embed(candidates[i].clustering_text())});
    points.back().validate();
  }
  const auto clusters = kmeans(points, target_n, seed);

  Consolidation out;
  out.cluster_of = clusters.assignments;
  out.kcs.set_id = "generated";
  out.kcs.kind = KcSetKind::generated;
  const int width = target_n >= 100 ? 3 : 2;
  for (int c = 0; c < target_n; ++c) {
    std::vector<KnowledgeComponent> members;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (clusters.assignments[i] == c) {
        members.push_back({"", candidates[i].name, candidates[i].description, KcOrigin::generated});
      }
    }
    std::string list;
    for (const auto& m : members) list += "- " + m.name + ": " + m.description + "\n";
    auto request = ctx.request(
        {{llm::Role::system, ctx.prompts.get("summarize.system")},
         {llm::Role::user, render_template(ctx.prompts.get("summarize.user"), {{"kc_list", trim(list)}})}});
    const std::function<std::pair<std::string, std::string>(const std::string&)> parse =
        [](const std::string& content) {
          const auto block = llm::extract_json(content, llm::JsonShape::object);
          if (!block) throw ParseError("no JSON object {name, description} found");
          return std::make_pair(require_string(block->value, "name"), require_string(block->value, "description"));
        };
    auto [name, description] =
        llm::complete_structured(ctx, std::move(request), ctx.prompts.get("json.format_reminder"), parse);
    std::string id = std::to_string(c + 1);
    id = "G" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0') + id;
    out.kcs.components.push_back({id, std::move(name), std::move(description), KcOrigin::generated});
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.qmatrix.entries[candidates[i].problem_id].insert(out.kcs.components[clusters.assignments[i]].kc_id);
  }
  return out;
}

ExemplarKCProfile profile_exemplar(const llm::LlmContext& ctx, const Problem& problem, const Submission& exemplar,
                                   const std::vector<KnowledgeComponent>& problem_kcs,
                                   const EmbeddingStore& embeddings) {
  if (problem_kcs.empty()) throw PreconditionError("profile_exemplar: problem '" + problem.problem_id + "' has no KCs");
  std::set<KcId> allowed;
  for (const auto& kc : problem_kcs) allowed.insert(kc.kc_id);

  const std::map<std::string, std::string> vars = {{"problem_statement", problem.statement},
                                                   {"code", exemplar.code},
                                                   {"kc_list", format_kc_list(problem_kcs)}};
  auto request = ctx.request({{llm::Role::system, ctx.prompts.get("select.system")},
                              {llm::Role::user, render_template(ctx.prompts.get("select.user"), vars)}});
  const std::function<KcIdSet(const std::string&)> parse = [&](const std::string& content) {
    const auto block = llm::extract_json(content, llm::JsonShape::array);
    if (!block) throw ParseError("no JSON array of kc_id strings found");
    KcIdSet chosen;
    for (const auto& item : block->value) {
      if (!item.is_string()) throw ParseError("selection entries must be kc_id strings");
      const auto id = item.get<std::string>();
      if (!allowed.count(id)) throw ParseError("selected kc_id '" + id + "' is not in the problem's KC set");
      chosen.insert(id);
    }
    if (chosen.empty()) throw ParseError("selection is empty");
    return chosen;
  };
  auto subset = llm::complete_structured(ctx, std::move(request), ctx.prompts.get("json.format_reminder"), parse);
  return {problem.problem_id, exemplar.submission_id, std::move(subset),
          embeddings.get_embedding(exemplar.submission_id)};
}

std::pair<StudentProblem, KcIdSet> map_student_to_kcs(const AttemptPair& pair,
                                                      const std::vector<ExemplarKCProfile>& profiles,
                                                      const EmbeddingStore& embeddings) {
  if (profiles.empty()) {
    throw PreconditionError("map_student_to_kcs: no exemplar profiles for problem '" + pair.problem_id + "'");
  }
  const auto last = embeddings.get_embedding(pair.last.submission_id);
  std::vector<Embedding> candidates;
  candidates.reserve(profiles.size());
  for (const auto& p : profiles) candidates.push_back({p.submission_id, p.embedding.vector});
  const auto winner = nearest(last.vector, candidates);
  for (const auto& p : profiles) {
    if (p.submission_id == winner) return {{pair.student_id, pair.problem_id}, p.kc_subset};
  }
  throw Error("unreachable: nearest returned an unknown id");
}

}  // namespace kclab
