#include "kclab/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kclab/error.hpp"
#include "kclab/util/files.hpp"
#include "kclab/util/hash.hpp"
#include "kclab/util/http.hpp"
#include "kclab/util/random.hpp"

using nlohmann::json;

namespace kclab {

void Embedding::validate() const {
  if (vector.empty()) throw ValidationError("embedding '" + id + "' is empty");
  double norm2 = 0.0;
  for (double x : vector) {
    if (!std::isfinite(x)) throw ValidationError("embedding '" + id + "' has a non-finite component");
    norm2 += x * x;
  }
  if (norm2 <= 0.0) throw ValidationError("embedding '" + id + "' has zero norm");
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw PreconditionError("cosine_distance: dimension mismatch " + std::to_string(u.size()) + " vs " +
                            std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu <= 0.0 || nv <= 0.0) throw PreconditionError("cosine_distance: zero-norm input");
  const double d = 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(d, 0.0, 2.0);
}

double squared_euclidean(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw PreconditionError("squared_euclidean: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    s += d * d;
  }
  return s;
}

std::string nearest(std::span<const double> query, const std::vector<Embedding>& candidates) {
  if (candidates.empty()) throw PreconditionError("nearest: empty candidate list");
  const Embedding* best = nullptr;
  double best_d = 0.0;
  for (const auto& c : candidates) {
    const double d = cosine_distance(query, c.vector);
    if (!best || d < best_d || (d == best_d && c.id < best->id)) {
      best = &c;
      best_d = d;
    }
  }
  return best->id;
}

// ---------------------------------------------------------------------------

std::map<std::string, int> ClusterResult::by_id(const std::vector<Embedding>& points) const {
  std::map<std::string, int> out;
  for (std::size_t i = 0; i < points.size() && i < assignments.size(); ++i) out[points[i].id] = assignments[i];
  return out;
}

namespace {

using Matrix = std::vector<std::vector<double>>;

std::vector<int> assign_nearest(const std::vector<Embedding>& points, const Matrix& centroids,
                                std::vector<double>& dist) {
  std::vector<int> out(points.size(), 0);
  dist.assign(points.size(), 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const double d = squared_euclidean(points[i].vector, centroids[c]);
      if (d < best) {
        best = d;
        out[i] = static_cast<int>(c);
      }
    }
    dist[i] = best;
  }
  return out;
}

Matrix kmeans_plus_plus(const std::vector<Embedding>& points, int k, Rng& rng) {
  const std::size_t n = points.size();
  Matrix centroids;
  std::vector<bool> chosen(n, false);
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  centroids.push_back(points[first].vector);
  chosen[first] = true;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_euclidean(points[i].vector, centroids[0]);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform01() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick == n) {  // rounding at the top end
        for (std::size_t i = n; i-- > 0;) {
          if (!chosen[i] && d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen[pick] = true;
    centroids.push_back(points[pick].vector);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_euclidean(points[i].vector, centroids.back()));
    }
  }
  return centroids;
}

// Moves the farthest points into empty clusters. Returns true if anything moved.
bool repair_empty(const std::vector<Embedding>& points, Matrix& centroids, std::vector<int>& assign,
                  std::vector<double>& dist) {
  const int k = static_cast<int>(centroids.size());
  bool moved = false;
  std::vector<int> sizes(k, 0);
  for (int a : assign) ++sizes[a];
  for (int c = 0; c < k; ++c) {
    if (sizes[c] > 0) continue;
    std::size_t far = points.size();
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (sizes[assign[i]] <= 1) continue;
      if (far == points.size() || dist[i] > dist[far]) far = i;
    }
    if (far == points.size()) break;
    --sizes[assign[far]];
    assign[far] = c;
    ++sizes[c];
    centroids[c] = points[far].vector;
    dist[far] = 0.0;
    moved = true;
  }
  return moved;
}

void update_centroids(const std::vector<Embedding>& points, const std::vector<int>& assign, Matrix& centroids) {
  const std::size_t dim = points.front().vector.size();
  Matrix sums(centroids.size(), std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(centroids.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto& s = sums[assign[i]];
    for (std::size_t d = 0; d < dim; ++d) s[d] += points[i].vector[d];
    ++counts[assign[i]];
  }
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t d = 0; d < dim; ++d) centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
  }
}

double total_inertia(const std::vector<Embedding>& points, const std::vector<int>& assign, const Matrix& centroids) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) s += squared_euclidean(points[i].vector, centroids[assign[i]]);
  return s;
}

}  // namespace

ClusterResult kmeans(const std::vector<Embedding>& points, int k, std::uint64_t seed, const KMeansOptions& options) {
  if (points.empty()) throw PreconditionError("kmeans: empty input");
  if (k < 1) throw PreconditionError("kmeans: k must be positive");
  if (static_cast<std::size_t>(k) > points.size()) {
    throw PreconditionError("kmeans: k=" + std::to_string(k) + " exceeds point count " +
                            std::to_string(points.size()));
  }
  const std::size_t dim = points.front().vector.size();
  for (const auto& p : points) {
    if (p.vector.size() != dim) throw PreconditionError("kmeans: dimension mismatch at '" + p.id + "'");
  }

  Rng rng(seed);
  ClusterResult r;
  r.centroids = kmeans_plus_plus(points, k, rng);
  std::vector<double> dist;
  r.assignments = assign_nearest(points, r.centroids, dist);
  repair_empty(points, r.centroids, r.assignments, dist);
  r.inertia_trace.push_back(total_inertia(points, r.assignments, r.centroids));

  for (r.iterations = 1; r.iterations <= options.max_iter; ++r.iterations) {
    update_centroids(points, r.assignments, r.centroids);
    r.inertia_trace.push_back(total_inertia(points, r.assignments, r.centroids));
    auto next = assign_nearest(points, r.centroids, dist);
    repair_empty(points, r.centroids, next, dist);
    if (next == r.assignments) break;
    r.assignments = std::move(next);
  }
  r.iterations = std::min(r.iterations, options.max_iter);
  r.inertia = total_inertia(points, r.assignments, r.centroids);
  r.inertia_trace.push_back(r.inertia);
  return r;
}

// ---------------------------------------------------------------------------

HttpTextEmbedder::HttpTextEmbedder(std::string url, std::string api_key, RetryPolicy retry,
                                   std::chrono::seconds timeout)
    : url_(std::move(url)), api_key_(std::move(api_key)), retry_(retry), timeout_(timeout) {
  if (url_.empty()) throw PreconditionError("remote embedding mode needs an endpoint URL");
}

std::vector<double> HttpTextEmbedder::embed(const std::string& text) {
  return with_retries(retry_, attempts_, [&] {
    const auto res = http_post_json(url_, json{{"input", text}}.dump(), api_key_, timeout_);
    if (res.status < 200 || res.status >= 300) throw_for_status(res, "embedding");
    try {
      const auto doc = json::parse(res.body);
      return doc.at("vector").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw MalformedPayloadError(std::string("embedding: malformed response: ") + e.what());
    }
  });
}

std::vector<double> HashedTextEmbedder::embed(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));

  std::vector<double> v(dimension_, 0.0);
  auto add = [&](const std::string& feature, double weight) {
    const std::string h = sha256_hex(feature);
    const std::uint64_t x = std::stoull(h.substr(0, 15), nullptr, 16);
    const double sign = (x & 1) ? 1.0 : -1.0;
    v[(x >> 1) % dimension_] += sign * weight;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    add("u:" + tokens[i], 1.0);
    if (i + 1 < tokens.size()) add("b:" + tokens[i] + " " + tokens[i + 1], 0.5);
  }
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (norm2 == 0.0) v[0] = 1.0;  // empty text still gets a valid direction
  return v;
}

// ---------------------------------------------------------------------------

std::string embedding_jsonl_line(const Embedding& e) {
  return json{{"id", e.id}, {"vector", e.vector}}.dump() + "\n";
}

EmbeddingStore::EmbeddingStore(std::vector<Embedding> embeddings) {
  for (auto& e : embeddings) insert_locked(std::move(e));
}

void EmbeddingStore::insert_locked(Embedding e) {
  e.validate();
  if (dimension_ == 0) dimension_ = e.vector.size();
  if (e.vector.size() != dimension_) {
    throw ValidationError("embedding '" + e.id + "' has dimension " + std::to_string(e.vector.size()) +
                          ", store dimension is " + std::to_string(dimension_));
  }
  if (!vectors_.emplace(e.id, std::move(e.vector)).second) {
    throw ValidationError("duplicate embedding id '" + e.id + "'");
  }
}

std::unique_ptr<EmbeddingStore> EmbeddingStore::load_jsonl(const std::filesystem::path& path) {
  auto store = std::make_unique<EmbeddingStore>();
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open embeddings file '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Embedding e;
    try {
      const auto doc = json::parse(line);
      e.id = doc.at("id").get<std::string>();
      e.vector = doc.at("vector").get<std::vector<double>>();
    } catch (const json::exception& ex) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    try {
      store->insert_locked(std::move(e));
    } catch (const ValidationError& ex) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  auto manifest_path = path;
  manifest_path += ".manifest.json";
  if (std::filesystem::exists(manifest_path)) {
    json m;
    try {
      m = json::parse(read_text_file(manifest_path));
    } catch (const json::parse_error& ex) {
      throw ParseError(manifest_path.string() + ": " + ex.what());
    }
    if (!m.is_object()) throw ParseError(manifest_path.string() + ": manifest must be a JSON object");
    for (const char* key : {"dimension", "count"}) {
      if (m.contains(key) && !m[key].is_number_unsigned()) {
        throw ValidationError(manifest_path.string() + ": manifest " + key + " must be a non-negative integer");
      }
    }
    if (m.contains("dimension") && store->size() > 0 && m["dimension"].get<std::size_t>() != store->dimension()) {
      throw ValidationError(manifest_path.string() + ": manifest dimension " + m["dimension"].dump() +
                            " does not match vectors (" + std::to_string(store->dimension()) + ")");
    }
    if (m.contains("count") && m["count"].get<std::size_t>() != store->size()) {
      throw ValidationError(manifest_path.string() + ": manifest count " + m["count"].dump() +
                            " does not match " + std::to_string(store->size()) + " vectors");
    }
  }
  return store;
}

std::unique_ptr<EmbeddingStore> EmbeddingStore::remote(std::shared_ptr<TextEmbedder> embedder, TextLookup lookup,
                                                       std::filesystem::path cache_file) {
  std::unique_ptr<EmbeddingStore> store =
      std::filesystem::exists(cache_file) ? load_jsonl(cache_file) : std::make_unique<EmbeddingStore>();
  store->remote_ = std::move(embedder);
  store->lookup_ = std::move(lookup);
  store->cache_file_ = std::move(cache_file);
  return store;
}

Embedding EmbeddingStore::get_embedding(const std::string& id) const {
  std::unique_lock lock(mutex_);
  if (const auto it = vectors_.find(id); it != vectors_.end()) return {id, it->second};
  if (!remote_) throw NotFoundError("missing embedding for id '" + id + "'");
  const auto text = lookup_ ? lookup_(id) : std::nullopt;
  if (!text) throw NotFoundError("missing embedding for id '" + id + "' and no text to embed");
  lock.unlock();
  Embedding e{id, remote_->embed(*text)};
  e.validate();
  lock.lock();
  if (const auto it = vectors_.find(id); it != vectors_.end()) return {id, it->second};
  auto* self = const_cast<EmbeddingStore*>(this);
  self->insert_locked(e);
  if (cache_file_) {
    if (cache_file_->has_parent_path()) std::filesystem::create_directories(cache_file_->parent_path());
    std::ofstream out(*cache_file_, std::ios::app);
    out << embedding_jsonl_line(e);
  }
  return e;
}

bool EmbeddingStore::contains(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return vectors_.count(id) > 0;
}

std::size_t EmbeddingStore::size() const {
  std::lock_guard lock(mutex_);
  return vectors_.size();
}

std::size_t EmbeddingStore::dimension() const {
  std::lock_guard lock(mutex_);
  return dimension_;
}

}  // namespace kclab
