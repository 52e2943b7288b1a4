#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kclab/util/retry.hpp"

namespace kclab {

struct Embedding {
  std::string id;
  std::vector<double> vector;

  /// Non-empty, finite, non-zero norm. Throws ValidationError.
  void validate() const;
};

/// 1 - cos(u, v), clamped to [0, 2]. Throws PreconditionError on dimension
/// mismatch or a zero-norm argument.
double cosine_distance(std::span<const double> u, std::span<const double> v);

double squared_euclidean(std::span<const double> u, std::span<const double> v);

/// Id of the candidate with minimal cosine distance to `query`; ties go to
/// the lexicographically smallest id.
std::string nearest(std::span<const double> query, const std::vector<Embedding>& candidates);

struct KMeansOptions {
  int max_iter = 100;
};

struct ClusterResult {
  std::vector<int> assignments;  // parallel to the input points, values in [0, k)
  std::vector<std::vector<double>> centroids;
  double inertia = 0.0;
  int iterations = 0;
  /// Inertia after the initial assignment and after every centroid update.
  std::vector<double> inertia_trace;

  /// Assignment of the point with the given id (ids are those of the input).
  std::map<std::string, int> by_id(const std::vector<Embedding>& points) const;
};

/// Lloyd's algorithm on squared Euclidean distance from a seeded k-means++
/// start. Deterministic in (points order, k, seed). An emptied cluster is
/// reseeded with the point farthest from its current centroid.
ClusterResult kmeans(const std::vector<Embedding>& points, int k, std::uint64_t seed,
                     const KMeansOptions& options = {});

/// Turns text into a vector (remote service, hashing, test doubles).
class TextEmbedder {
public:
  virtual ~TextEmbedder() = default;
  virtual std::vector<double> embed(const std::string& text) = 0;
};

/// POST {"input": text} to `url`, expects {"vector": [...]}.
class HttpTextEmbedder : public TextEmbedder {
public:
  HttpTextEmbedder(std::string url, std::string api_key, RetryPolicy retry,
                   std::chrono::seconds timeout = std::chrono::seconds(60));
  std::vector<double> embed(const std::string& text) override;
  long attempts() const { return attempts_.load(); }

private:
  std::string url_;
  std::string api_key_;
  RetryPolicy retry_;
  std::chrono::seconds timeout_;
  std::atomic<long> attempts_{0};
};

/// Offline lexical embedder: signed feature hashing of lowercase word
/// unigrams and bigrams into `dimension` buckets. Used for short KC text
/// when no embedding service is configured.
class HashedTextEmbedder : public TextEmbedder {
public:
  explicit HashedTextEmbedder(std::size_t dimension = 256) : dimension_(dimension) {}
  std::vector<double> embed(const std::string& text) override;

private:
  std::size_t dimension_;
};

/// Id -> vector store. File mode serves a JSONL fixture; remote mode fetches
/// unknown ids through a TextEmbedder and appends them to the backing file.
class EmbeddingStore {
public:
  using TextLookup = std::function<std::optional<std::string>(const std::string& id)>;

  EmbeddingStore() = default;
  explicit EmbeddingStore(std::vector<Embedding> embeddings);

  /// Loads `{"id": ..., "vector": [...]}` lines. A sibling
  /// `<path>.manifest.json` is cross-checked (dimension, count) if present.
  static std::unique_ptr<EmbeddingStore> load_jsonl(const std::filesystem::path& path);

  /// Remote mode; `cache_file` is created on first write when absent.
  static std::unique_ptr<EmbeddingStore> remote(std::shared_ptr<TextEmbedder> embedder, TextLookup lookup,
                                                std::filesystem::path cache_file);

  Embedding get_embedding(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::size_t size() const;
  std::size_t dimension() const;

private:
  void insert_locked(Embedding e);

  mutable std::mutex mutex_;
  std::map<std::string, std::vector<double>> vectors_;
  std::size_t dimension_ = 0;
  std::shared_ptr<TextEmbedder> remote_;
  TextLookup lookup_;
  std::optional<std::filesystem::path> cache_file_;
};

std::string embedding_jsonl_line(const Embedding& e);

}  // namespace kclab
