#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mmsynth/config_sampler.hpp"

namespace mmsynth {

enum class ImageStatus : std::uint8_t { kOk, kExcluded };

struct ImageRecord {
  std::string id;
  std::string locator;
  std::optional<std::string> caption;
  ImageStatus status = ImageStatus::kOk;
};

// The usable (status ok) records of an image manifest. Immutable once built.
class Corpus {
 public:
  // Rejects duplicate ids and empty corpora; excluded records are counted
  // and dropped.
  static Corpus from_records(std::vector<ImageRecord> records);

  std::size_t size() const noexcept { return records_.size(); }
  std::size_t excluded_count() const noexcept { return excluded_; }
  std::span<const ImageRecord> records() const noexcept { return records_; }
  const ImageRecord* find(std::string_view id) const;

 private:
  std::vector<ImageRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t excluded_ = 0;
};

// One JSON object per line: {"id", "locator", "caption"?, "status"?}.
// Blank lines are skipped. Errors name the 1-based line number.
Corpus load_manifest(const std::filesystem::path& path);
Corpus parse_manifest(std::string_view text);

// Row-major float32 embeddings keyed by id. Rows are L2-normalized on
// construction, so cosine similarity between rows is a dot product.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  // Throws EmbeddingError on shape mismatch, non-finite or zero-norm rows,
  // and duplicate ids.
  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<float> values);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const std::string> ids() const noexcept { return ids_; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<const float> values() const noexcept { return values_; }

  std::optional<std::size_t> find(std::string_view id) const;
  // Throws UnknownIdError.
  std::size_t index_of(std::string_view id) const;

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Binary layout in `dir`: ids.txt (one id per line), vecs.f32 (count x dim
// little-endian binary32, row-major), meta ({"dim": D, "count": N}).
EmbeddingMatrix load_embeddings(const std::filesystem::path& dir);
void save_embeddings(const std::filesystem::path& dir, std::span<const std::string> ids, std::size_t dim,
                     std::span<const float> values);

// One JSON object per line: {"id": "...", "vec": [..]}.
EmbeddingMatrix load_embedding_records(const std::filesystem::path& file);

// Directory -> binary layout, regular file -> per-line records.
EmbeddingMatrix load_embeddings_any(const std::filesystem::path& path);

struct Neighbor {
  std::string id;
  double score = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Exact scan. Sorted by score descending, ties by id ascending.
std::vector<Neighbor> knn(const EmbeddingMatrix& embeddings, std::string_view query_id, std::size_t k,
                          bool exclude_self);

struct RowScore {
  std::size_t row;
  double score;
};

// Row-level variant used by image selection: scores every row for which
// `eligible` is true (all rows when empty), skipping `query_row` when
// exclude_self. Same ordering rule as knn().
std::vector<RowScore> knn_rows(const EmbeddingMatrix& embeddings, std::size_t query_row, std::size_t k,
                               bool exclude_self, const std::vector<bool>& eligible = {});

struct ImageTriple {
  std::string anchor;
  std::optional<std::string> positive;
  std::optional<std::string> negative;

  friend bool operator==(const ImageTriple&, const ImageTriple&) = default;
};

// 1-based neighbor ranks from which the hard-negative image is drawn.
struct NegativeWindow {
  std::size_t lo = 20;
  std::size_t hi = 100;
};

// Corpus plus embeddings with the selectable pool precomputed: ok records
// that also have an embedding row.
class ImageStore {
 public:
  ImageStore(Corpus corpus, EmbeddingMatrix embeddings, NegativeWindow window = {});

  const Corpus& corpus() const noexcept { return corpus_; }
  const EmbeddingMatrix& embeddings() const noexcept { return embeddings_; }
  std::size_t pool_size() const noexcept { return pool_.size(); }
  NegativeWindow window() const noexcept { return window_; }

  // Anchor uniform over the pool. When the document side carries an image,
  // positive is the rank-1 neighbor and negative is uniform over ranks
  // [window.lo, window.hi], both clamped to the available neighbors.
  ImageTriple select(const SynthesisConfig& config) const;

 private:
  Corpus corpus_;
  EmbeddingMatrix embeddings_;
  NegativeWindow window_;
  std::vector<std::size_t> pool_;  // embedding rows
  std::vector<bool> eligible_;
};

ImageTriple select_images(const SynthesisConfig& config, const EmbeddingMatrix& embeddings, const Corpus& corpus,
                          NegativeWindow window = {});

// Deterministic stand-in corpus with Gaussian embeddings, used by mock runs
// that do not point at a real manifest.
struct DemoCorpus {
  Corpus corpus;
  EmbeddingMatrix embeddings;
};
DemoCorpus make_demo_corpus(std::size_t count, std::size_t dim, std::uint64_t seed);

}  // namespace mmsynth
