#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmsynth/image_store.hpp"

namespace mmsynth {

// dot(a, b) / (|a| |b|). Throws EvalError on dimension mismatch or a
// zero-norm input.
double cosine(std::span<const float> a, std::span<const float> b);
double cosine(std::span<const double> a, std::span<const double> b);

struct LossParams {
  double tau;  // temperature, > 0; no default on purpose
};

// -log(phi(q,d+) / (phi(q,d+) + sum phi(q,d-))) with phi = exp(cos / tau),
// evaluated as logsumexp(logits) - logit(d+) after subtracting the max logit.
double info_nce_from_cosines(double positive_cos, std::span<const double> negative_cos, LossParams params);
double info_nce(std::span<const float> query, std::span<const float> positive,
                std::span<const std::vector<float>> negatives, LossParams params);

// Dense query x doc score matrix, row-major.
class ScoreMatrix {
 public:
  ScoreMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  ScoreMatrix(std::size_t rows, std::size_t cols) : ScoreMatrix(rows, cols, std::vector<double>(rows * cols)) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> values_;
};

// Per query row, the relevant doc columns.
using Relevance = std::vector<std::vector<std::size_t>>;

// Columns of one row ranked by score descending, ties by column ascending.
std::vector<std::size_t> rank_columns(std::span<const double> scores, std::size_t k);

// A query with no relevant doc is an input error.
double precision_at_1(const ScoreMatrix& scores, const Relevance& gold);
double recall_at_k(const ScoreMatrix& scores, const Relevance& gold, std::size_t k);

// Cosine scores between every query row and every doc row.
ScoreMatrix score_matrix(const EmbeddingMatrix& queries, const EmbeddingMatrix& docs);

struct EvalInputs {
  EmbeddingMatrix queries;
  EmbeddingMatrix docs;
  Relevance gold;  // indexed by query row, values are doc rows
};

// Relevance file: one {"query_id": "...", "doc_id": "..."} object per line.
// Ids are resolved against the matrices; unknown ids are input errors.
Relevance load_relevance(const std::filesystem::path& file, const EmbeddingMatrix& queries,
                         const EmbeddingMatrix& docs);

// Mean InfoNCE over queries: first gold doc is the positive, every non-gold
// doc a negative.
double mean_info_nce(const EvalInputs& inputs, LossParams params);

inline constexpr std::size_t kDefaultHardNegativeRank = 70;

// Id at 1-based `rank`; the next one if that is the positive; the last
// non-positive id when the ranking is shorter than `rank`.
std::string mine_hard_negative(std::span<const std::string> ranking, std::string_view positive,
                               std::size_t rank = kDefaultHardNegativeRank);

struct ScalingPoint {
  double n;
  double y;
};

struct LinearLogFit {
  double slope;
  double intercept;
  double r_squared;
};

// Least squares of y = slope * log10(n) + intercept.
LinearLogFit fit_linear_log(std::span<const ScalingPoint> points);

}  // namespace mmsynth
