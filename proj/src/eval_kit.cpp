#include "mmsynth/eval_kit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "mmsynth/error.hpp"

namespace mmsynth {
namespace {

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw EvalError("cosine: dimension mismatch");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = static_cast<double>(a[i]);
    const auto y = static_cast<double>(b[i]);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) throw EvalError("cosine: zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

void check_gold(const ScoreMatrix& scores, const Relevance& gold) {
  if (gold.size() != scores.rows()) throw EvalError("relevance rows do not match score rows");
  for (std::size_t q = 0; q < gold.size(); ++q) {
    if (gold[q].empty()) throw EvalError("query row " + std::to_string(q) + " has no relevant doc");
    for (const auto c : gold[q]) {
      if (c >= scores.cols()) throw EvalError("relevant doc column out of range");
    }
  }
}

bool is_gold(const std::vector<std::size_t>& gold, std::size_t col) {
  return std::find(gold.begin(), gold.end(), col) != gold.end();
}

}  // namespace

double cosine(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }
double cosine(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }

double info_nce_from_cosines(double positive_cos, std::span<const double> negative_cos, LossParams params) {
  if (!(params.tau > 0.0) || !std::isfinite(params.tau)) throw EvalError("tau must be a positive finite number");
  const double pos = positive_cos / params.tau;
  double max_logit = pos;
  for (double c : negative_cos) max_logit = std::max(max_logit, c / params.tau);
  double sum = std::exp(pos - max_logit);
  for (double c : negative_cos) sum += std::exp(c / params.tau - max_logit);
  // log(sum) + max - pos, rearranged to keep the symmetric cases exact.
  const double loss = std::log(sum) - (pos - max_logit);
  return std::max(0.0, loss);
}

double info_nce(std::span<const float> query, std::span<const float> positive,
                std::span<const std::vector<float>> negatives, LossParams params) {
  std::vector<double> neg;
  neg.reserve(negatives.size());
  for (const auto& n : negatives) neg.push_back(cosine(query, n));
  return info_nce_from_cosines(cosine(query, positive), neg, params);
}

ScoreMatrix::ScoreMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) throw EvalError("score matrix shape mismatch");
}

std::vector<std::size_t> rank_columns(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> cols(scores.size());
  std::iota(cols.begin(), cols.end(), std::size_t{0});
  const std::size_t take = std::min(k, cols.size());
  std::partial_sort(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(take), cols.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  cols.resize(take);
  return cols;
}

double precision_at_1(const ScoreMatrix& scores, const Relevance& gold) {
  return recall_at_k(scores, gold, 1);
}

double recall_at_k(const ScoreMatrix& scores, const Relevance& gold, std::size_t k) {
  if (k == 0) throw EvalError("k must be >= 1");
  check_gold(scores, gold);
  if (scores.rows() == 0) throw EvalError("no queries");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < scores.rows(); ++q) {
    for (const auto c : rank_columns(scores.row(q), k)) {
      if (is_gold(gold[q], c)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(scores.rows());
}

ScoreMatrix score_matrix(const EmbeddingMatrix& queries, const EmbeddingMatrix& docs) {
  if (queries.dim() != docs.dim()) throw EvalError("query and doc dims differ");
  ScoreMatrix out(queries.size(), docs.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t d = 0; d < docs.size(); ++d) out.at(q, d) = cosine(queries.row(q), docs.row(d));
  }
  return out;
}

Relevance load_relevance(const std::filesystem::path& file, const EmbeddingMatrix& queries,
                         const EmbeddingMatrix& docs) {
  std::ifstream in(file);
  if (!in) throw EvalError("cannot open " + file.string());
  Relevance gold(queries.size());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = file.string() + ": line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw EvalError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("query_id") || !j.contains("doc_id") || !j["query_id"].is_string() ||
        !j["doc_id"].is_string()) {
      throw EvalError(where + ": expected {\"query_id\", \"doc_id\"}");
    }
    const auto q = queries.find(j["query_id"].get<std::string>());
    const auto d = docs.find(j["doc_id"].get<std::string>());
    if (!q) throw EvalError(where + ": unknown query id " + j["query_id"].get<std::string>());
    if (!d) throw EvalError(where + ": unknown doc id " + j["doc_id"].get<std::string>());
    if (!is_gold(gold[*q], *d)) gold[*q].push_back(*d);
  }
  return gold;
}

double mean_info_nce(const EvalInputs& inputs, LossParams params) {
  const auto scores = score_matrix(inputs.queries, inputs.docs);
  check_gold(scores, inputs.gold);
  double total = 0.0;
  std::vector<double> neg;
  for (std::size_t q = 0; q < scores.rows(); ++q) {
    neg.clear();
    for (std::size_t d = 0; d < scores.cols(); ++d) {
      if (!is_gold(inputs.gold[q], d)) neg.push_back(scores.at(q, d));
    }
    total += info_nce_from_cosines(scores.at(q, inputs.gold[q].front()), neg, params);
  }
  return scores.rows() == 0 ? 0.0 : total / static_cast<double>(scores.rows());
}

std::string mine_hard_negative(std::span<const std::string> ranking, std::string_view positive, std::size_t rank) {
  if (rank == 0) throw EvalError("rank must be >= 1");
  if (ranking.empty()) throw EvalError("empty ranking");
  if (rank <= ranking.size()) {
    if (ranking[rank - 1] != positive) return ranking[rank - 1];
    if (rank < ranking.size()) return ranking[rank];
  }
  for (std::size_t i = ranking.size(); i-- > 0;) {
    if (ranking[i] != positive) return ranking[i];
  }
  throw EvalError("ranking holds no candidate other than the positive");
}

LinearLogFit fit_linear_log(std::span<const ScalingPoint> points) {
  if (points.size() < 2) throw EvalError("fit needs at least two points");
  std::vector<double> xs;
  xs.reserve(points.size());
  for (const auto& p : points) {
    if (!(p.n > 0.0)) throw EvalError("data sizes must be positive");
    xs.push_back(std::log10(p.n));
  }
  const auto n = static_cast<double>(points.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    mx += xs[i];
    my += points[i].y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = points[i].y - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw EvalError("degenerate fit: all data sizes are equal");
  LinearLogFit fit{};
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double r = points[i].y - (fit.slope * xs[i] + fit.intercept);
    ss_res += r * r;
  }
  // A constant y is fit exactly by a flat line.
  fit.r_squared = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
  return fit;
}

}  // namespace mmsynth
