#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d2cse/data.hpp"

namespace d2cse {

using Vector = std::vector<double>;

/// 1-based ranks; tied values share the average of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman's rho: Pearson correlation of the average-rank vectors.
/// Throws std::invalid_argument on length mismatch, n < 2, or a constant input.
double spearman(std::span<const double> pred, std::span<const double> gold);

/// Retrieval queries over a pool of distinct sentences. Each query is a
/// pool index and the pool index of its gold answer.
struct RetrievalSet {
  std::vector<std::string> pool;
  std::vector<std::pair<std::size_t, std::size_t>> queries;
};

/// Pool = distinct sentences in order of first appearance; queries = the
/// pairs scored `min_gold` or above. Pairs whose two sides are the same
/// text are skipped (the answer would be the excluded query itself).
RetrievalSet build_retrieval_set(std::span<const StsPair> pairs, double min_gold = 5.0);

/// 1-based rank of each query's gold answer among all pool entries except
/// the query, by descending cosine. Equal scores keep pool order.
/// `vectors[i]` embeds `set.pool[i]`.
std::vector<std::size_t> gold_ranks(std::span<const Vector> vectors, const RetrievalSet& set);

/// 100 * fraction of ranks <= k.
double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k);
double recall_at_k(std::span<const Vector> vectors, const RetrievalSet& set, std::size_t k);

/// Mean squared distance between normalized positive pairs.
double alignment(std::span<const Vector> left, std::span<const Vector> right);

/// log mean over distinct pairs of exp(-2 |x - y|^2), vectors normalized.
double uniformity(std::span<const Vector> vectors);

inline constexpr std::size_t kHistogramBins = 50;

struct Histogram {
  std::vector<double> mass;  // sums to 1

  double bin_left(std::size_t i) const { return -1.0 + 2.0 * static_cast<double>(i) / mass.size(); }
  double bin_right(std::size_t i) const { return bin_left(i + 1); }
  bool operator==(const Histogram&) const = default;
};

/// Bin index of a similarity over [-1, 1]; 1.0 falls into the last bin and
/// out-of-range values are clamped.
std::size_t histogram_bin(double sim, std::size_t bins = kHistogramBins);
Histogram similarity_histogram(std::span<const double> sims, std::size_t bins = kHistogramBins);

struct EvalReport {
  std::size_t num_pairs = 0;
  std::size_t num_queries = 0;
  double spearman = 0.0;
  std::array<double, 3> recall{0.0, 0.0, 0.0};  // @1, @3, @5
  double alignment = 0.0;
  double uniformity = 0.0;
  Histogram histogram;

  bool operator==(const EvalReport&) const = default;

  /// "key value" lines.
  std::string to_text() const;
  std::string to_json() const;
  std::string histogram_csv() const;
  /// Writes <stem>.txt, <stem>.json and <stem>.hist.csv.
  void write(const std::filesystem::path& stem) const;
};

inline constexpr std::size_t kRecallCutoffs[3] = {1, 3, 5};

/// Full report from sentence vectors. `first[i]`/`second[i]` embed
/// pairs[i]; `pool_vectors` embeds `retrieval.pool`. Alignment uses pairs
/// with gold >= 4; uniformity uses the pool.
EvalReport build_report(std::span<const StsPair> pairs, std::span<const Vector> first,
                        std::span<const Vector> second, const RetrievalSet& retrieval,
                        std::span<const Vector> pool_vectors);

}  // namespace d2cse
