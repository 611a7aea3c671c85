#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "d2cse/metrics.hpp"
#include "d2cse/rng.hpp"

using namespace d2cse;

namespace {

std::vector<Vector> random_vectors(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<Vector> out(n, Vector(d));
  for (auto& v : out)
    for (auto& x : v) x = rng.normal();
  return out;
}

// Random orthogonal matrix from Gram-Schmidt on Gaussian columns.
std::vector<Vector> random_rotation(Rng& rng, std::size_t d) {
  auto q = random_vectors(rng, d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += q[i][k] * q[j][k];
      for (std::size_t k = 0; k < d; ++k) q[i][k] -= dot * q[j][k];
    }
    double norm = 0;
    for (double x : q[i]) norm += x * x;
    for (double& x : q[i]) x /= std::sqrt(norm);
  }
  return q;
}

std::vector<Vector> rotate(const std::vector<Vector>& vs, const std::vector<Vector>& r) {
  std::vector<Vector> out;
  for (const auto& v : vs) {
    Vector w(v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t k = 0; k < v.size(); ++k) w[i] += r[i][k] * v[k];
    out.push_back(w);
  }
  return out;
}

double cosine(const Vector& a, const Vector& b) {
  double dot = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return dot / std::sqrt(aa * bb);
}

}  // namespace

TEST(Spearman, Examples) {
  const Vector gold = {1, 2, 3};
  EXPECT_NEAR(spearman(Vector{3, 1, 2}, gold), -0.5, 1e-12);
  EXPECT_NEAR(spearman(Vector{10, 20, 30}, gold), 1.0, 1e-12);
  EXPECT_NEAR(spearman(Vector{3, 2, 1}, gold), -1.0, 1e-12);
  EXPECT_THROW(spearman(Vector{1, 1, 1}, gold), std::invalid_argument);
  EXPECT_THROW(spearman(gold, Vector{2, 2, 2}), std::invalid_argument);
  EXPECT_THROW(spearman(Vector{1}, Vector{1}), std::invalid_argument);
  EXPECT_THROW(spearman(Vector{1, 2}, gold), std::invalid_argument);
}

TEST(Spearman, RankDifferenceFormulaWithoutTies) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(20);
    Vector a(n), b(n);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    const auto ra = average_ranks(a), rb = average_ranks(b);
    double d2 = 0;
    for (std::size_t i = 0; i < n; ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
    const double nn = static_cast<double>(n);
    EXPECT_NEAR(spearman(a, b), 1 - 6 * d2 / (nn * (nn * nn - 1)), 1e-12);
  }
}

TEST(Spearman, AverageRanksForTies) {
  EXPECT_EQ(average_ranks(Vector{5, 1, 5, 3}), (Vector{3.5, 1, 3.5, 2}));
}

TEST(Spearman, MonotoneTransformInvariance) {
  Rng rng(9);
  Vector pred(40), gold(40);
  for (auto& x : pred) x = rng.normal();
  for (auto& x : gold) x = static_cast<double>(rng.uniform_index(6));
  const double base = spearman(pred, gold);
  Vector cubed = pred, exped = pred;
  for (auto& x : cubed) x = x * x * x;
  for (auto& x : exped) x = std::exp(x);
  EXPECT_NEAR(spearman(cubed, gold), base, 1e-12);
  EXPECT_NEAR(spearman(exped, gold), base, 1e-12);
}

TEST(Recall, FromRanks) {
  const std::vector<std::size_t> ranks = {1, 2, 4};
  EXPECT_NEAR(recall_from_ranks(ranks, 1), 100.0 / 3, 1e-12);
  EXPECT_NEAR(recall_from_ranks(ranks, 3), 200.0 / 3, 1e-12);
  EXPECT_EQ(recall_from_ranks(ranks, 5), 100.0);
}

TEST(Recall, RetrievalSetFromPairs) {
  const std::vector<StsPair> pairs = {{"a", "b", 5.0}, {"c", "a", 1.0}, {"d", "d", 5.0}, {"c", "e", 5.0}};
  const auto set = build_retrieval_set(pairs);
  EXPECT_EQ(set.pool, (std::vector<std::string>{"a", "b", "c", "d", "e"}));
  ASSERT_EQ(set.queries.size(), 2u);
  EXPECT_EQ(set.queries[0], (std::pair<std::size_t, std::size_t>{0, 1}));
  EXPECT_EQ(set.queries[1], (std::pair<std::size_t, std::size_t>{2, 4}));
}

TEST(Recall, RanksExcludeQueryAndBreakTiesByPoolIndex) {
  RetrievalSet set;
  set.pool = {"q", "x", "y", "z"};
  set.queries = {{0, 3}, {0, 1}, {0, 2}};
  const std::vector<Vector> vectors = {{1, 0}, {0, 1}, {0, 1}, {1, 0.5}};
  EXPECT_EQ(gold_ranks(vectors, set), (std::vector<std::size_t>{1, 2, 3}));
  const std::vector<Vector> perfect = {{1, 0}, {1, 0}, {1, 0}, {1, 0}};
  set.queries = {{0, 1}, {2, 0}};
  EXPECT_EQ(recall_at_k(perfect, set, 1), 100.0);
}

TEST(Recall, MatchesBruteForceAndIsMonotone) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 4 + rng.uniform_index(10);
    const auto vectors = random_vectors(rng, n, 3);
    RetrievalSet set;
    for (std::size_t i = 0; i < n; ++i) set.pool.push_back("s" + std::to_string(i));
    for (std::size_t q = 0; q < n; ++q) {
      std::size_t g = rng.uniform_index(n - 1);
      if (g >= q) ++g;
      set.queries.push_back({q, g});
    }
    const auto ranks = gold_ranks(vectors, set);
    for (std::size_t i = 0; i < set.queries.size(); ++i) {
      const auto [q, g] = set.queries[i];
      std::size_t better = 0;
      for (std::size_t c = 0; c < n; ++c)
        if (c != q && c != g && cosine(vectors[q], vectors[c]) > cosine(vectors[q], vectors[g])) ++better;
      EXPECT_EQ(ranks[i], better + 1);
    }
    const double r1 = recall_at_k(vectors, set, 1), r3 = recall_at_k(vectors, set, 3),
                 r5 = recall_at_k(vectors, set, 5);
    EXPECT_LE(r1, r3);
    EXPECT_LE(r3, r5);
    auto scaled = vectors;
    for (auto& v : scaled)
      for (auto& x : v) x *= 7.5;
    EXPECT_EQ(gold_ranks(scaled, set), ranks);
  }
}

TEST(Alignment, Examples) {
  const std::vector<Vector> u = {{1, 0}}, v = {{0, 1}}, w = {{-1, 0}};
  EXPECT_EQ(alignment(u, u), 0.0);
  EXPECT_NEAR(alignment(u, v), 2.0, 1e-12);
  EXPECT_NEAR(alignment(u, w), 4.0, 1e-12);
  EXPECT_NEAR(alignment(std::vector<Vector>{{3, 0}}, std::vector<Vector>{{0, 0.5}}), 2.0, 1e-12);
  EXPECT_THROW(alignment(std::vector<Vector>{}, std::vector<Vector>{}), std::invalid_argument);
}

TEST(Uniformity, Examples) {
  EXPECT_EQ(uniformity(std::vector<Vector>{{1, 0}, {1, 0}, {2, 0}}), 0.0);
  EXPECT_NEAR(uniformity(std::vector<Vector>{{1, 0}, {-1, 0}}), -8.0, 1e-12);
  EXPECT_NEAR(uniformity(std::vector<Vector>{{1, 0}, {0, 1}}), -4.0, 1e-12);
  EXPECT_THROW(uniformity(std::vector<Vector>{{1, 0}}), std::invalid_argument);
}

TEST(AlignmentUniformity, RotationInvariant) {
  Rng rng(21);
  const auto left = random_vectors(rng, 12, 5), right = random_vectors(rng, 12, 5);
  const auto r = random_rotation(rng, 5);
  EXPECT_NEAR(alignment(rotate(left, r), rotate(right, r)), alignment(left, right), 1e-10);
  EXPECT_NEAR(uniformity(rotate(left, r)), uniformity(left), 1e-10);
}

TEST(Histogram, PlacementAndMass) {
  EXPECT_EQ(histogram_bin(1.0), 49u);
  EXPECT_EQ(histogram_bin(-1.0), 0u);
  EXPECT_EQ(histogram_bin(0.0), 25u);
  EXPECT_EQ(histogram_bin(1.5), 49u);
  EXPECT_EQ(histogram_bin(-3.0), 0u);
  const auto single = similarity_histogram(Vector{1.0});
  ASSERT_EQ(single.mass.size(), 50u);
  EXPECT_EQ(single.mass[49], 1.0);
  const auto zero = similarity_histogram(Vector{0.0});
  EXPECT_LE(zero.bin_left(histogram_bin(0.0)), 0.0);
  EXPECT_GT(zero.bin_right(histogram_bin(0.0)), 0.0);
  EXPECT_EQ(zero.mass[histogram_bin(0.0)], 1.0);
  Rng rng(2);
  Vector sims(1000);
  for (auto& s : sims) s = rng.uniform(-1, 1);
  const auto h = similarity_histogram(sims);
  double total = 0;
  for (double m : h.mass) total += m;
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(EvalReport, TextJsonAndCsv) {
  EvalReport r;
  r.num_pairs = 4;
  r.num_queries = 2;
  r.spearman = 0.25;
  r.recall = {50.0, 100.0, 100.0};
  r.alignment = 1.5;
  r.uniformity = -2.0;
  r.histogram = similarity_histogram(Vector{0.1, 0.9});
  EXPECT_NE(r.to_text().find("spearman 0.25"), std::string::npos);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j.at("recall@1").get<double>(), 50.0);
  EXPECT_EQ(j.at("uniformity").get<double>(), -2.0);
  const auto csv = r.histogram_csv();
  EXPECT_EQ(csv.rfind("bin_left,bin_right,mass\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 51);
  const auto stem = std::filesystem::temp_directory_path() / "d2cse_report";
  r.write(stem);
  for (const char* ext : {".txt", ".json", ".hist.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(stem.string() + ext)) << ext;
  }
}
