#include "d2cse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "d2cse/tensor.hpp"

namespace d2cse {
namespace {

Vector normalized(const Vector& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw std::domain_error("cannot normalize a zero vector");
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

double squared_distance(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("vector widths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double cosine(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("vector widths differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine of a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size()) {
    throw std::invalid_argument("spearman: " + std::to_string(pred.size()) + " predictions for " +
                                std::to_string(gold.size()) + " gold scores");
  }
  if (pred.size() < 2) throw std::invalid_argument("spearman: need at least 2 pairs");
  const auto rp = average_ranks(pred);
  const auto rg = average_ranks(gold);
  const double n = static_cast<double>(rp.size());
  const double mp = std::accumulate(rp.begin(), rp.end(), 0.0) / n;
  const double mg = std::accumulate(rg.begin(), rg.end(), 0.0) / n;
  double cov = 0.0, vp = 0.0, vg = 0.0;
  for (std::size_t i = 0; i < rp.size(); ++i) {
    cov += (rp[i] - mp) * (rg[i] - mg);
    vp += (rp[i] - mp) * (rp[i] - mp);
    vg += (rg[i] - mg) * (rg[i] - mg);
  }
  if (vp == 0.0) throw std::invalid_argument("spearman: predictions are constant");
  if (vg == 0.0) throw std::invalid_argument("spearman: gold scores are constant");
  return cov / std::sqrt(vp * vg);
}

RetrievalSet build_retrieval_set(std::span<const StsPair> pairs, double min_gold) {
  RetrievalSet set;
  std::unordered_map<std::string, std::size_t> index;
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = index.emplace(s, set.pool.size());
    if (inserted) set.pool.push_back(s);
    return it->second;
  };
  for (const auto& p : pairs) {
    const auto a = intern(p.s1);
    const auto b = intern(p.s2);
    if (p.gold >= min_gold && a != b) set.queries.emplace_back(a, b);
  }
  return set;
}

std::vector<std::size_t> gold_ranks(std::span<const Vector> vectors, const RetrievalSet& set) {
  if (vectors.size() != set.pool.size()) {
    throw DimensionError("gold_ranks: " + std::to_string(vectors.size()) + " vectors for a pool of " +
                         std::to_string(set.pool.size()));
  }
  std::vector<std::size_t> ranks;
  ranks.reserve(set.queries.size());
  for (const auto& [query, gold] : set.queries) {
    if (gold >= set.pool.size() || gold == query) {
      const std::string name = query < set.pool.size() ? set.pool[query] : std::to_string(query);
      throw std::invalid_argument("gold answer missing from the candidate pool for query '" + name + "'");
    }
    const double target = cosine(vectors[query], vectors[gold]);
    std::size_t rank = 1;
    for (std::size_t j = 0; j < vectors.size(); ++j) {
      if (j == query || j == gold) continue;
      const double s = cosine(vectors[query], vectors[j]);
      if (s > target || (s == target && j < gold)) ++rank;
    }
    ranks.push_back(rank);
  }
  return ranks;
}

double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw std::invalid_argument("recall: no queries");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double recall_at_k(std::span<const Vector> vectors, const RetrievalSet& set, std::size_t k) {
  const auto ranks = gold_ranks(vectors, set);
  return recall_from_ranks(ranks, k);
}

double alignment(std::span<const Vector> left, std::span<const Vector> right) {
  if (left.size() != right.size()) throw DimensionError("alignment: pair sides differ in count");
  if (left.empty()) throw std::invalid_argument("alignment: no positive pairs");
  double total = 0.0;
  for (std::size_t i = 0; i < left.size(); ++i) total += squared_distance(normalized(left[i]), normalized(right[i]));
  return total / static_cast<double>(left.size());
}

double uniformity(std::span<const Vector> vectors) {
  if (vectors.size() < 2) throw std::invalid_argument("uniformity: need at least 2 vectors");
  std::vector<Vector> unit;
  unit.reserve(vectors.size());
  for (const auto& v : vectors) unit.push_back(normalized(v));
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < unit.size(); ++i) {
    for (std::size_t j = i + 1; j < unit.size(); ++j) {
      total += std::exp(-2.0 * squared_distance(unit[i], unit[j]));
      ++count;
    }
  }
  return std::log(total / static_cast<double>(count));
}

std::size_t histogram_bin(double sim, std::size_t bins) {
  const double pos = (std::clamp(sim, -1.0, 1.0) + 1.0) / 2.0 * static_cast<double>(bins);
  return std::min(static_cast<std::size_t>(pos), bins - 1);
}

Histogram similarity_histogram(std::span<const double> sims, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  Histogram h{std::vector<double>(bins, 0.0)};
  if (sims.empty()) return h;
  for (double s : sims) h.mass[histogram_bin(s, bins)] += 1.0;
  for (double& m : h.mass) m /= static_cast<double>(sims.size());
  return h;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "pairs " << num_pairs << '\n'
     << "queries " << num_queries << '\n'
     << "spearman " << format_double(spearman) << '\n';
  for (std::size_t i = 0; i < 3; ++i) os << "recall@" << kRecallCutoffs[i] << ' ' << format_double(recall[i]) << '\n';
  os << "alignment " << format_double(alignment) << '\n' << "uniformity " << format_double(uniformity) << '\n';
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["pairs"] = num_pairs;
  j["queries"] = num_queries;
  j["spearman"] = spearman;
  for (std::size_t i = 0; i < 3; ++i) j["recall@" + std::to_string(kRecallCutoffs[i])] = recall[i];
  j["alignment"] = alignment;
  j["uniformity"] = uniformity;
  j["histogram"] = histogram.mass;
  return j.dump(2) + "\n";
}

std::string EvalReport::histogram_csv() const {
  std::ostringstream os;
  os << "bin_left,bin_right,mass\n";
  for (std::size_t i = 0; i < histogram.mass.size(); ++i) {
    os << format_double(histogram.bin_left(i)) << ',' << format_double(histogram.bin_right(i)) << ','
       << format_double(histogram.mass[i]) << '\n';
  }
  return os.str();
}

void EvalReport::write(const std::filesystem::path& stem) const {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const auto put = [](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
  };
  put(stem.string() + ".txt", to_text());
  put(stem.string() + ".json", to_json());
  put(stem.string() + ".hist.csv", histogram_csv());
}

EvalReport build_report(std::span<const StsPair> pairs, std::span<const Vector> first,
                        std::span<const Vector> second, const RetrievalSet& retrieval,
                        std::span<const Vector> pool_vectors) {
  if (first.size() != pairs.size() || second.size() != pairs.size()) {
    throw DimensionError("build_report: vector count does not match pair count");
  }
  EvalReport report;
  report.num_pairs = pairs.size();
  report.num_queries = retrieval.queries.size();

  std::vector<double> pred, gold;
  std::vector<Vector> pos_left, pos_right;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pred.push_back(cosine(first[i], second[i]));
    gold.push_back(pairs[i].gold);
    if (pairs[i].gold >= 4.0) {
      pos_left.push_back(first[i]);
      pos_right.push_back(second[i]);
    }
  }
  report.spearman = spearman(pred, gold);
  const auto ranks = gold_ranks(pool_vectors, retrieval);
  for (std::size_t i = 0; i < 3; ++i) report.recall[i] = recall_from_ranks(ranks, kRecallCutoffs[i]);
  report.alignment = alignment(pos_left, pos_right);
  report.uniformity = uniformity(pool_vectors);
  report.histogram = similarity_histogram(pred);
  return report;
}

}  // namespace d2cse
