#include "d2cse/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace d2cse {
namespace {

std::string join_ids(std::span<const TokenId> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += std::to_string(ids[i]);
  }
  return out;
}

std::vector<TokenId> parse_ids(const std::string& field, const std::string& where) {
  std::istringstream in(field);
  std::vector<TokenId> ids;
  long long v = 0;
  while (in >> v) ids.push_back(static_cast<TokenId>(v));
  if (!in.eof()) throw std::runtime_error(where + ": malformed id list");
  return ids;
}

}  // namespace

std::size_t CorruptedSentence::replaced() const {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
}

CategoricalSampler::CategoricalSampler(std::vector<double> weights) : probs_(std::move(weights)) {
  const double total = std::accumulate(probs_.begin(), probs_.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("sampler: weights sum to zero");
  double running = 0.0;
  cumulative_.reserve(probs_.size());
  for (auto& p : probs_) {
    if (p < 0.0) throw std::invalid_argument("sampler: negative weight");
    if (p > 0.0) ++support_;
    p /= total;
    running += p;
    cumulative_.push_back(running);
  }
}

TokenId CategoricalSampler::sample(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  auto idx = static_cast<std::size_t>(it - cumulative_.begin());
  if (idx >= probs_.size()) idx = probs_.size() - 1;
  // Skip zero-mass entries that share a cumulative value with their successor.
  while (probs_[idx] == 0.0 && idx + 1 < probs_.size()) ++idx;
  return static_cast<TokenId>(idx);
}

double CategoricalSampler::probability(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= probs_.size()) return 0.0;
  return probs_[static_cast<std::size_t>(id)];
}

CategoricalSampler build_unigram_sampler(std::span<const std::vector<TokenId>> corpus,
                                         std::size_t vocab_size) {
  std::vector<double> counts(vocab_size, 0.0);
  bool any = false;
  for (const auto& sentence : corpus)
    for (auto id : sentence) {
      if (Vocab::is_special(id)) continue;
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw std::out_of_range("unigram sampler: id " + std::to_string(id) + " outside vocab");
      }
      counts[static_cast<std::size_t>(id)] += 1.0;
      any = true;
    }
  if (!any) throw std::invalid_argument("unigram sampler: corpus has no non-special tokens");
  return CategoricalSampler(std::move(counts));
}

CategoricalSampler build_uniform_sampler(std::size_t vocab_size) {
  if (vocab_size <= Vocab::kNumSpecial) throw std::invalid_argument("uniform sampler: no regular tokens");
  std::vector<double> weights(vocab_size, 1.0);
  std::fill_n(weights.begin(), Vocab::kNumSpecial, 0.0);
  return CategoricalSampler(std::move(weights));
}

bool is_word_token(TokenId id) { return id != Vocab::kPad && id != Vocab::kCls && id != Vocab::kSep; }

std::size_t replacement_count(std::size_t word_count, double masking_ratio) {
  if (masking_ratio <= 0.0 || word_count == 0) return 0;
  const auto m = static_cast<std::size_t>(std::llround(masking_ratio * static_cast<double>(word_count)));
  return std::clamp<std::size_t>(m, 1, word_count);
}

CorruptedSentence corrupt(std::span<const TokenId> ids, double masking_ratio,
                          const ReplacementSampler& sampler, Rng& rng) {
  if (!(masking_ratio >= 0.0 && masking_ratio < 1.0)) {
    throw std::invalid_argument("corrupt: masking ratio must lie in [0, 1)");
  }
  CorruptedSentence out{std::vector<TokenId>(ids.begin(), ids.end()), std::vector<bool>(ids.size(), false)};
  std::vector<std::size_t> positions;
  for (std::size_t k = 0; k < ids.size(); ++k)
    if (is_word_token(ids[k])) positions.push_back(k);
  const std::size_t m = replacement_count(positions.size(), masking_ratio);
  if (m == 0) return out;
  if (sampler.support_size() < 2) {
    throw std::invalid_argument("corrupt: sampler needs at least two candidate tokens");
  }
  // Partial Fisher-Yates: the first m entries become a uniform sample.
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(positions.size() - i));
    std::swap(positions[i], positions[j]);
  }
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t k = positions[i];
    TokenId replacement = sampler.sample(rng);
    while (replacement == ids[k]) replacement = sampler.sample(rng);
    out.ids[k] = replacement;
    out.flags[k] = true;
  }
  return out;
}

void precorrupt_corpus(const std::filesystem::path& corpus, const std::filesystem::path& out_path,
                       const Vocab& vocab, std::size_t max_seq_len, const CorruptionConfig& config,
                       const ReplacementSampler& sampler) {
  std::ifstream in(corpus);
  if (!in) throw std::runtime_error("cannot open corpus " + corpus.string());
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corrupted corpus " + out_path.string());
  std::string line;
  std::uint64_t index = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto ids = tokenize(line, vocab, max_seq_len);
    Rng rng(derive_seed(config.seed, index));
    CorruptedSentence c;
    try {
      c = corrupt(ids, config.masking_ratio, sampler, rng);
    } catch (const std::exception& e) {
      throw std::runtime_error(corpus.string() + ":" + std::to_string(index + 1) + ": " + e.what());
    }
    std::string bits;
    for (bool f : c.flags) bits.push_back(f ? '1' : '0');
    out << join_ids(ids) << '\t' << join_ids(c.ids) << '\t' << bits << '\n';
    ++index;
  }
  if (!out) throw std::runtime_error("write failed for " + out_path.string());
}

std::vector<CorruptedRecord> load_corrupted(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corrupted corpus " + path.string());
  std::vector<CorruptedRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      fields.push_back(line.substr(start, tab - start));
    fields.push_back(line.substr(start));
    if (fields.size() != 3) throw std::runtime_error(where + ": expected 3 tab-separated fields");
    CorruptedRecord r;
    r.original = parse_ids(fields[0], where);
    r.corrupted.ids = parse_ids(fields[1], where);
    if (r.original.size() != r.corrupted.ids.size() || fields[2].size() != r.original.size()) {
      throw std::runtime_error(where + ": field lengths disagree");
    }
    for (std::size_t k = 0; k < fields[2].size(); ++k) {
      const char c = fields[2][k];
      if (c != '0' && c != '1') throw std::runtime_error(where + ": flag bitstring must be 0/1");
      r.corrupted.flags.push_back(c == '1');
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace d2cse
