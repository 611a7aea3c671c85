#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d2cse/rng.hpp"
#include "d2cse/vocab.hpp"

namespace d2cse {

enum class SamplerKind { kUnigram, kUniform };

struct CorruptionConfig {
  double masking_ratio = 0.3;
  std::uint64_t seed = 0;
  SamplerKind sampler = SamplerKind::kUnigram;
};

/// A corrupted copy of a sentence. flags[k] is true iff ids[k] differs from
/// the original at position k.
struct CorruptedSentence {
  std::vector<TokenId> ids;
  std::vector<bool> flags;

  std::size_t replaced() const;
};

/// Source of replacement tokens. A learned masked-LM generator would plug
/// in here.
class ReplacementSampler {
 public:
  virtual ~ReplacementSampler() = default;
  virtual TokenId sample(Rng& rng) const = 0;
  /// Number of distinct tokens with nonzero probability.
  virtual std::size_t support_size() const = 0;
  virtual double probability(TokenId id) const = 0;
};

/// Draws from a fixed categorical distribution over token ids.
class CategoricalSampler final : public ReplacementSampler {
 public:
  explicit CategoricalSampler(std::vector<double> weights);

  TokenId sample(Rng& rng) const override;
  std::size_t support_size() const override { return support_; }
  double probability(TokenId id) const override;

 private:
  std::vector<double> cumulative_;
  std::vector<double> probs_;
  std::size_t support_ = 0;
};

/// Replacement distribution proportional to corpus frequency over
/// non-special tokens. Throws if the corpus holds no countable token.
CategoricalSampler build_unigram_sampler(std::span<const std::vector<TokenId>> corpus,
                                         std::size_t vocab_size);
CategoricalSampler build_uniform_sampler(std::size_t vocab_size);

/// Word positions are everything except [PAD], [CLS] and [SEP].
bool is_word_token(TokenId id);

/// M = max(1, round(ratio * L)) for ratio > 0 and L >= 1, else 0.
std::size_t replacement_count(std::size_t word_count, double masking_ratio);

/// Replaces M distinct word positions, chosen uniformly without
/// replacement, with sampler draws that differ from the original token.
CorruptedSentence corrupt(std::span<const TokenId> ids, double masking_ratio,
                          const ReplacementSampler& sampler, Rng& rng);

struct CorruptedRecord {
  std::vector<TokenId> original;
  CorruptedSentence corrupted;
};

/// Tokenizes every corpus line and writes one record per line:
/// original ids TAB corrupted ids TAB flag bitstring. Line i uses the rng
/// stream derive_seed(config.seed, i).
void precorrupt_corpus(const std::filesystem::path& corpus, const std::filesystem::path& out,
                       const Vocab& vocab, std::size_t max_seq_len, const CorruptionConfig& config,
                       const ReplacementSampler& sampler);

std::vector<CorruptedRecord> load_corrupted(const std::filesystem::path& path);

}  // namespace d2cse
