#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2cse/rng.hpp"
#include "d2cse/vocab.hpp"

namespace d2cse {

/// Training example. Unsupervised examples carry only the anchor; the
/// positive is the anchor itself under a second dropout mask.
struct Example {
  std::string anchor;
  std::optional<std::string> positive;
  std::optional<std::string> negative;

  bool supervised() const { return positive.has_value() && negative.has_value(); }
};

struct StsPair {
  std::string s1;
  std::string s2;
  double gold = 0.0;
};

/// Tab-separated "sentence1 TAB sentence2 TAB score" with score in [0, 5].
/// Lines starting with '#' are comments.
std::vector<StsPair> load_sts_tsv(const std::filesystem::path& path);
void write_sts_tsv(const std::filesystem::path& path, std::span<const StsPair> pairs,
                   const std::string& header = "");

/// premise TAB entailment TAB contradiction, one triple per line.
std::vector<Example> load_nli_triples(const std::filesystem::path& path);
void write_nli_triples(const std::filesystem::path& path, std::span<const Example> triples);

/// One sentence per line; every line (including empty ones) is an example.
std::vector<Example> load_corpus(const std::filesystem::path& path);

/// Token id rows padded with [PAD] to a common length, with masks
/// (1 = real token). Padding is always trailing.
struct Batch {
  std::vector<std::vector<TokenId>> ids;
  std::vector<std::vector<std::uint8_t>> mask;

  std::size_t size() const { return ids.size(); }
  std::size_t real_length(std::size_t row) const;
  std::span<const TokenId> real_ids(std::size_t row) const {
    return std::span<const TokenId>(ids[row]).first(real_length(row));
  }

  /// pad == false keeps each row at its own length (no padding at all).
  static Batch pack(std::vector<std::vector<TokenId>> rows, bool pad = true);
};

/// Deterministic epoch-wise batching over example indices.
class BatchStream {
 public:
  BatchStream(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed, bool shuffle);

  /// Index batches for one epoch; the order is reshuffled per epoch from
  /// derive_seed(seed, epoch). The final batch may be partial.
  std::vector<std::vector<std::size_t>> epoch(std::uint64_t epoch_index) const;

 private:
  std::size_t size_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
};

// ---------------------------------------------------------------------------
// Synthetic corpus with known semantics.
//
// Sentences follow "the ADJ NOUN VERB the NOUN". Every content word belongs
// to a synonym class; each part of speech has four classes arranged as two
// contrasting pairs (big/small, happy/sad, dog/cat, car/boat, likes/hates,
// helps/hurts). A sentence's meaning is its tuple of four slot classes.
//
// Gold similarity of a pair = f(k), k = number of slots whose class differs:
//   k = 0 -> 5.0, 1 -> 2.0, 2 -> 1.0, 3 -> 0.5, 4 -> 0.0
// ---------------------------------------------------------------------------

enum class PartOfSpeech { kAdj, kNoun, kVerb };

struct SynonymClass {
  std::string name;
  PartOfSpeech pos;
  std::size_t contrast;  // index of the contrasting class
  std::vector<std::string> words;
};

class Lexicon {
 public:
  /// The built-in twelve-class lexicon, each class truncated to
  /// `words_per_class` words (at most 16).
  static Lexicon builtin(std::size_t words_per_class = 16);

  const std::vector<SynonymClass>& classes() const { return classes_; }
  /// Every word of every class plus "the", in a fixed order.
  std::vector<std::string> vocabulary() const;
  /// Class index of a content word, or nullopt.
  std::optional<std::size_t> class_of(const std::string& word) const;
  std::vector<std::size_t> classes_for(PartOfSpeech pos) const;

 private:
  std::vector<SynonymClass> classes_;
};

/// Slot order of the template: ADJ, NOUN, VERB, NOUN.
inline constexpr PartOfSpeech kTemplateSlots[4] = {PartOfSpeech::kAdj, PartOfSpeech::kNoun,
                                                   PartOfSpeech::kVerb, PartOfSpeech::kNoun};

double gold_for_changes(std::size_t changed_slots);

/// Recomputes the gold score of a pair from its words. Throws if either
/// sentence does not follow the template.
double score_pair(const Lexicon& lexicon, const std::string& s1, const std::string& s2);

struct SyntheticConfig {
  std::uint64_t seed = 0;
  std::size_t num_sentences = 2000;
  std::size_t num_triples = 2000;
  std::size_t num_sts_pairs = 500;
  std::size_t words_per_class = 16;
};

struct SyntheticData {
  Lexicon lexicon;
  Vocab vocab;
  std::vector<std::string> corpus;  // distinct sentences
  std::vector<Example> triples;     // premise, synonym paraphrase, single-slot contrast swap
  std::vector<StsPair> sts;

  /// Writes vocab.txt, corpus.txt, nli.tsv and sts.tsv into `dir`.
  void write(const std::filesystem::path& dir) const;
};

/// Throws if num_sentences exceeds the number of distinct template
/// sentences the lexicon can form.
SyntheticData generate_synthetic(const SyntheticConfig& config);

/// Header written at the top of the synthetic STS file.
std::string synthetic_sts_header();

}  // namespace d2cse
