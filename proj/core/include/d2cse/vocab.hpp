#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace d2cse {

using TokenId = std::int32_t;

/// Token <-> id table. Ids 0..4 are always [PAD], [UNK], [CLS], [SEP], [MASK].
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kMask = 4;
  static constexpr std::size_t kNumSpecial = 5;

  /// Specials followed by `words` in order; duplicates are rejected.
  explicit Vocab(const std::vector<std::string>& words = {});

  /// One token per line, line number = id; first five lines must be the
  /// special tokens in canonical order.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  static bool is_special(TokenId id) { return id >= 0 && id < static_cast<TokenId>(kNumSpecial); }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Lowercased whitespace split wrapped as [CLS] ... [SEP]. Out-of-vocabulary
/// words map to [UNK]; words past max_seq_len - 2 are dropped.
std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab, std::size_t max_seq_len);

/// Words only, without the special wrapper or truncation.
std::vector<std::string> split_words(std::string_view text);

}  // namespace d2cse
