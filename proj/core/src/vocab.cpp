#include "d2cse/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace d2cse {
namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return specials;
}

}  // namespace

Vocab::Vocab(const std::vector<std::string>& words) {
  for (const auto& s : special_tokens()) add(s);
  for (const auto& w : words) add(w);
}

void Vocab::add(const std::string& token) {
  if (token.empty()) throw std::invalid_argument("vocab: empty token");
  if (ids_.count(token)) throw std::invalid_argument("vocab: duplicate token '" + token + "'");
  ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  const auto& specials = special_tokens();
  if (lines.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), lines.begin())) {
    throw std::runtime_error(path.string() + ": first five lines must be [PAD],[UNK],[CLS],[SEP],[MASK]");
  }
  Vocab vocab;
  for (std::size_t i = specials.size(); i < lines.size(); ++i) {
    try {
      vocab.add(lines[i]);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return vocab;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

TokenId Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(std::string_view text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lowered);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab, std::size_t max_seq_len) {
  if (max_seq_len < 2) throw std::invalid_argument("tokenize: max_seq_len must be >= 2");
  auto words = split_words(text);
  if (words.size() > max_seq_len - 2) words.resize(max_seq_len - 2);
  std::vector<TokenId> ids;
  ids.reserve(words.size() + 2);
  ids.push_back(Vocab::kCls);
  for (const auto& w : words) ids.push_back(vocab.id(w));
  ids.push_back(Vocab::kSep);
  return ids;
}

}  // namespace d2cse
