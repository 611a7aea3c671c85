#include "d2cse/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace d2cse {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
    fields.push_back(line.substr(start, tab - start));
  fields.push_back(line.substr(start));
  return fields;
}

std::ifstream open_input(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(std::string("cannot open ") + what + " " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

bool next_line(std::ifstream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

const std::vector<SynonymClass>& builtin_classes() {
  using P = PartOfSpeech;
  static const std::vector<SynonymClass> classes = {
      {"big", P::kAdj, 1,
       {"big", "large", "huge", "giant", "vast", "massive", "enormous", "immense", "colossal", "mighty",
        "hefty", "bulky", "towering", "jumbo", "sizable", "great"}},
      {"small", P::kAdj, 0,
       {"small", "tiny", "little", "miniature", "petite", "mini", "wee", "minute", "compact", "slight",
        "diminutive", "teeny", "puny", "dwarf", "pocket", "baby"}},
      {"happy", P::kAdj, 3,
       {"happy", "glad", "joyful", "cheerful", "merry", "jolly", "content", "pleased", "delighted",
        "elated", "jovial", "gleeful", "upbeat", "sunny", "chipper", "blissful"}},
      {"sad", P::kAdj, 2,
       {"sad", "unhappy", "gloomy", "sorrowful", "miserable", "glum", "mournful", "dejected", "downcast",
        "melancholy", "depressed", "forlorn", "blue", "somber", "tearful", "woeful"}},
      {"dog", P::kNoun, 5,
       {"dog", "puppy", "hound", "pup", "canine", "doggy", "mutt", "pooch", "cur", "mongrel", "poodle",
        "terrier", "beagle", "retriever", "spaniel", "collie"}},
      {"cat", P::kNoun, 4,
       {"cat", "kitten", "kitty", "feline", "tomcat", "moggy", "tabby", "puss", "pussycat", "siamese",
        "persian", "kit", "mouser", "alleycat", "calico", "manx"}},
      {"car", P::kNoun, 7,
       {"car", "automobile", "auto", "vehicle", "sedan", "coupe", "motorcar", "jeep", "hatchback",
        "wagon", "limo", "limousine", "cab", "taxi", "convertible", "roadster"}},
      {"boat", P::kNoun, 6,
       {"boat", "ship", "vessel", "yacht", "canoe", "kayak", "ferry", "sailboat", "barge", "raft",
        "dinghy", "schooner", "skiff", "sloop", "cutter", "steamer"}},
      {"likes", P::kVerb, 9,
       {"likes", "loves", "adores", "enjoys", "admires", "cherishes", "fancies", "treasures", "prizes",
        "favors", "relishes", "savors", "welcomes", "appreciates", "embraces", "values"}},
      {"hates", P::kVerb, 8,
       {"hates", "dislikes", "loathes", "despises", "detests", "abhors", "scorns", "resents", "disdains",
        "shuns", "rejects", "spurns", "deplores", "condemns", "abominates", "disfavors"}},
      {"helps", P::kVerb, 11,
       {"helps", "aids", "assists", "supports", "backs", "serves", "rescues", "saves", "guards",
        "protects", "shields", "defends", "nurtures", "tends", "comforts", "heals"}},
      {"hurts", P::kVerb, 10,
       {"hurts", "harms", "injures", "wounds", "attacks", "bites", "strikes", "hits", "kicks", "beats",
        "punches", "scratches", "damages", "bruises", "mauls", "slaps"}},
  };
  return classes;
}

// A sentence as the class and word chosen for each of the four slots.
struct Slots {
  std::size_t cls[4];
  std::size_t word[4];
};

class SentenceFactory {
 public:
  explicit SentenceFactory(const Lexicon& lexicon) : lexicon_(lexicon) {
    for (std::size_t s = 0; s < 4; ++s) by_slot_[s] = lexicon.classes_for(kTemplateSlots[s]);
  }

  Slots random(Rng& rng) const {
    Slots out{};
    for (std::size_t s = 0; s < 4; ++s) {
      out.cls[s] = by_slot_[s][rng.uniform_index(by_slot_[s].size())];
      out.word[s] = random_word(out.cls[s], rng);
    }
    return out;
  }

  std::size_t random_word(std::size_t cls, Rng& rng) const {
    return rng.uniform_index(lexicon_.classes()[cls].words.size());
  }

  /// A synonym of the word, different from it when the class allows.
  std::size_t other_word(std::size_t cls, std::size_t word, Rng& rng) const {
    const auto n = lexicon_.classes()[cls].words.size();
    if (n < 2) return word;
    const auto pick = rng.uniform_index(n - 1);
    return pick >= word ? pick + 1 : pick;
  }

  /// Any other class of the same part of speech; the contrast class half the time.
  std::size_t other_class(std::size_t slot, std::size_t cls, Rng& rng) const {
    if (rng.uniform() < 0.5) return lexicon_.classes()[cls].contrast;
    std::vector<std::size_t> options;
    for (auto c : by_slot_[slot])
      if (c != cls) options.push_back(c);
    return options[rng.uniform_index(options.size())];
  }

  std::string render(const Slots& s) const {
    const auto& cl = lexicon_.classes();
    return "the " + cl[s.cls[0]].words[s.word[0]] + " " + cl[s.cls[1]].words[s.word[1]] + " " +
           cl[s.cls[2]].words[s.word[2]] + " the " + cl[s.cls[3]].words[s.word[3]];
  }

  std::size_t capacity() const {
    std::size_t total = 1;
    for (std::size_t s = 0; s < 4; ++s) {
      std::size_t words = 0;
      for (auto c : by_slot_[s]) words += lexicon_.classes()[c].words.size();
      total *= words;
    }
    return total;
  }

 private:
  const Lexicon& lexicon_;
  std::vector<std::size_t> by_slot_[4];
};

std::vector<std::size_t> parse_template(const Lexicon& lexicon, const std::string& sentence) {
  const auto words = split_words(sentence);
  if (words.size() != 6 || words[0] != "the" || words[4] != "the") {
    throw std::invalid_argument("not a template sentence: '" + sentence + "'");
  }
  const std::size_t positions[4] = {1, 2, 3, 5};
  std::vector<std::size_t> classes;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto cls = lexicon.class_of(words[positions[s]]);
    if (!cls || lexicon.classes()[*cls].pos != kTemplateSlots[s]) {
      throw std::invalid_argument("word '" + words[positions[s]] + "' does not fit slot " +
                                  std::to_string(s) + " of '" + sentence + "'");
    }
    classes.push_back(*cls);
  }
  return classes;
}

}  // namespace

std::vector<StsPair> load_sts_tsv(const std::filesystem::path& path) {
  auto in = open_input(path, "STS file");
  std::vector<StsPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (next_line(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw std::runtime_error(where + ": expected 3 tab-separated fields, found " +
                               std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw std::runtime_error(where + ": empty sentence");
    double score = 0.0;
    const auto& text = fields[2];
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), score);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw std::runtime_error(where + ": score '" + text + "' is not a number");
    }
    if (!(score >= 0.0 && score <= 5.0)) {
      throw std::runtime_error(where + ": score " + text + " outside [0, 5]");
    }
    pairs.push_back({std::move(fields[0]), std::move(fields[1]), score});
  }
  return pairs;
}

void write_sts_tsv(const std::filesystem::path& path, std::span<const StsPair> pairs,
                   const std::string& header) {
  auto out = open_output(path);
  if (!header.empty()) out << header;
  char buf[32];
  for (const auto& p : pairs) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, p.gold);
    out << p.s1 << '\t' << p.s2 << '\t' << std::string(buf, end) << '\n';
  }
}

std::vector<Example> load_nli_triples(const std::filesystem::path& path) {
  auto in = open_input(path, "NLI triples");
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (next_line(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected premise, entailment and contradiction");
    }
    out.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2])});
  }
  return out;
}

void write_nli_triples(const std::filesystem::path& path, std::span<const Example> triples) {
  auto out = open_output(path);
  for (const auto& t : triples) {
    if (!t.supervised()) throw std::invalid_argument("write_nli_triples: example without hypotheses");
    out << t.anchor << '\t' << *t.positive << '\t' << *t.negative << '\n';
  }
}

std::vector<Example> load_corpus(const std::filesystem::path& path) {
  auto in = open_input(path, "corpus");
  std::vector<Example> out;
  std::string line;
  while (next_line(in, line)) out.push_back({line, std::nullopt, std::nullopt});
  return out;
}

std::size_t Batch::real_length(std::size_t row) const {
  const auto& m = mask[row];
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

Batch Batch::pack(std::vector<std::vector<TokenId>> rows, bool pad) {
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.size());
  Batch b;
  for (auto& r : rows) {
    std::vector<std::uint8_t> m(r.size(), 1);
    if (pad) {
      m.resize(width, 0);
      r.resize(width, Vocab::kPad);
    }
    b.mask.push_back(std::move(m));
    b.ids.push_back(std::move(r));
  }
  return b;
}

BatchStream::BatchStream(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : size_(dataset_size), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
}

std::vector<std::vector<std::size_t>> BatchStream::epoch(std::uint64_t epoch_index) const {
  std::vector<std::size_t> order(size_);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_) {
    Rng rng(derive_seed(seed_, epoch_index));
    for (std::size_t i = size_; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < size_; start += batch_size_) {
    const auto end = std::min(size_, start + batch_size_);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Lexicon Lexicon::builtin(std::size_t words_per_class) {
  if (words_per_class == 0 || words_per_class > 16) {
    throw std::invalid_argument("words_per_class must lie in [1, 16]");
  }
  Lexicon lex;
  lex.classes_ = builtin_classes();
  for (auto& c : lex.classes_) c.words.resize(words_per_class);
  return lex;
}

std::vector<std::string> Lexicon::vocabulary() const {
  std::vector<std::string> words = {"the"};
  for (const auto& c : classes_) words.insert(words.end(), c.words.begin(), c.words.end());
  return words;
}

std::optional<std::size_t> Lexicon::class_of(const std::string& word) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    const auto& w = classes_[i].words;
    if (std::find(w.begin(), w.end(), word) != w.end()) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> Lexicon::classes_for(PartOfSpeech pos) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < classes_.size(); ++i)
    if (classes_[i].pos == pos) out.push_back(i);
  return out;
}

double gold_for_changes(std::size_t changed_slots) {
  static constexpr double kGold[] = {5.0, 2.0, 1.0, 0.5, 0.0};
  return kGold[std::min<std::size_t>(changed_slots, 4)];
}

double score_pair(const Lexicon& lexicon, const std::string& s1, const std::string& s2) {
  const auto a = parse_template(lexicon, s1);
  const auto b = parse_template(lexicon, s2);
  std::size_t changed = 0;
  for (std::size_t s = 0; s < 4; ++s) changed += a[s] != b[s];
  return gold_for_changes(changed);
}

std::string synthetic_sts_header() {
  return "# synthetic STS pairs: sentence1 TAB sentence2 TAB gold\n"
         "# template: the ADJ NOUN VERB the NOUN; every content word belongs to a synonym class\n"
         "# gold by number of slots whose class differs: 0 -> 5.0, 1 -> 2.0, 2 -> 1.0, 3 -> 0.5, 4 -> 0.0\n"
         "# unchanged slots may still swap in a synonym\n";
}

void SyntheticData::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  vocab.save(dir / "vocab.txt");
  {
    auto out = open_output(dir / "corpus.txt");
    for (const auto& s : corpus) out << s << '\n';
  }
  write_nli_triples(dir / "nli.tsv", triples);
  write_sts_tsv(dir / "sts.tsv", sts, synthetic_sts_header());
}

SyntheticData generate_synthetic(const SyntheticConfig& config) {
  if (config.num_sentences == 0) throw std::invalid_argument("synthetic corpus size must be >= 1");
  SyntheticData data{Lexicon::builtin(config.words_per_class), Vocab(), {}, {}, {}};
  data.vocab = Vocab(data.lexicon.vocabulary());
  const SentenceFactory factory(data.lexicon);
  if (config.num_sentences > factory.capacity()) {
    throw std::invalid_argument("synthetic corpus of " + std::to_string(config.num_sentences) +
                                " sentences exceeds template capacity " +
                                std::to_string(factory.capacity()));
  }

  Rng corpus_rng(derive_seed(config.seed, 0));
  std::vector<Slots> corpus_slots;
  std::unordered_set<std::string> seen;
  while (data.corpus.size() < config.num_sentences) {
    const Slots s = factory.random(corpus_rng);
    auto text = factory.render(s);
    if (!seen.insert(text).second) continue;
    data.corpus.push_back(std::move(text));
    corpus_slots.push_back(s);
  }

  Rng triple_rng(derive_seed(config.seed, 1));
  for (std::size_t i = 0; i < config.num_triples; ++i) {
    const Slots& premise = corpus_slots[i % corpus_slots.size()];
    Slots positive = premise;
    for (std::size_t s = 0; s < 4; ++s)
      positive.word[s] = factory.other_word(premise.cls[s], premise.word[s], triple_rng);
    Slots negative = premise;
    const auto slot = triple_rng.uniform_index(4);
    negative.cls[slot] = data.lexicon.classes()[premise.cls[slot]].contrast;
    negative.word[slot] = factory.random_word(negative.cls[slot], triple_rng);
    data.triples.push_back({factory.render(premise), factory.render(positive), factory.render(negative)});
  }

  Rng sts_rng(derive_seed(config.seed, 2));
  for (std::size_t i = 0; i < config.num_sts_pairs; ++i) {
    const Slots first = factory.random(sts_rng);
    const auto changes = static_cast<std::size_t>(sts_rng.uniform_index(5));
    std::size_t order[4] = {0, 1, 2, 3};
    for (std::size_t k = 4; k > 1; --k) std::swap(order[k - 1], order[sts_rng.uniform_index(k)]);
    Slots second = first;
    for (std::size_t k = 0; k < 4; ++k) {
      const auto s = order[k];
      if (k < changes) second.cls[s] = factory.other_class(s, first.cls[s], sts_rng);
      second.word[s] = factory.random_word(second.cls[s], sts_rng);
    }
    data.sts.push_back({factory.render(first), factory.render(second), gold_for_changes(changes)});
  }
  return data;
}

}  // namespace d2cse
