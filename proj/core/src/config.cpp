#include "d2cse/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace d2cse {
namespace {

using Json = nlohmann::ordered_json;

const char* sampler_name(SamplerKind kind) { return kind == SamplerKind::kUniform ? "uniform" : "unigram"; }

SamplerKind parse_sampler(const std::string& s) {
  if (s == "unigram") return SamplerKind::kUnigram;
  if (s == "uniform") return SamplerKind::kUniform;
  throw std::invalid_argument("unknown sampler '" + s + "' (expected unigram or uniform)");
}

Json to_tree(const TrainConfig& c) {
  Json j;
  j["encoder"] = {{"num_layers", c.encoder.num_layers},   {"hidden_dim", c.encoder.hidden_dim},
                  {"num_heads", c.encoder.num_heads},     {"ffn_dim", c.encoder.ffn_dim},
                  {"vocab_size", c.encoder.vocab_size},   {"max_seq_len", c.encoder.max_seq_len},
                  {"dropout_rate", c.encoder.dropout_rate}, {"layer_norm_eps", c.encoder.layer_norm_eps},
                  {"seed", c.encoder_seed}};
  j["prompt"] = {{"length", c.prompt_len}, {"cls", c.cls_prompt}};
  j["framework"] = {{"shared_prompts", c.shared_prompts}, {"conditioning", c.conditioning},
                    {"trainable_discriminator", c.trainable_discriminator}};
  j["objective"] = {{"temperature", c.temperature}, {"lambda", c.lambda}, {"supervised", c.supervised}};
  j["corruption"] = {{"masking_ratio", c.masking_ratio}, {"sampler", sampler_name(c.sampler)}};
  j["optim"] = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
                {"max_steps", c.max_steps}, {"seed", c.seed}};
  j["paths"] = {{"vocab", c.vocab_path}, {"corpus", c.corpus_path}, {"nli", c.nli_path},
                {"sts", c.sts_path},     {"checkpoint_dir", c.checkpoint_dir}, {"loss_log", c.loss_log}};
  return j;
}

template <typename T>
void read(const Json& j, const char* section, const char* key, T& out) {
  if (!j.contains(section)) return;
  const auto& s = j.at(section);
  if (!s.is_object()) throw std::invalid_argument(std::string("config section '") + section + "' must be a map");
  if (!s.contains(key)) return;
  try {
    out = s.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(std::string("config key '") + section + "." + key + "' has the wrong type");
  }
}

TrainConfig from_tree(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a map");
  const Json defaults = to_tree(TrainConfig{});
  for (const auto& [section, body] : j.items()) {
    if (!defaults.contains(section)) throw std::invalid_argument("unknown config section '" + section + "'");
    if (!body.is_object()) continue;
    for (const auto& [key, _] : body.items()) {
      if (!defaults[section].contains(key))
        throw std::invalid_argument("unknown config key '" + section + "." + key + "'");
    }
  }
  TrainConfig c;
  read(j, "encoder", "num_layers", c.encoder.num_layers);
  read(j, "encoder", "hidden_dim", c.encoder.hidden_dim);
  read(j, "encoder", "num_heads", c.encoder.num_heads);
  read(j, "encoder", "ffn_dim", c.encoder.ffn_dim);
  read(j, "encoder", "vocab_size", c.encoder.vocab_size);
  read(j, "encoder", "max_seq_len", c.encoder.max_seq_len);
  read(j, "encoder", "dropout_rate", c.encoder.dropout_rate);
  read(j, "encoder", "layer_norm_eps", c.encoder.layer_norm_eps);
  read(j, "encoder", "seed", c.encoder_seed);
  read(j, "prompt", "length", c.prompt_len);
  read(j, "prompt", "cls", c.cls_prompt);
  read(j, "framework", "shared_prompts", c.shared_prompts);
  read(j, "framework", "conditioning", c.conditioning);
  read(j, "framework", "trainable_discriminator", c.trainable_discriminator);
  read(j, "objective", "temperature", c.temperature);
  read(j, "objective", "lambda", c.lambda);
  read(j, "objective", "supervised", c.supervised);
  read(j, "corruption", "masking_ratio", c.masking_ratio);
  std::string sampler = sampler_name(c.sampler);
  read(j, "corruption", "sampler", sampler);
  c.sampler = parse_sampler(sampler);
  read(j, "optim", "learning_rate", c.learning_rate);
  read(j, "optim", "batch_size", c.batch_size);
  read(j, "optim", "epochs", c.epochs);
  read(j, "optim", "max_steps", c.max_steps);
  read(j, "optim", "seed", c.seed);
  read(j, "paths", "vocab", c.vocab_path);
  read(j, "paths", "corpus", c.corpus_path);
  read(j, "paths", "nli", c.nli_path);
  read(j, "paths", "sts", c.sts_path);
  read(j, "paths", "checkpoint_dir", c.checkpoint_dir);
  read(j, "paths", "loss_log", c.loss_log);
  return c;
}

Json parse_leaf(const Json& current, const std::string& key, const std::string& text) {
  auto fail = [&]() -> Json {
    throw std::invalid_argument("value '" + text + "' does not fit config key '" + key + "'");
  };
  try {
    std::size_t used = 0;
    if (current.is_boolean()) {
      if (text == "true" || text == "1" || text == "on") return true;
      if (text == "false" || text == "0" || text == "off") return false;
      return fail();
    }
    if (current.is_number_unsigned()) {
      if (!text.empty() && text[0] == '-') return fail();
      const auto v = std::stoull(text, &used);
      return used == text.size() ? Json(v) : fail();
    }
    if (current.is_number()) {
      const auto v = std::stod(text, &used);
      return used == text.size() ? Json(v) : fail();
    }
  } catch (const std::logic_error&) {
    return fail();
  }
  return text;
}

}  // namespace

Variant TrainConfig::variant() const {
  for (Variant v : {Variant::kA, Variant::kB, Variant::kC, Variant::kD}) {
    const auto t = traits(v);
    if (t.shared_prompts == shared_prompts && t.conditioning == conditioning &&
        t.trainable_discriminator == trainable_discriminator)
      return v;
  }
  throw std::invalid_argument("framework switches (shared_prompts=" + std::to_string(shared_prompts) +
                              ", conditioning=" + std::to_string(conditioning) + ", trainable_discriminator=" +
                              std::to_string(trainable_discriminator) + ") name no variant");
}

void TrainConfig::set_variant(Variant v) {
  const auto t = traits(v);
  shared_prompts = t.shared_prompts;
  conditioning = t.conditioning;
  trainable_discriminator = t.trainable_discriminator;
}

void TrainConfig::validate() const {
  EncoderConfig shape = encoder;
  if (shape.vocab_size == 0) shape.vocab_size = Vocab::kNumSpecial + 2;
  shape.validate();
  (void)variant();
  const auto b = effective_prompt_len();
  if (b + 3 > encoder.max_seq_len) {
    throw std::invalid_argument("prompt length " + std::to_string(b) + " leaves no room for tokens within " +
                                std::to_string(encoder.max_seq_len) + " positions");
  }
  objective().validate();
  if (!(masking_ratio >= 0.0 && masking_ratio < 1.0)) throw std::invalid_argument("masking_ratio must be in [0, 1)");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
}

std::string TrainConfig::to_json() const { return to_tree(*this).dump(2) + "\n"; }

TrainConfig TrainConfig::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("config does not parse: ") + e.what());
  }
  return from_tree(j);
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void TrainConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << to_json();
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  Json tree = to_tree(*this);
  if (dot == std::string::npos || !tree.contains(key.substr(0, dot)) ||
      !tree[key.substr(0, dot)].contains(key.substr(dot + 1))) {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
  auto& leaf = tree[key.substr(0, dot)][key.substr(dot + 1)];
  leaf = parse_leaf(leaf, key, value);
  *this = from_tree(tree);
}

std::vector<std::string> TrainConfig::keys() {
  std::vector<std::string> out;
  const Json tree = to_tree(TrainConfig{});
  for (const auto& [section, body] : tree.items()) {
    for (const auto& [key, _] : body.items()) out.push_back(section + "." + key);
  }
  return out;
}

std::vector<std::string> config_diff(const TrainConfig& a, const TrainConfig& b) {
  const Json ja = to_tree(a), jb = to_tree(b);
  std::vector<std::string> out;
  for (const auto& [section, body] : ja.items()) {
    for (const auto& [key, value] : body.items()) {
      if (value != jb[section][key]) out.push_back(section + "." + key);
    }
  }
  return out;
}

}  // namespace d2cse
