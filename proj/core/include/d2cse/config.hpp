#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "d2cse/corruption.hpp"
#include "d2cse/encoder.hpp"
#include "d2cse/model.hpp"
#include "d2cse/objectives.hpp"

namespace d2cse {

/// Everything one training run depends on. Serialized as nested JSON; each
/// leaf is addressable by its dotted path, e.g. "encoder.hidden_dim".
struct TrainConfig {
  EncoderConfig encoder{.vocab_size = 0};  // vocab_size 0 = taken from the vocabulary
  std::uint64_t encoder_seed = 7;  // frozen weights are regenerated from this
  std::size_t prompt_len = 0;      // 0 picks 16 (unsupervised) or 12 (supervised)
  bool cls_prompt = true;
  // Framework switches; together they must name one of the variants a-d.
  bool shared_prompts = true;
  bool conditioning = true;
  bool trainable_discriminator = false;
  double temperature = 0.05;
  double lambda = 0.005;
  double masking_ratio = 0.3;
  SamplerKind sampler = SamplerKind::kUnigram;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 2;
  std::size_t max_steps = 0;  // 0 = no cap
  std::uint64_t seed = 1;
  bool supervised = false;

  std::string vocab_path;
  std::string corpus_path;  // one sentence per line (unsupervised)
  std::string nli_path;     // premise, entailment, contradiction (supervised)
  std::string sts_path;     // evaluation pairs
  std::string checkpoint_dir;
  std::string loss_log;

  std::size_t effective_prompt_len() const { return prompt_len ? prompt_len : (supervised ? 12 : 16); }
  /// Throws std::invalid_argument when the switches name no variant.
  Variant variant() const;
  void set_variant(Variant v);
  ObjectiveConfig objective() const { return {temperature, lambda, supervised}; }

  /// Field ranges and cross-field consistency. Throws std::invalid_argument.
  void validate() const;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Sets one leaf from its text form; unknown keys and values that do
  /// not parse as the leaf's type throw std::invalid_argument.
  void set(const std::string& key, const std::string& value);
  /// Every dotted key in serialization order.
  static std::vector<std::string> keys();

  bool operator==(const TrainConfig&) const = default;
};

/// Dotted keys whose values differ between two configs.
std::vector<std::string> config_diff(const TrainConfig& a, const TrainConfig& b);

}  // namespace d2cse
