#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "d2cse/rng.hpp"
#include "d2cse/tape.hpp"
#include "d2cse/tensor.hpp"
#include "d2cse/vocab.hpp"

namespace d2cse {

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 16;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 32;
  std::size_t vocab_size = 50;
  std::size_t max_seq_len = 32;
  double dropout_rate = 0.1;
  double layer_norm_eps = 1e-5;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct EncoderLayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gain, ln2_bias;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Transformer weights and the embedding matrix. In the sentence encoder
/// these are frozen (requires_grad == false); a trainable discriminator
/// copy flips them on.
struct EncoderParams {
  EncoderConfig config;
  Tensor token_embedding;     // vocab_size x d
  Tensor position_embedding;  // max_seq_len x d
  Tensor embedding_ln_gain, embedding_ln_bias;
  std::vector<EncoderLayerParams> layers;

  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed);

  /// Stable names in a fixed order, e.g. "layer1.attn.wq".
  std::vector<NamedTensor> named() const;
  std::size_t parameter_count() const;
  EncoderParams clone() const;
  void set_requires_grad(bool on);
};

/// SHA-256 (hex) over every tensor's name, shape and raw 64-bit values.
std::string checksum(const EncoderParams& params);

/// True iff every weight is bit-identical. Throws DimensionError when the
/// two sets do not have the same layout.
bool freeze_check(const EncoderParams& before, const EncoderParams& after);

/// Trainable inputs injected into the encoder. `deep` is [layers x b x d];
/// `cls`, when set, replaces the [CLS] embedding row.
struct PromptInputs {
  const Tensor* deep = nullptr;
  const Tensor* cls = nullptr;

  std::size_t length() const { return deep ? deep->shape()[1] : 0; }
};

struct EncodeOptions {
  Mode mode = Mode::kEval;
  Rng* rng = nullptr;  // required in train mode when dropout_rate > 0
  /// Added to every token-slot embedding (not prompt slots) before layer 0.
  const Tensor* condition = nullptr;
  /// Per-token validity (0 = padding). Empty means all valid.
  std::span<const std::uint8_t> valid = {};
};

struct EncoderOutput {
  std::size_t prompt_len = 0;
  Tensor layer_input;                // layer-0 input after prompt injection
  std::vector<Tensor> layer_states;  // output of each layer, (b + L) x d
  std::vector<Tensor> attention;     // [layer * heads + head], (b + L) x (b + L)

  const Tensor& final_states() const { return layer_states.back(); }
};

/// Replaces prompt slots 0..b-1 of `hidden` with the layer's prompt block
/// `deep[layer]`. With layer == 0 and `hidden` holding only token rows the
/// block is prepended instead.
Tensor inject_prompts(Tape& tape, const Tensor& deep, std::size_t layer, const Tensor& hidden,
                      bool prepend);

EncoderOutput encode(Tape& tape, const EncoderParams& params, std::span<const TokenId> ids,
                     const PromptInputs& prompts, const EncodeOptions& options);

/// The [CLS]-slot final hidden state (row b of the final states), 1 x d.
Tensor sentence_vector(Tape& tape, const EncoderOutput& output);

}  // namespace d2cse
