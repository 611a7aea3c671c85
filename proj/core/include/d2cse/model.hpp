#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "d2cse/encoder.hpp"
#include "d2cse/tape.hpp"

namespace d2cse {

/// Framework variants of the ablation study.
///   a: prompts on the sentence encoder only, frozen discriminator, conditioned
///   b: as (a) but the discriminator is a trainable copy of the encoder
///   c: one prompt bank shared by encoder and discriminator, no conditioning
///   d: shared prompt bank with conditioning (the full method)
enum class Variant { kA, kB, kC, kD };

struct VariantTraits {
  bool shared_prompts;
  bool conditioning;
  bool trainable_discriminator;
};

VariantTraits traits(Variant variant);
char variant_letter(Variant variant);
Variant parse_variant(const std::string& text);

/// Deep prompts v (layers x b x d) and the optional [CLS] prompt.
struct PromptBank {
  Tensor deep;
  std::optional<Tensor> cls;

  std::size_t num_layers() const { return deep.shape()[0]; }
  std::size_t length() const { return deep.shape()[1]; }
  std::size_t dim() const { return deep.shape()[2]; }
  PromptInputs inputs() const { return {&deep, cls ? &*cls : nullptr}; }
};

/// v ~ U(-0.5/sqrt(d), 0.5/sqrt(d)); the [CLS] prompt starts as a copy of
/// the encoder's [CLS] embedding row.
PromptBank init_prompts(const EncoderParams& encoder, std::size_t prompt_len, bool cls_prompt,
                        std::uint64_t seed);

/// Training-time sentence head: dense -> batch norm -> relu -> dense.
struct Pooler {
  Tensor w1, b1;
  BatchNormState bn;
  Tensor w2, b2;

  Tensor forward(Tape& tape, const Tensor& x, Mode mode);
};

/// Token-level logit that the token is original (not replaced).
struct RtdHead {
  Tensor w;  // d x 1
  Tensor b;  // 1

  Tensor logits(Tape& tape, const Tensor& states) const;
};

struct TrainableHeads {
  Pooler pooler;
  RtdHead rtd;

  static TrainableHeads init(std::size_t dim, std::uint64_t seed);
};

/// Closed-form trainable parameter count:
/// a*b*c + [cls]*d + 2(d^2 + d) + 2d + (d + 1).
std::size_t prompt_parameter_formula(std::size_t layers, std::size_t prompt_len, std::size_t dim,
                                     bool cls_prompt);

/// The complete set of weights taking part in one training run.
struct Model {
  EncoderParams encoder;  // frozen
  PromptBank prompts;
  TrainableHeads heads;
  Variant variant = Variant::kD;
  std::optional<EncoderParams> discriminator;  // variant (b) only, trainable

  static Model create(const EncoderConfig& config, std::uint64_t encoder_seed,
                      std::size_t prompt_len, bool cls_prompt, Variant variant,
                      std::uint64_t init_seed);

  /// Weights used by the replaced-token discriminator pass.
  const EncoderParams& discriminator_params() const {
    return discriminator ? *discriminator : encoder;
  }
  /// Prompts fed to the discriminator pass (none unless shared).
  PromptInputs discriminator_prompts() const;

  /// Exactly the tensors the optimizer updates, in a stable order.
  std::vector<NamedTensor> trainable() const;
  std::size_t trainable_count() const;
  std::size_t frozen_count() const { return encoder.parameter_count(); }

  /// Deep copy of every trainable tensor and head buffer; the frozen
  /// encoder is shared.
  Model clone_trainable() const;
  /// Rounds every trainable value and batch-norm statistic to 32-bit
  /// precision, matching what a checkpoint stores.
  void round_to_f32();
};

}  // namespace d2cse
