#include "d2cse/model.hpp"

#include <cmath>
#include <stdexcept>

namespace d2cse {
namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = (2.0 * rng.uniform() - 1.0) * bound;
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor clone_param(const Tensor& t) {
  Tensor c = t.clone();
  c.set_requires_grad(t.requires_grad());
  return c;
}

void round_values(std::span<double> values) {
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

VariantTraits traits(Variant variant) {
  switch (variant) {
    case Variant::kA: return {false, true, false};
    case Variant::kB: return {false, true, true};
    case Variant::kC: return {true, false, false};
    case Variant::kD: return {true, true, false};
  }
  throw std::invalid_argument("unknown variant");
}

char variant_letter(Variant variant) {
  switch (variant) {
    case Variant::kA: return 'a';
    case Variant::kB: return 'b';
    case Variant::kC: return 'c';
    case Variant::kD: return 'd';
  }
  return '?';
}

Variant parse_variant(const std::string& text) {
  if (text == "a") return Variant::kA;
  if (text == "b") return Variant::kB;
  if (text == "c") return Variant::kC;
  if (text == "d") return Variant::kD;
  throw std::invalid_argument("variant must be one of a, b, c, d; got '" + text + "'");
}

PromptBank init_prompts(const EncoderParams& encoder, std::size_t prompt_len, bool cls_prompt,
                        std::uint64_t seed) {
  if (prompt_len == 0) throw std::invalid_argument("init_prompts: prompt length must be positive");
  const auto& cfg = encoder.config;
  Rng rng(seed);
  const double bound = 0.5 / std::sqrt(static_cast<double>(cfg.hidden_dim));
  PromptBank bank;
  bank.deep = uniform_tensor({cfg.num_layers, prompt_len, cfg.hidden_dim}, bound, rng, true);
  if (cls_prompt) {
    const auto row = encoder.token_embedding.data().subspan(
        static_cast<std::size_t>(Vocab::kCls) * cfg.hidden_dim, cfg.hidden_dim);
    bank.cls = Tensor({cfg.hidden_dim}, std::vector<double>(row.begin(), row.end()), true);
  }
  return bank;
}

Tensor Pooler::forward(Tape& tape, const Tensor& x, Mode mode) {
  Tensor h = tape.add_row(tape.matmul(x, w1), b1);
  h = tape.relu(tape.batch_norm(h, bn, mode));
  return tape.add_row(tape.matmul(h, w2), b2);
}

Tensor RtdHead::logits(Tape& tape, const Tensor& states) const {
  return tape.add_row(tape.matmul(states, w), b);
}

TrainableHeads TrainableHeads::init(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  TrainableHeads heads;
  heads.pooler.w1 = uniform_tensor({dim, dim}, bound, rng, true);
  heads.pooler.b1 = Tensor::zeros({dim}, true);
  heads.pooler.bn = BatchNormState::create(dim, true);
  heads.pooler.w2 = uniform_tensor({dim, dim}, bound, rng, true);
  heads.pooler.b2 = Tensor::zeros({dim}, true);
  heads.rtd.w = uniform_tensor({dim, 1}, bound, rng, true);
  heads.rtd.b = Tensor::zeros({1}, true);
  return heads;
}

std::size_t prompt_parameter_formula(std::size_t layers, std::size_t prompt_len, std::size_t dim,
                                     bool cls_prompt) {
  return layers * prompt_len * dim + (cls_prompt ? dim : 0) + 2 * (dim * dim + dim) + 2 * dim +
         (dim + 1);
}

Model Model::create(const EncoderConfig& config, std::uint64_t encoder_seed, std::size_t prompt_len,
                    bool cls_prompt, Variant variant, std::uint64_t init_seed) {
  Model m;
  m.encoder = EncoderParams::init(config, encoder_seed);
  m.prompts = init_prompts(m.encoder, prompt_len, cls_prompt, derive_seed(init_seed, 1));
  m.heads = TrainableHeads::init(config.hidden_dim, derive_seed(init_seed, 2));
  m.variant = variant;
  if (traits(variant).trainable_discriminator) {
    m.discriminator = m.encoder.clone();
    m.discriminator->set_requires_grad(true);
  }
  return m;
}

PromptInputs Model::discriminator_prompts() const {
  if (traits(variant).shared_prompts) return prompts.inputs();
  return {};
}

std::vector<NamedTensor> Model::trainable() const {
  std::vector<NamedTensor> out = {{"prompts.deep", prompts.deep}};
  if (prompts.cls) out.emplace_back("prompts.cls", *prompts.cls);
  out.insert(out.end(), {
                            {"pooler.w1", heads.pooler.w1},
                            {"pooler.b1", heads.pooler.b1},
                            {"pooler.bn.gamma", heads.pooler.bn.gamma},
                            {"pooler.bn.beta", heads.pooler.bn.beta},
                            {"pooler.w2", heads.pooler.w2},
                            {"pooler.b2", heads.pooler.b2},
                            {"rtd.w", heads.rtd.w},
                            {"rtd.b", heads.rtd.b},
                        });
  if (discriminator) {
    for (auto& [name, t] : discriminator->named()) out.emplace_back("discriminator." + name, t);
  }
  return out;
}

std::size_t Model::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : trainable()) n += t.numel();
  return n;
}

Model Model::clone_trainable() const {
  Model c;
  c.encoder = encoder;
  c.variant = variant;
  c.prompts.deep = clone_param(prompts.deep);
  if (prompts.cls) c.prompts.cls = clone_param(*prompts.cls);
  c.heads = heads;
  c.heads.pooler.w1 = clone_param(heads.pooler.w1);
  c.heads.pooler.b1 = clone_param(heads.pooler.b1);
  c.heads.pooler.bn.gamma = clone_param(heads.pooler.bn.gamma);
  c.heads.pooler.bn.beta = clone_param(heads.pooler.bn.beta);
  c.heads.pooler.w2 = clone_param(heads.pooler.w2);
  c.heads.pooler.b2 = clone_param(heads.pooler.b2);
  c.heads.rtd.w = clone_param(heads.rtd.w);
  c.heads.rtd.b = clone_param(heads.rtd.b);
  if (discriminator) {
    c.discriminator = discriminator->clone();
    c.discriminator->set_requires_grad(true);
  }
  return c;
}

void Model::round_to_f32() {
  for (auto& [name, t] : trainable()) {
    Tensor handle = t;
    round_values(handle.data());
  }
  round_values(heads.pooler.bn.running_mean);
  round_values(heads.pooler.bn.running_var);
}

}  // namespace d2cse
