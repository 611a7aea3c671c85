#include "d2cse/encoder.hpp"

#include <cmath>
#include <algorithm>
#include <memory>
#include <stdexcept>

#include <openssl/evp.h>

namespace d2cse {
namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  const auto n = shape_numel(shape);
  std::vector<double> values(n);
  for (auto& v : values) v = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(values));
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return tape.add_row(tape.matmul(x, w), b);
}

Tensor maybe_dropout(Tape& tape, const Tensor& x, const EncodeOptions& options, double rate) {
  if (options.mode != Mode::kTrain || rate == 0.0) return x;
  if (!options.rng) throw std::invalid_argument("encode: train mode with dropout needs an rng");
  return tape.dropout(x, rate, *options.rng);
}

}  // namespace

void EncoderConfig::validate() const {
  if (num_layers == 0 || hidden_dim == 0 || num_heads == 0 || ffn_dim == 0) {
    throw std::invalid_argument("encoder config: layers, hidden_dim, heads and ffn_dim must be positive");
  }
  if (hidden_dim % num_heads != 0) {
    throw std::invalid_argument("encoder config: hidden_dim " + std::to_string(hidden_dim) +
                                " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (vocab_size <= Vocab::kNumSpecial) throw std::invalid_argument("encoder config: vocab too small");
  if (max_seq_len < 3) throw std::invalid_argument("encoder config: max_seq_len must be >= 3");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("encoder config: dropout_rate must lie in [0, 1)");
  }
}

EncoderParams EncoderParams::init(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.hidden_dim, f = config.ffn_dim;
  const double wd = 1.0 / std::sqrt(static_cast<double>(d));
  const double wf = 1.0 / std::sqrt(static_cast<double>(f));
  EncoderParams p;
  p.config = config;
  p.token_embedding = normal_tensor({config.vocab_size, d}, 1.0, rng);
  p.position_embedding = normal_tensor({config.max_seq_len, d}, 0.5, rng);
  p.embedding_ln_gain = Tensor::full({d}, 1.0);
  p.embedding_ln_bias = Tensor::zeros({d});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    EncoderLayerParams layer;
    layer.wq = normal_tensor({d, d}, wd, rng);
    layer.bq = Tensor::zeros({d});
    layer.wk = normal_tensor({d, d}, wd, rng);
    layer.bk = Tensor::zeros({d});
    layer.wv = normal_tensor({d, d}, wd, rng);
    layer.bv = Tensor::zeros({d});
    layer.wo = normal_tensor({d, d}, wd, rng);
    layer.bo = Tensor::zeros({d});
    layer.ln1_gain = Tensor::full({d}, 1.0);
    layer.ln1_bias = Tensor::zeros({d});
    layer.w1 = normal_tensor({d, f}, wd, rng);
    layer.b1 = Tensor::zeros({f});
    layer.w2 = normal_tensor({f, d}, wf, rng);
    layer.b2 = Tensor::zeros({d});
    layer.ln2_gain = Tensor::full({d}, 1.0);
    layer.ln2_bias = Tensor::zeros({d});
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::vector<NamedTensor> EncoderParams::named() const {
  std::vector<NamedTensor> out = {
      {"embeddings.token", token_embedding},
      {"embeddings.position", position_embedding},
      {"embeddings.ln.gain", embedding_ln_gain},
      {"embeddings.ln.bias", embedding_ln_bias},
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.insert(out.end(), {
                              {p + "attn.wq", L.wq},     {p + "attn.bq", L.bq},
                              {p + "attn.wk", L.wk},     {p + "attn.bk", L.bk},
                              {p + "attn.wv", L.wv},     {p + "attn.bv", L.bv},
                              {p + "attn.wo", L.wo},     {p + "attn.bo", L.bo},
                              {p + "ln1.gain", L.ln1_gain}, {p + "ln1.bias", L.ln1_bias},
                              {p + "ffn.w1", L.w1},      {p + "ffn.b1", L.b1},
                              {p + "ffn.w2", L.w2},      {p + "ffn.b2", L.b2},
                              {p + "ln2.gain", L.ln2_gain}, {p + "ln2.bias", L.ln2_bias},
                          });
  }
  return out;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t.numel();
  return n;
}

EncoderParams EncoderParams::clone() const {
  EncoderParams c;
  c.config = config;
  c.token_embedding = token_embedding.clone();
  c.position_embedding = position_embedding.clone();
  c.embedding_ln_gain = embedding_ln_gain.clone();
  c.embedding_ln_bias = embedding_ln_bias.clone();
  for (const auto& L : layers) {
    c.layers.push_back({L.wq.clone(), L.bq.clone(), L.wk.clone(), L.bk.clone(), L.wv.clone(),
                        L.bv.clone(), L.wo.clone(), L.bo.clone(), L.ln1_gain.clone(),
                        L.ln1_bias.clone(), L.w1.clone(), L.b1.clone(), L.w2.clone(), L.b2.clone(),
                        L.ln2_gain.clone(), L.ln2_bias.clone()});
  }
  return c;
}

void EncoderParams::set_requires_grad(bool on) {
  for (auto& [name, t] : named()) {
    Tensor handle = t;
    handle.set_requires_grad(on);
  }
}

std::string checksum(const EncoderParams& params) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256 init failed");
  }
  for (const auto& [name, t] : params.named()) {
    EVP_DigestUpdate(ctx, name.data(), name.size() + 1);
    for (auto extent : t.shape()) {
      const std::uint64_t e = extent;
      EVP_DigestUpdate(ctx, &e, sizeof e);
    }
    EVP_DigestUpdate(ctx, t.data().data(), t.numel() * sizeof(double));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

bool freeze_check(const EncoderParams& before, const EncoderParams& after) {
  const auto a = before.named();
  const auto b = after.named();
  if (a.size() != b.size()) throw DimensionError("freeze_check: different layer counts");
  bool identical = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape()) {
      throw DimensionError("freeze_check: layout mismatch at " + a[i].first + " " +
                           shape_to_string(a[i].second.shape()) + " vs " + b[i].first + " " +
                           shape_to_string(b[i].second.shape()));
    }
    identical = identical && bit_equal(a[i].second, b[i].second);
  }
  return identical;
}

Tensor inject_prompts(Tape& tape, const Tensor& deep, std::size_t layer, const Tensor& hidden,
                      bool prepend) {
  if (deep.shape().size() != 3) {
    throw DimensionError("inject_prompts: prompts must be [layers x b x d], got " +
                         shape_to_string(deep.shape()));
  }
  const std::size_t layers = deep.shape()[0], b = deep.shape()[1];
  if (layer >= layers) {
    throw std::out_of_range("inject_prompts: layer " + std::to_string(layer) + " outside [0, " +
                            std::to_string(layers) + ")");
  }
  if (deep.cols() != hidden.cols()) {
    throw DimensionError("inject_prompts: prompt width " + std::to_string(deep.cols()) +
                         " vs hidden width " + std::to_string(hidden.cols()));
  }
  const Tensor block = tape.slice_rows(deep, layer * b, b);
  if (prepend) {
    const Tensor parts[] = {block, hidden};
    return tape.concat_rows(parts);
  }
  if (hidden.rows() < b) throw DimensionError("inject_prompts: fewer rows than prompt slots");
  const Tensor parts[] = {block, tape.slice_rows(hidden, b, hidden.rows() - b)};
  return tape.concat_rows(parts);
}

EncoderOutput encode(Tape& tape, const EncoderParams& params, std::span<const TokenId> ids,
                     const PromptInputs& prompts, const EncodeOptions& options) {
  const auto& cfg = params.config;
  const std::size_t d = cfg.hidden_dim;
  const std::size_t b = prompts.length();
  const std::size_t L = ids.size();
  if (L == 0) throw std::invalid_argument("encode: empty id sequence");
  if (L + b > cfg.max_seq_len) {
    throw std::length_error("encode: " + std::to_string(L) + " tokens + " + std::to_string(b) +
                            " prompt slots exceed max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  if (!options.valid.empty() && options.valid.size() != L) {
    throw DimensionError("encode: validity mask length differs from id count");
  }
  if (prompts.deep && (prompts.deep->shape()[0] != cfg.num_layers || prompts.deep->cols() != d)) {
    throw DimensionError("encode: prompt bank " + shape_to_string(prompts.deep->shape()) +
                         " does not fit encoder with " + std::to_string(cfg.num_layers) +
                         " layers of width " + std::to_string(d));
  }

  // Token embeddings, with the [CLS] slot optionally swapped for the prompt.
  Tensor tokens = tape.gather_rows(params.token_embedding, ids);
  if (prompts.cls) {
    if (prompts.cls->numel() != d) throw DimensionError("encode: [CLS] prompt width mismatch");
    const Tensor parts[] = {tape.reshape(*prompts.cls, {1, d}), tape.slice_rows(tokens, 1, L - 1)};
    if (ids[0] != Vocab::kCls) throw std::invalid_argument("encode: sequence must start with [CLS]");
    tokens = tape.concat_rows(parts);
  }
  if (options.condition) {
    if (options.condition->numel() != d) {
      throw DimensionError("condition: vector of " + std::to_string(options.condition->numel()) +
                           " values for hidden width " + std::to_string(d));
    }
    tokens = tape.add_row(tokens, *options.condition);
  }
  // Positions 0..b-1 belong to the prompt slots; tokens start at b.
  tokens = tape.add(tokens, tape.slice_rows(params.position_embedding, b, L));
  tokens = tape.layer_norm(tokens, params.embedding_ln_gain, params.embedding_ln_bias, cfg.layer_norm_eps);
  tokens = maybe_dropout(tape, tokens, options, cfg.dropout_rate);

  // Prompt slots are always attendable; padding never is.
  std::unique_ptr<bool[]> key_valid(new bool[b + L]);
  std::fill_n(key_valid.get(), b + L, true);
  std::copy(options.valid.begin(), options.valid.end(), key_valid.get() + b);
  const std::span<const bool> mask(key_valid.get(), b + L);

  EncoderOutput out;
  out.prompt_len = b;
  Tensor x = b > 0 ? inject_prompts(tape, *prompts.deep, 0, tokens, true) : tokens;
  out.layer_input = x;

  const std::size_t heads = cfg.num_heads, dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto& P = params.layers[l];
    if (l > 0 && b > 0) x = inject_prompts(tape, *prompts.deep, l, x, false);
    const Tensor q = linear(tape, x, P.wq, P.bq);
    const Tensor k = linear(tape, x, P.wk, P.bk);
    const Tensor v = linear(tape, x, P.wv, P.bv);
    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor qh = tape.slice_cols(q, h * dh, dh);
      const Tensor kh = tape.slice_cols(k, h * dh, dh);
      const Tensor vh = tape.slice_cols(v, h * dh, dh);
      const Tensor scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dh);
      const Tensor probs = tape.softmax_rows(scores, mask);
      out.attention.push_back(probs);
      head_out.push_back(tape.matmul(probs, vh));
    }
    Tensor attn = heads == 1 ? head_out.front() : tape.concat_cols(head_out);
    attn = maybe_dropout(tape, linear(tape, attn, P.wo, P.bo), options, cfg.dropout_rate);
    x = tape.layer_norm(tape.add(x, attn), P.ln1_gain, P.ln1_bias, cfg.layer_norm_eps);
    Tensor ffn = linear(tape, tape.gelu(linear(tape, x, P.w1, P.b1)), P.w2, P.b2);
    ffn = maybe_dropout(tape, ffn, options, cfg.dropout_rate);
    x = tape.layer_norm(tape.add(x, ffn), P.ln2_gain, P.ln2_bias, cfg.layer_norm_eps);
    out.layer_states.push_back(x);
  }
  return out;
}

Tensor sentence_vector(Tape& tape, const EncoderOutput& output) {
  return tape.slice_rows(output.final_states(), output.prompt_len, 1);
}

}  // namespace d2cse
