#include "d2cse/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace d2cse {
namespace {

Tensor encode_cls_rows(Tape& tape, const Model& model, const Batch& batch, Mode mode, Rng* rng) {
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  const auto prompts = model.prompts.inputs();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EncodeOptions opts;
    opts.mode = mode;
    opts.rng = rng;
    opts.valid = batch.mask[i];
    const auto out = encode(tape, model.encoder, batch.ids[i], prompts, opts);
    rows.push_back(sentence_vector(tape, out));
  }
  return tape.concat_rows(rows);
}

}  // namespace

void ObjectiveConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("cosine_sim: length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw std::domain_error("cosine_sim: zero vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

Tensor contrastive_loss(Tape& tape, const Tensor& anchors, const Tensor& positives,
                        const Tensor* negatives, double temperature) {
  const std::size_t n = anchors.rows();
  if (n == 0) throw std::invalid_argument("contrastive_loss: empty batch");
  if (!(temperature > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be > 0");
  if (positives.rows() != n || positives.cols() != anchors.cols()) {
    throw DimensionError("contrastive_loss: anchors " + shape_to_string(anchors.shape()) +
                         " vs positives " + shape_to_string(positives.shape()));
  }
  const Tensor a = tape.l2_normalize_rows(anchors);
  Tensor logits = tape.matmul(a, tape.transpose(tape.l2_normalize_rows(positives)));
  if (negatives) {
    if (negatives->rows() != n || negatives->cols() != anchors.cols()) {
      throw DimensionError("contrastive_loss: negatives " + shape_to_string(negatives->shape()));
    }
    const Tensor neg = tape.matmul(a, tape.transpose(tape.l2_normalize_rows(*negatives)));
    const Tensor parts[] = {logits, neg};
    logits = tape.concat_cols(parts);
  }
  const Tensor log_probs = tape.log_softmax_rows(tape.scale(logits, 1.0 / temperature));
  std::vector<std::size_t> diagonal(n);
  for (std::size_t i = 0; i < n; ++i) diagonal[i] = i;
  return tape.scale(tape.mean(tape.take_along_rows(log_probs, diagonal)), -1.0);
}

Tensor replaced_token_bce(Tape& tape, const Tensor& logits, const std::vector<bool>& replaced) {
  if (logits.numel() != replaced.size()) {
    throw DimensionError("replaced_token_bce: " + std::to_string(logits.numel()) + " logits for " +
                         std::to_string(replaced.size()) + " labels");
  }
  // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z).
  std::vector<double> signs(replaced.size());
  for (std::size_t k = 0; k < replaced.size(); ++k) signs[k] = replaced[k] ? 1.0 : -1.0;
  const Tensor sign_tensor(logits.shape(), std::move(signs));
  return tape.sum(tape.softplus(tape.mul(logits, sign_tensor)));
}

EncoderOutput condition_discriminator(Tape& tape, const Model& model, std::span<const TokenId> corrupted_ids,
                                      const Tensor* condition, Mode mode, Rng* rng) {
  if (condition && condition->numel() != model.encoder.config.hidden_dim) {
    throw DimensionError("condition_discriminator: h has " + std::to_string(condition->numel()) +
                         " values, hidden width is " + std::to_string(model.encoder.config.hidden_dim));
  }
  EncodeOptions opts;
  opts.mode = mode;
  opts.rng = rng;
  opts.condition = condition;
  return encode(tape, model.discriminator_params(), corrupted_ids, model.discriminator_prompts(), opts);
}

Tensor crtd_loss(Tape& tape, const Model& model, std::span<const TokenId> original,
                 const CorruptedSentence& corrupted, const Tensor* condition, Mode mode, Rng* rng) {
  if (original.size() != corrupted.ids.size() || corrupted.flags.size() != original.size()) {
    throw DimensionError("crtd_loss: original has " + std::to_string(original.size()) +
                         " tokens, corrupted " + std::to_string(corrupted.ids.size()));
  }
  const auto out = condition_discriminator(tape, model, corrupted.ids, condition, mode, rng);
  std::vector<TokenId> rows;
  std::vector<bool> labels;
  for (std::size_t k = 0; k < original.size(); ++k) {
    if (!is_word_token(original[k])) continue;
    rows.push_back(static_cast<TokenId>(out.prompt_len + k));
    labels.push_back(corrupted.flags[k]);
  }
  if (rows.empty()) return Tensor::scalar(0.0);
  const Tensor states = tape.gather_rows(out.final_states(), rows);
  return replaced_token_bce(tape, model.heads.rtd.logits(tape, states), labels);
}

PooledVectors pooled_vectors(Tape& tape, Model& model, const TrainingBatch& batch, Mode mode, Rng* rng) {
  const std::size_t n = batch.anchors.size();
  std::vector<Tensor> parts;
  parts.push_back(encode_cls_rows(tape, model, batch.anchors, mode, rng));
  parts.push_back(encode_cls_rows(tape, model, batch.positives ? *batch.positives : batch.anchors, mode, rng));
  if (batch.negatives) parts.push_back(encode_cls_rows(tape, model, *batch.negatives, mode, rng));
  const Tensor pooled = model.heads.pooler.forward(tape, tape.concat_rows(parts), mode);
  PooledVectors out{tape.slice_rows(pooled, 0, n), tape.slice_rows(pooled, n, n), std::nullopt};
  if (batch.negatives) out.negatives = tape.slice_rows(pooled, 2 * n, n);
  return out;
}

LossReport total_loss(Tape& tape, Model& model, const TrainingBatch& batch,
                      const ObjectiveConfig& config, Mode mode, Rng* rng) {
  config.validate();
  const std::size_t n = batch.anchors.size();
  if (n == 0) throw std::invalid_argument("total_loss: empty batch");
  if (config.supervised && !batch.supervised()) {
    throw std::invalid_argument("total_loss: supervised objective needs entailment and contradiction");
  }
  const auto h = pooled_vectors(tape, model, batch, mode, rng);
  const Tensor* negatives = config.supervised && h.negatives ? &*h.negatives : nullptr;
  const Tensor cl = contrastive_loss(tape, h.anchors, h.positives, negatives, config.temperature);

  LossReport report;
  report.conditioned = traits(model.variant).conditioning;
  report.cl = cl.item();
  if (config.lambda == 0.0) {
    report.total = cl;
    report.total_value = report.cl;
    return report;
  }

  struct Member {
    const Batch* batch;
    const std::vector<CorruptedSentence>* corruptions;
    const Tensor* vectors;
  };
  std::vector<Member> members = {{&batch.anchors, &batch.anchor_corruptions, &h.anchors}};
  if (config.supervised) {
    members.push_back({&*batch.positives, &batch.positive_corruptions, &h.positives});
    members.push_back({&*batch.negatives, &batch.negative_corruptions, &*h.negatives});
  }
  std::vector<Tensor> per_sentence;
  for (std::size_t m = 0; m < members.size(); ++m) {
    const auto& member = members[m];
    if (member.corruptions->size() != n) {
      throw std::invalid_argument("total_loss: missing corruptions for batch member " + std::to_string(m));
    }
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < n; ++i) {
      std::optional<Tensor> condition;
      if (report.conditioned) condition = tape.slice_rows(*member.vectors, i, 1);
      terms.push_back(crtd_loss(tape, model, member.batch->real_ids(i), (*member.corruptions)[i],
                                condition ? &*condition : nullptr, mode, rng));
    }
    const Tensor stacked = tape.concat_rows(terms);
    const Tensor term_mean = tape.scale(tape.sum(stacked), 1.0 / static_cast<double>(n));
    report.crtd_terms[m] = term_mean.item();
    per_sentence.push_back(term_mean);
  }
  const Tensor crtd = per_sentence.size() == 1 ? per_sentence.front()
                                               : tape.sum(tape.concat_rows(per_sentence));
  report.crtd = crtd.item();
  report.crtd_computed = true;
  report.total = tape.add(cl, tape.scale(crtd, config.lambda));
  report.total_value = report.total.item();
  return report;
}

}  // namespace d2cse
