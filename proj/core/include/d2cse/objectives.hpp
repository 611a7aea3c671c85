#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "d2cse/corruption.hpp"
#include "d2cse/data.hpp"
#include "d2cse/model.hpp"
#include "d2cse/tape.hpp"

namespace d2cse {

struct ObjectiveConfig {
  double temperature = 0.05;
  double lambda = 0.005;
  bool supervised = false;

  void validate() const;
};

/// u.v / (|u||v|). Throws std::domain_error on a zero vector.
double cosine_sim(std::span<const double> u, std::span<const double> v);

/// In-batch contrastive loss averaged over anchors:
///   -log( e^{s(h_i,h_i+)/t} / sum_j (e^{s(h_i,h_j+)/t} + [neg] e^{s(h_i,h_j-)/t}) )
/// with s the cosine similarity. Rows of `anchors`, `positives` and
/// `negatives` are sentence vectors.
Tensor contrastive_loss(Tape& tape, const Tensor& anchors, const Tensor& positives,
                        const Tensor* negatives, double temperature);

/// Sum over tokens of -log f_k for originals and -log(1 - f_k) for
/// replacements, where f_k = sigmoid(logits[k]) is P(token k is original).
Tensor replaced_token_bce(Tape& tape, const Tensor& logits, const std::vector<bool>& replaced);

/// Runs the discriminator pass over a corrupted sentence. When `condition`
/// is set it is added to every token-slot embedding before layer 0.
EncoderOutput condition_discriminator(Tape& tape, const Model& model, std::span<const TokenId> corrupted_ids,
                                      const Tensor* condition, Mode mode, Rng* rng);

/// Replaced-token detection loss on one sentence, summed over its word
/// tokens ([CLS], [SEP], prompt slots and padding excluded).
Tensor crtd_loss(Tape& tape, const Model& model, std::span<const TokenId> original,
                 const CorruptedSentence& corrupted, const Tensor* condition, Mode mode, Rng* rng);

/// One corrupted copy per batch member: [Null] anchors, then [+] and [-]
/// in the supervised setting.
struct TrainingBatch {
  Batch anchors;
  std::optional<Batch> positives;
  std::optional<Batch> negatives;
  std::vector<CorruptedSentence> anchor_corruptions;
  std::vector<CorruptedSentence> positive_corruptions;
  std::vector<CorruptedSentence> negative_corruptions;

  bool supervised() const { return positives.has_value() && negatives.has_value(); }
};

struct LossReport {
  Tensor total;  // differentiable L_CL + lambda * L_CRTD
  double cl = 0.0;
  double crtd = 0.0;
  double total_value = 0.0;
  /// Batch-mean CRTD contribution of the [Null], [+], [-] members.
  std::array<double, 3> crtd_terms{0.0, 0.0, 0.0};
  bool conditioned = false;
  bool crtd_computed = false;
};

/// Sentence vectors for every member of the batch: encoder [CLS] states
/// fed through the pooler in one batch-norm call.
struct PooledVectors {
  Tensor anchors, positives;
  std::optional<Tensor> negatives;
};

PooledVectors pooled_vectors(Tape& tape, Model& model, const TrainingBatch& batch, Mode mode, Rng* rng);

/// L = L_CL + lambda * L_CRTD. lambda == 0 skips the discriminator passes.
LossReport total_loss(Tape& tape, Model& model, const TrainingBatch& batch,
                      const ObjectiveConfig& config, Mode mode, Rng* rng);

}  // namespace d2cse
