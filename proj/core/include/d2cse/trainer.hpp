#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "d2cse/checkpoint.hpp"
#include "d2cse/config.hpp"
#include "d2cse/data.hpp"
#include "d2cse/metrics.hpp"
#include "d2cse/model.hpp"

namespace d2cse {

struct StepRecord {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;
  double cl = 0.0;
  double crtd = 0.0;
  double total = 0.0;
  double wall_seconds = 0.0;  // since the start of training
};

/// "step cl crtd total wall_seconds", space separated.
std::string format_step(const StepRecord& record);
inline constexpr const char* kLossLogHeader = "# step l_cl l_crtd l_total wall_s";

struct TrainingData {
  Vocab vocab;
  std::vector<Example> examples;
};

/// Vocabulary from paths.vocab (or built from the training text when
/// unset) and examples from paths.nli when supervised, paths.corpus
/// otherwise (falling back to NLI premises). Conflicts throw
/// std::invalid_argument before any training happens.
TrainingData load_training_data(const TrainConfig& config);

struct TrainCallbacks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(std::size_t epoch, const Model& model, std::uint64_t step)> on_epoch;
};

struct TrainResult {
  TrainConfig config;  // with encoder.vocab_size resolved
  Model model;
  std::vector<StepRecord> steps;
};

/// Runs Adam on the trainable tensors for config.epochs epochs (stopping
/// early at config.max_steps when set). Throws std::runtime_error naming
/// the step if the loss turns non-finite.
TrainResult train(TrainConfig config, const TrainingData& data, const TrainCallbacks& callbacks = {});

/// train() plus the file side: loss log at paths.loss_log and checkpoints
/// epoch-<k>.d2cp and final.d2cp under paths.checkpoint_dir.
TrainResult train_from_files(const TrainConfig& config, std::ostream* progress = nullptr);

/// Pre-pooler [CLS] state of one sentence in eval mode. Throws
/// std::length_error when prompts plus tokens exceed the position table.
Vector embed_sentence(const Model& model, const Vocab& vocab, const std::string& sentence);

/// Vectors for every sentence; sentences too long to encode are skipped,
/// their indices appended to `skipped` when given.
std::vector<Vector> embed_sentences(const Model& model, const Vocab& vocab, const std::vector<std::string>& sentences,
                                    std::vector<std::size_t>* skipped = nullptr);

EvalReport evaluate(const Model& model, const Vocab& vocab, const std::vector<StsPair>& pairs);

struct GradCheckOptions {
  double step = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::size_t batch_size = 3;
  std::uint64_t data_seed = 11;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Central finite differences of the total loss against the tape's
/// gradient for every trainable value. Uses a random batch over the
/// config's vocabulary size; dropout masks are replayed from a fixed seed
/// so every evaluation sees the same function.
GradCheckResult grad_check(const TrainConfig& config, const GradCheckOptions& options = {});

struct AblationRow {
  Variant variant;
  bool cls_prompt;
  std::size_t trainable_params;
  TrainConfig config;
  EvalReport report;
};

/// Trains variants a-d with and without the [CLS] prompt from one base
/// config and seed and evaluates each on `pairs`.
std::vector<AblationRow> ablate(const TrainConfig& base, const TrainingData& data, const std::vector<StsPair>& pairs,
                                std::ostream* progress = nullptr);
std::string format_ablation(const std::vector<AblationRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace d2cse
