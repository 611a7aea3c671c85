#include "d2cse/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "d2cse/adam.hpp"
#include "d2cse/corruption.hpp"
#include "d2cse/objectives.hpp"

namespace d2cse {
namespace {

struct TokenizedExample {
  std::vector<TokenId> anchor, positive, negative;
};

std::unique_ptr<ReplacementSampler> make_sampler(SamplerKind kind, std::span<const std::vector<TokenId>> rows,
                                                 std::size_t vocab_size) {
  if (kind == SamplerKind::kUniform) return std::make_unique<CategoricalSampler>(build_uniform_sampler(vocab_size));
  return std::make_unique<CategoricalSampler>(build_unigram_sampler(rows, vocab_size));
}

std::vector<CorruptedSentence> corrupt_batch(const Batch& batch, double ratio, const ReplacementSampler& sampler,
                                             Rng& rng) {
  std::vector<CorruptedSentence> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(corrupt(batch.real_ids(i), ratio, sampler, rng));
  return out;
}

TrainingBatch assemble(const std::vector<TokenizedExample>& rows, std::span<const std::size_t> indices,
                       bool supervised, bool corrupt_members, double ratio, const ReplacementSampler& sampler,
                       Rng& rng) {
  std::vector<std::vector<TokenId>> a, p, n;
  for (auto i : indices) {
    a.push_back(rows[i].anchor);
    if (supervised) {
      p.push_back(rows[i].positive);
      n.push_back(rows[i].negative);
    }
  }
  TrainingBatch tb;
  tb.anchors = Batch::pack(std::move(a));
  if (supervised) {
    tb.positives = Batch::pack(std::move(p));
    tb.negatives = Batch::pack(std::move(n));
  }
  if (corrupt_members) {
    tb.anchor_corruptions = corrupt_batch(tb.anchors, ratio, sampler, rng);
    if (supervised) {
      tb.positive_corruptions = corrupt_batch(*tb.positives, ratio, sampler, rng);
      tb.negative_corruptions = corrupt_batch(*tb.negatives, ratio, sampler, rng);
    }
  }
  return tb;
}

void resolve_vocab_size(TrainConfig& config, std::size_t vocab_size) {
  if (config.encoder.vocab_size == 0) {
    config.encoder.vocab_size = vocab_size;
  } else if (config.encoder.vocab_size != vocab_size) {
    throw std::invalid_argument("encoder.vocab_size is " + std::to_string(config.encoder.vocab_size) +
                                " but the vocabulary has " + std::to_string(vocab_size) + " tokens");
  }
}

std::string format_value(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

std::string format_step(const StepRecord& r) {
  std::ostringstream os;
  os << r.step << ' ' << std::setprecision(12) << r.cl << ' ' << r.crtd << ' ' << r.total << ' '
     << std::setprecision(6) << std::fixed << r.wall_seconds;
  return os.str();
}

TrainingData load_training_data(const TrainConfig& config) {
  TrainingData data;
  if (config.supervised) {
    if (config.nli_path.empty()) {
      throw std::invalid_argument("supervised training needs paths.nli (premise, entailment, contradiction triples)");
    }
    data.examples = load_nli_triples(config.nli_path);
  } else if (!config.corpus_path.empty()) {
    data.examples = load_corpus(config.corpus_path);
  } else if (!config.nli_path.empty()) {
    for (auto& e : load_nli_triples(config.nli_path)) data.examples.push_back({e.anchor, std::nullopt, std::nullopt});
  } else {
    throw std::invalid_argument("no training text: set paths.corpus or paths.nli");
  }
  if (data.examples.empty()) throw std::invalid_argument("training set is empty");

  if (!config.vocab_path.empty()) {
    data.vocab = Vocab::load(config.vocab_path);
  } else {
    std::vector<std::string> words;
    std::unordered_map<std::string, bool> seen;
    auto collect = [&](const std::string& text) {
      for (auto& w : split_words(text)) {
        if (seen.emplace(w, true).second && !Vocab().contains(w)) words.push_back(w);
      }
    };
    for (const auto& e : data.examples) {
      collect(e.anchor);
      if (e.positive) collect(*e.positive);
      if (e.negative) collect(*e.negative);
    }
    data.vocab = Vocab(words);
  }
  return data;
}

TrainResult train(TrainConfig config, const TrainingData& data, const TrainCallbacks& callbacks) {
  resolve_vocab_size(config, data.vocab.size());
  config.validate();
  if (data.examples.empty()) throw std::invalid_argument("training set is empty");
  if (config.supervised) {
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
      if (!data.examples[i].supervised()) {
        throw std::invalid_argument("supervised training: example " + std::to_string(i + 1) +
                                    " lacks an entailment or contradiction");
      }
    }
  }

  TrainResult result{config, build_model(config), {}};
  Model& model = result.model;
  const auto max_tokens = config.encoder.max_seq_len - config.effective_prompt_len();

  std::vector<TokenizedExample> rows;
  std::vector<std::vector<TokenId>> all_rows;
  for (const auto& e : data.examples) {
    TokenizedExample t{tokenize(e.anchor, data.vocab, max_tokens), {}, {}};
    if (config.supervised) {
      t.positive = tokenize(*e.positive, data.vocab, max_tokens);
      t.negative = tokenize(*e.negative, data.vocab, max_tokens);
      all_rows.push_back(t.positive);
      all_rows.push_back(t.negative);
    }
    all_rows.push_back(t.anchor);
    rows.push_back(std::move(t));
  }
  const auto sampler = make_sampler(config.sampler, all_rows, data.vocab.size());

  std::vector<Tensor> params;
  for (auto& [name, t] : model.trainable()) {
    t.mutable_grad();
    params.push_back(t);
  }
  Adam adam(params, AdamOptions{.learning_rate = config.learning_rate});
  const BatchStream stream(rows.size(), config.batch_size, derive_seed(config.seed, 3), true);
  Rng dropout_rng(derive_seed(config.seed, 4));
  Rng corrupt_rng(derive_seed(config.seed, 5));
  const auto objective = config.objective();
  const bool need_corruptions = objective.lambda != 0.0;
  const auto start = std::chrono::steady_clock::now();

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.max_steps && step >= config.max_steps) break;
    for (const auto& indices : stream.epoch(epoch)) {
      if (config.max_steps && step >= config.max_steps) break;
      const auto batch = assemble(rows, indices, config.supervised, need_corruptions, config.masking_ratio,
                                  *sampler, corrupt_rng);
      Tape tape;
      const auto report = total_loss(tape, model, batch, objective, Mode::kTrain, &dropout_rng);
      ++step;
      if (!std::isfinite(report.total_value)) {
        throw std::runtime_error("loss became non-finite at step " + std::to_string(step) + " (epoch " +
                                 std::to_string(epoch + 1) + ")");
      }
      tape.backward(report.total);
      adam.step();
      adam.zero_grad();
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      StepRecord record{step, epoch + 1, report.cl, report.crtd, report.total_value, wall};
      result.steps.push_back(record);
      if (callbacks.on_step) callbacks.on_step(record);
    }
    if (callbacks.on_epoch) callbacks.on_epoch(epoch + 1, model, step);
  }
  for (auto& p : params) p.clear_grad();
  return result;
}

TrainResult train_from_files(const TrainConfig& config, std::ostream* progress) {
  const auto data = load_training_data(config);
  std::ofstream log;
  if (!config.loss_log.empty()) {
    const std::filesystem::path path(config.loss_log);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    log.open(path);
    if (!log) throw std::runtime_error("cannot write loss log " + config.loss_log);
    log << kLossLogHeader << '\n';
  }
  const std::filesystem::path dir(config.checkpoint_dir);
  TrainConfig resolved = config;
  resolve_vocab_size(resolved, data.vocab.size());

  TrainCallbacks callbacks;
  callbacks.on_step = [&](const StepRecord& r) {
    if (log.is_open()) log << format_step(r) << '\n';
    if (progress && r.step % 50 == 0) *progress << "step " << format_step(r) << '\n';
  };
  callbacks.on_epoch = [&](std::size_t epoch, const Model& model, std::uint64_t step) {
    if (config.checkpoint_dir.empty()) return;
    save_checkpoint(dir / ("epoch-" + std::to_string(epoch) + ".d2cp"), resolved, model, step);
    if (progress) *progress << "epoch " << epoch << " done after " << step << " steps\n";
  };
  auto result = train(config, data, callbacks);
  if (!config.checkpoint_dir.empty()) {
    const std::uint64_t steps = result.steps.size();
    save_checkpoint(dir / "final.d2cp", result.config, result.model, steps);
    data.vocab.save(dir / "vocab.txt");
    result.config.save(dir / "config.json");
  }
  return result;
}

Vector embed_sentence(const Model& model, const Vocab& vocab, const std::string& sentence) {
  const auto b = model.prompts.length();
  const auto words = split_words(sentence).size();
  const auto limit = model.encoder.config.max_seq_len;
  if (b + words + 2 > limit) {
    throw std::length_error("sentence of " + std::to_string(words) + " words does not fit " + std::to_string(limit) +
                            " positions with " + std::to_string(b) + " prompt slots");
  }
  const auto ids = tokenize(sentence, vocab, limit);
  Tape tape;
  EncodeOptions opts;
  opts.mode = Mode::kEval;
  const auto out = encode(tape, model.encoder, ids, model.prompts.inputs(), opts);
  const auto row = sentence_vector(tape, out);
  return Vector(row.data().begin(), row.data().end());
}

std::vector<Vector> embed_sentences(const Model& model, const Vocab& vocab, const std::vector<std::string>& sentences,
                                    std::vector<std::size_t>* skipped) {
  std::vector<Vector> out;
  out.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    try {
      out.push_back(embed_sentence(model, vocab, sentences[i]));
    } catch (const std::length_error&) {
      if (skipped) skipped->push_back(i);
    }
  }
  return out;
}

EvalReport evaluate(const Model& model, const Vocab& vocab, const std::vector<StsPair>& pairs) {
  const auto retrieval = build_retrieval_set(pairs);
  std::vector<Vector> pool;
  pool.reserve(retrieval.pool.size());
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < retrieval.pool.size(); ++i) {
    pool.push_back(embed_sentence(model, vocab, retrieval.pool[i]));
    index.emplace(retrieval.pool[i], i);
  }
  std::vector<Vector> first, second;
  for (const auto& p : pairs) {
    first.push_back(pool[index.at(p.s1)]);
    second.push_back(pool[index.at(p.s2)]);
  }
  return build_report(pairs, first, second, retrieval, pool);
}

GradCheckResult grad_check(const TrainConfig& base, const GradCheckOptions& options) {
  TrainConfig config = base;
  if (config.encoder.vocab_size == 0) config.encoder.vocab_size = 50;
  Model model = build_model(config);
  const auto vocab_size = config.encoder.vocab_size;
  if (vocab_size <= Vocab::kNumSpecial + 1) throw std::invalid_argument("grad_check needs at least two word tokens");

  Rng data_rng(options.data_seed);
  const auto max_words = std::min<std::size_t>(5, config.encoder.max_seq_len - config.effective_prompt_len() - 2);
  auto random_sentence = [&] {
    std::vector<TokenId> ids = {Vocab::kCls};
    const auto words = 1 + data_rng.uniform_index(max_words);
    for (std::size_t k = 0; k < words; ++k)
      ids.push_back(static_cast<TokenId>(Vocab::kNumSpecial + data_rng.uniform_index(vocab_size - Vocab::kNumSpecial)));
    ids.push_back(Vocab::kSep);
    return ids;
  };
  std::vector<TokenizedExample> rows;
  std::vector<std::vector<TokenId>> all_rows;
  for (std::size_t i = 0; i < options.batch_size; ++i) {
    TokenizedExample t{random_sentence(), {}, {}};
    if (config.supervised) {
      t.positive = random_sentence();
      t.negative = random_sentence();
    }
    rows.push_back(t);
  }
  const auto sampler = build_uniform_sampler(vocab_size);
  std::vector<std::size_t> indices(rows.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  const auto batch = assemble(rows, indices, config.supervised, true, config.masking_ratio, sampler, data_rng);
  const auto objective = config.objective();

  const auto dropout_seed = derive_seed(options.data_seed, 1);
  auto loss_value = [&] {
    Tape tape;
    Rng rng(dropout_seed);
    return total_loss(tape, model, batch, objective, Mode::kTrain, &rng).total_value;
  };
  {
    Tape tape;
    Rng rng(dropout_seed);
    const auto report = total_loss(tape, model, batch, objective, Mode::kTrain, &rng);
    tape.backward(report.total);
  }

  GradCheckResult result;
  for (auto& [name, t] : model.trainable()) {
    Tensor param = t;
    std::vector<double> analytic(param.numel(), 0.0);
    if (param.has_grad()) {
      const auto g = param.grad();
      analytic.assign(g.begin(), g.end());
    }
    auto data = param.data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + options.step;
      const double up = loss_value();
      data[k] = saved - options.step;
      const double down = loss_value();
      data[k] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), options.floor});
      const double err = std::abs(analytic[k] - numeric) / denom;
      ++result.checked;
      if (err > result.max_rel_error || result.worst_name.empty()) {
        result.max_rel_error = err;
        result.worst_name = name;
        result.worst_index = k;
        result.analytic = analytic[k];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

std::vector<AblationRow> ablate(const TrainConfig& base, const TrainingData& data, const std::vector<StsPair>& pairs,
                                std::ostream* progress) {
  std::vector<AblationRow> rows;
  for (Variant v : {Variant::kA, Variant::kB, Variant::kC, Variant::kD}) {
    for (bool cls : {true, false}) {
      TrainConfig config = base;
      config.set_variant(v);
      config.cls_prompt = cls;
      if (progress) *progress << "training variant " << variant_letter(v) << (cls ? " with" : " without") << " [CLS] prompt\n";
      auto result = train(config, data);
      rows.push_back({v, cls, result.model.trainable_count(), result.config,
                      evaluate(result.model, data.vocab, pairs)});
    }
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "variant" << std::setw(6) << "cls" << std::setw(12) << "trainable"
     << std::setw(12) << "spearman" << std::setw(10) << "R@1" << std::setw(10) << "R@3" << std::setw(10) << "R@5"
     << std::setw(12) << "align" << "uniform\n";
  for (const auto& r : rows) {
    os << std::setw(8) << std::string(1, variant_letter(r.variant)) << std::setw(6) << (r.cls_prompt ? "on" : "off")
       << std::setw(12) << r.trainable_params << std::fixed << std::setprecision(4) << std::setw(12) << r.report.spearman
       << std::setprecision(2) << std::setw(10) << r.report.recall[0] << std::setw(10) << r.report.recall[1]
       << std::setw(10) << r.report.recall[2] << std::setprecision(4) << std::setw(12) << r.report.alignment
       << r.report.uniformity << '\n';
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,cls_prompt,trainable_params,spearman,recall@1,recall@3,recall@5,alignment,uniformity\n";
  for (const auto& r : rows) {
    os << variant_letter(r.variant) << ',' << (r.cls_prompt ? 1 : 0) << ',' << r.trainable_params << ','
       << format_value(r.report.spearman) << ',' << format_value(r.report.recall[0]) << ','
       << format_value(r.report.recall[1]) << ',' << format_value(r.report.recall[2]) << ','
       << format_value(r.report.alignment) << ',' << format_value(r.report.uniformity) << '\n';
  }
  return os.str();
}

}  // namespace d2cse
