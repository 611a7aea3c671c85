// Command-line front end: data generation, training, evaluation,
// embedding export, gradient checking and the variant ablation grid.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "d2cse/checkpoint.hpp"
#include "d2cse/config.hpp"
#include "d2cse/corruption.hpp"
#include "d2cse/data.hpp"
#include "d2cse/metrics.hpp"
#include "d2cse/trainer.hpp"

namespace fs = std::filesystem;
using namespace d2cse;

namespace {

// --config, --seed, --set and one --<section.key> flag per config leaf.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::vector<std::string> sets;
  std::map<std::string, std::string> leaves;

  void attach(CLI::App* app, bool with_leaves) {
    app->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Run seed (optim.seed)");
    app->add_option("--set", sets, "Override a config key, key=value (repeatable)");
    if (!with_leaves) return;
    app->add_option("--variant", variant, "Framework variant a, b, c or d")->check(CLI::IsMember({"a", "b", "c", "d"}));
    for (const auto& key : TrainConfig::keys()) {
      app->add_option("--" + key, leaves[key], "Config key " + key)->group("Config keys");
    }
  }

  TrainConfig resolve(const CLI::App& app) const {
    TrainConfig config = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
    for (const auto& [key, value] : leaves) {
      if (app.count("--" + key)) config.set(key, value);
    }
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (variant) config.set_variant(parse_variant(*variant));
    if (seed) config.seed = *seed;
    return config;
  }
};

Vocab vocab_for(const Checkpoint& ck, const fs::path& checkpoint, const std::string& flag) {
  if (!flag.empty()) return Vocab::load(flag);
  if (!ck.config.vocab_path.empty() && fs::exists(ck.config.vocab_path)) return Vocab::load(ck.config.vocab_path);
  const auto sibling = checkpoint.parent_path() / "vocab.txt";
  if (fs::exists(sibling)) return Vocab::load(sibling);
  throw std::invalid_argument("no vocabulary: pass --vocab");
}

std::string sts_for(const Checkpoint& ck, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (!ck.config.sts_path.empty()) return ck.config.sts_path;
  throw std::invalid_argument("no evaluation pairs: pass --sts");
}

void print_report(const EvalReport& r, bool sts, bool retrieval) {
  std::cout << std::setprecision(6);
  if (sts) {
    std::cout << "pairs " << r.num_pairs << "\nspearman " << r.spearman << "\nalignment " << r.alignment
              << "\nuniformity " << r.uniformity << '\n';
  }
  if (retrieval) {
    std::cout << "queries " << r.num_queries << '\n';
    for (std::size_t i = 0; i < 3; ++i) std::cout << "recall@" << kRecallCutoffs[i] << ' ' << r.recall[i] << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sentence embeddings from a frozen encoder adapted through deep prompts"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic vocabulary, corpus, NLI triples and STS pairs");
  ConfigFlags gen_flags;
  gen_flags.attach(gen, false);
  SyntheticConfig synth;
  std::string gen_out = "data";
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--sentences", synth.num_sentences, "Corpus sentences")->capture_default_str();
  gen->add_option("--triples", synth.num_triples, "NLI triples")->capture_default_str();
  gen->add_option("--sts-pairs", synth.num_sts_pairs, "Scored evaluation pairs")->capture_default_str();
  gen->add_option("--words-per-class", synth.words_per_class, "Synonyms per class (max 16)")->capture_default_str();

  // precorrupt
  auto* pre = app.add_subcommand("precorrupt", "Write a corrupted copy of a corpus (original TAB corrupted TAB flags)");
  ConfigFlags pre_flags;
  pre_flags.attach(pre, true);
  std::string pre_out;
  pre->add_option("--out", pre_out, "Output file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train prompts and heads; writes checkpoints and the loss log");
  ConfigFlags train_flags;
  train_flags.attach(tr, true);
  bool train_eval = false;
  tr->add_flag("--eval", train_eval, "Evaluate the final model on paths.sts");

  // eval-sts / eval-retrieval
  struct EvalFlags {
    std::string checkpoint, sts, vocab, out;
    ConfigFlags common;
  };
  EvalFlags sts_flags, ret_flags;
  auto* ev_sts = app.add_subcommand("eval-sts", "Spearman, alignment, uniformity and similarity histogram");
  auto* ev_ret = app.add_subcommand("eval-retrieval", "Recall@1/3/5 over the evaluation sentences");
  for (auto [sub, flags] : {std::pair{ev_sts, &sts_flags}, std::pair{ev_ret, &ret_flags}}) {
    flags->common.attach(sub, false);
    sub->add_option("--checkpoint", flags->checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    sub->add_option("--sts", flags->sts, "Pairs file (s1 TAB s2 TAB score); defaults to paths.sts");
    sub->add_option("--vocab", flags->vocab, "Vocabulary file; defaults to the checkpoint's");
    sub->add_option("--out", flags->out, "Write <out>.txt, <out>.json and <out>.hist.csv");
  }

  // embed
  auto* emb = app.add_subcommand("embed", "Write one vector per input sentence");
  ConfigFlags emb_flags;
  emb_flags.attach(emb, false);
  std::string emb_ckpt, emb_in, emb_out, emb_vocab;
  emb->add_option("--checkpoint", emb_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  emb->add_option("--input", emb_in, "Sentences, one per line")->required()->check(CLI::ExistingFile);
  emb->add_option("--output", emb_out, "Vectors file")->required();
  emb->add_option("--vocab", emb_vocab, "Vocabulary file; defaults to the checkpoint's");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Compare tape gradients with central finite differences");
  ConfigFlags gc_flags;
  gc_flags.attach(gc, true);
  GradCheckOptions gc_options;
  double gc_tolerance = 1e-4;
  gc->add_option("--step", gc_options.step, "Finite-difference step")->capture_default_str();
  gc->add_option("--tolerance", gc_tolerance, "Pass threshold on the max relative error")->capture_default_str();

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train variants a-d with and without the [CLS] prompt");
  ConfigFlags abl_flags;
  abl_flags.attach(abl, true);
  std::string abl_csv;
  abl->add_option("--csv", abl_csv, "Also write the grid as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto config = gen_flags.resolve(*gen);
      synth.seed = config.seed;
      const auto data = generate_synthetic(synth);
      data.write(gen_out);
      std::cout << "wrote " << data.vocab.size() << " tokens, " << data.corpus.size() << " sentences, "
                << data.triples.size() << " triples, " << data.sts.size() << " pairs to " << gen_out << '\n';
    } else if (*pre) {
      const auto config = pre_flags.resolve(*pre);
      if (config.corpus_path.empty() || config.vocab_path.empty())
        throw std::invalid_argument("precorrupt needs paths.corpus and paths.vocab");
      const auto vocab = Vocab::load(config.vocab_path);
      std::vector<std::vector<TokenId>> rows;
      for (const auto& e : load_corpus(config.corpus_path))
        rows.push_back(tokenize(e.anchor, vocab, config.encoder.max_seq_len));
      const auto sampler = config.sampler == SamplerKind::kUniform ? build_uniform_sampler(vocab.size())
                                                                   : build_unigram_sampler(rows, vocab.size());
      precorrupt_corpus(config.corpus_path, pre_out, vocab, config.encoder.max_seq_len,
                        {config.masking_ratio, config.seed, config.sampler}, sampler);
      std::cout << "wrote " << pre_out << '\n';
    } else if (*tr) {
      const auto config = train_flags.resolve(*tr);
      const auto result = train_from_files(config, &std::cout);
      std::cout << "trained " << result.steps.size() << " steps, " << result.model.trainable_count()
                << " trainable / " << result.model.frozen_count() << " frozen parameters\n";
      if (!result.steps.empty()) std::cout << "final " << format_step(result.steps.back()) << '\n';
      if (train_eval) {
        if (config.sts_path.empty()) throw std::invalid_argument("--eval needs paths.sts");
        const auto vocab = load_training_data(config).vocab;
        print_report(evaluate(result.model, vocab, load_sts_tsv(config.sts_path)), true, true);
      }
    } else if (*ev_sts || *ev_ret) {
      const auto& flags = *ev_sts ? sts_flags : ret_flags;
      const auto ck = load_checkpoint(flags.checkpoint);
      const auto vocab = vocab_for(ck, flags.checkpoint, flags.vocab);
      const auto report = evaluate(ck.model, vocab, load_sts_tsv(sts_for(ck, flags.sts)));
      print_report(report, ev_sts->parsed(), ev_ret->parsed());
      if (!flags.out.empty()) report.write(flags.out);
    } else if (*emb) {
      const auto ck = load_checkpoint(emb_ckpt);
      const auto vocab = vocab_for(ck, emb_ckpt, emb_vocab);
      std::ifstream in(emb_in);
      std::ofstream out(emb_out, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + emb_out);
      std::string line;
      std::size_t line_no = 0;
      char buf[32];
      while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        try {
          const auto v = embed_sentence(ck.model, vocab, line);
          out << line;
          for (std::size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v[i])));
            out << (i ? ' ' : '\t') << buf;
          }
          out << '\n';
        } catch (const std::length_error& e) {
          std::cerr << "warning: " << emb_in << ':' << line_no << ": skipped, " << e.what() << '\n';
        }
      }
    } else if (*gc) {
      const auto config = gc_flags.resolve(*gc);
      const auto r = grad_check(config, gc_options);
      std::cout << std::setprecision(6) << "checked " << r.checked << " values\nmax relative error " << r.max_rel_error
                << "\nworst " << r.worst_name << '[' << r.worst_index << "] analytic " << r.analytic << " numeric "
                << r.numeric << '\n';
      if (!(r.max_rel_error < gc_tolerance)) {
        std::cout << "FAIL (tolerance " << gc_tolerance << ")\n";
        return 1;
      }
      std::cout << "PASS\n";
    } else if (*abl) {
      const auto config = abl_flags.resolve(*abl);
      if (config.sts_path.empty()) throw std::invalid_argument("ablate needs paths.sts");
      const auto data = load_training_data(config);
      const auto rows = ablate(config, data, load_sts_tsv(config.sts_path), &std::cerr);
      std::cout << format_ablation(rows);
      if (!abl_csv.empty()) {
        std::ofstream out(abl_csv);
        out << ablation_csv(rows);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
