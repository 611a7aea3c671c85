#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "d2cse/checkpoint.hpp"
#include "d2cse/config.hpp"
#include "d2cse/trainer.hpp"

using namespace d2cse;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "d2cse_train_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const SyntheticData& synthetic() {
  static const SyntheticData data =
      generate_synthetic({.seed = 4, .num_sentences = 120, .num_triples = 120, .num_sts_pairs = 60, .words_per_class = 3});
  return data;
}

TrainingData training_data(bool supervised) {
  const auto& s = synthetic();
  TrainingData data{s.vocab, {}};
  for (const auto& t : s.triples) data.examples.push_back(supervised ? t : Example{t.anchor, {}, {}});
  return data;
}

TrainConfig small_config() {
  TrainConfig c;
  c.encoder.num_layers = 2;
  c.encoder.hidden_dim = 16;
  c.encoder.num_heads = 2;
  c.encoder.ffn_dim = 32;
  c.prompt_len = 4;
  c.batch_size = 8;
  c.epochs = 1;
  c.max_steps = 5;
  return c;
}

bool same_trainables(const Model& a, const Model& b) {
  const auto ta = a.trainable(), tb = b.trainable();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (ta[i].first != tb[i].first || !bit_equal(ta[i].second, tb[i].second)) return false;
  return true;
}

}  // namespace

TEST(Config, DefaultsAndVariants) {
  TrainConfig c;
  EXPECT_EQ(c.variant(), Variant::kD);
  EXPECT_EQ(c.lambda, 0.005);
  EXPECT_EQ(c.effective_prompt_len(), 16u);
  c.supervised = true;
  EXPECT_EQ(c.effective_prompt_len(), 12u);
  for (Variant v : {Variant::kA, Variant::kB, Variant::kC, Variant::kD}) {
    c.set_variant(v);
    EXPECT_EQ(c.variant(), v);
  }
  c.shared_prompts = false;
  c.conditioning = false;
  EXPECT_THROW(c.variant(), std::invalid_argument);
}

TEST(Config, EveryKeyIsAddressable) {
  const auto keys = TrainConfig::keys();
  EXPECT_GE(keys.size(), 30u);
  TrainConfig c;
  c.set("encoder.hidden_dim", "32");
  c.set("optim.learning_rate", "0.25");
  c.set("framework.conditioning", "false");
  c.set("corruption.sampler", "uniform");
  c.set("paths.sts", "x.tsv");
  EXPECT_EQ(c.encoder.hidden_dim, 32u);
  EXPECT_EQ(c.learning_rate, 0.25);
  EXPECT_FALSE(c.conditioning);
  EXPECT_EQ(c.sampler, SamplerKind::kUniform);
  EXPECT_EQ(c.sts_path, "x.tsv");
  EXPECT_EQ(config_diff(TrainConfig{}, c),
            (std::vector<std::string>{"encoder.hidden_dim", "framework.conditioning", "corruption.sampler",
                                      "optim.learning_rate", "paths.sts"}));
  EXPECT_THROW(c.set("encoder.width", "3"), std::invalid_argument);
  EXPECT_THROW(c.set("encoder.hidden_dim", "many"), std::invalid_argument);
  EXPECT_THROW(c.set("framework.conditioning", "maybe"), std::invalid_argument);
}

TEST(Config, JsonRoundTripAndRejection) {
  TrainConfig c = small_config();
  c.set_variant(Variant::kB);
  c.temperature = 0.07;
  c.nli_path = "nli.tsv";
  EXPECT_EQ(TrainConfig::from_json(c.to_json()), c);
  const auto path = scratch("config.json");
  c.save(path);
  EXPECT_EQ(TrainConfig::load(path), c);
  EXPECT_THROW(TrainConfig::from_json(R"({"encoder": {"depth": 3}})"), std::invalid_argument);
  EXPECT_THROW(TrainConfig::from_json(R"({"extras": {}})"), std::invalid_argument);
  EXPECT_EQ(TrainConfig::from_json(R"({"objective": {"lambda": 0.5}})").lambda, 0.5);
}

TEST(Config, Validation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.temperature = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.masking_ratio = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.prompt_len = 30;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExactAfterRounding) {
  auto config = small_config();
  config.encoder.vocab_size = 50;
  auto model = build_model(config);
  model.round_to_f32();
  const auto path = scratch("model.d2cp");
  save_checkpoint(path, config, model, 42);
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.step, 42u);
  EXPECT_EQ(loaded.config, config);
  EXPECT_TRUE(same_trainables(loaded.model, model));
  EXPECT_EQ(loaded.model.heads.pooler.bn.running_var, model.heads.pooler.bn.running_var);
  EXPECT_EQ(read_bytes(path).substr(0, 4), "D2CP");
  save_checkpoint(scratch("again.d2cp"), loaded.config, loaded.model, 42);
  EXPECT_EQ(read_bytes(path), read_bytes(scratch("again.d2cp")));
}

TEST(Checkpoint, RefusesChecksumMismatchAndBadHeaders) {
  auto config = small_config();
  config.encoder.vocab_size = 50;
  const auto model = build_model(config);
  const auto path = scratch("tamper.d2cp");
  save_checkpoint(path, config, model, 1);
  auto bytes = read_bytes(path);
  bytes.back() = bytes.back() == '0' ? '1' : '0';
  std::ofstream(path, std::ios::binary) << bytes;
  try {
    load_checkpoint(path);
    FAIL() << "loaded a checkpoint with a wrong checksum";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
  bytes[0] = 'X';
  std::ofstream(path, std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  std::ofstream(path, std::ios::binary) << "D2CP";
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  EXPECT_THROW(load_checkpoint(scratch("missing.d2cp")), std::exception);
}

TEST(Trainer, ZeroEpochsKeepsInitialization) {
  auto config = small_config();
  config.epochs = 0;
  const auto result = train(config, training_data(false));
  EXPECT_TRUE(result.steps.empty());
  EXPECT_EQ(result.config.encoder.vocab_size, synthetic().vocab.size());
  EXPECT_TRUE(same_trainables(result.model, build_model(result.config)));
}

TEST(Trainer, DeterministicAndFrozen) {
  const auto config = small_config();
  const auto a = train(config, training_data(false));
  const auto b = train(config, training_data(false));
  ASSERT_EQ(a.steps.size(), 5u);
  EXPECT_TRUE(same_trainables(a.model, b.model));
  EXPECT_FALSE(same_trainables(a.model, build_model(a.config)));
  EXPECT_EQ(checksum(a.model.encoder), checksum(EncoderParams::init(a.config.encoder, a.config.encoder_seed)));
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    EXPECT_EQ(a.steps[i].step, i + 1);
    EXPECT_EQ(a.steps[i].total, b.steps[i].total);
    EXPECT_NEAR(a.steps[i].total, a.steps[i].cl + config.lambda * a.steps[i].crtd, 1e-12);
  }
  auto other = config;
  other.seed = 99;
  EXPECT_FALSE(same_trainables(a.model, train(other, training_data(false)).model));
}

TEST(Trainer, SupervisedLossDecreases) {
  auto config = small_config();
  config.supervised = true;
  config.learning_rate = 0.01;
  config.encoder.dropout_rate = 0.0;
  config.max_steps = 200;
  config.epochs = 20;
  const auto result = train(config, training_data(true));
  ASSERT_EQ(result.steps.size(), 200u);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    head += result.steps[i].total;
    tail += result.steps[180 + i].total;
  }
  EXPECT_LT(tail, head * 0.8);
}

TEST(Trainer, RejectsVocabularyMismatch) {
  auto config = small_config();
  config.encoder.vocab_size = 7;
  EXPECT_THROW(train(config, training_data(false)), std::invalid_argument);
}

TEST(Trainer, FilesWritten) {
  const auto& s = synthetic();
  const auto dir = scratch("run");
  fs::remove_all(dir);
  s.write(dir / "data");
  auto config = small_config();
  config.epochs = 2;
  config.max_steps = 0;
  config.corpus_path = (dir / "data" / "corpus.txt").string();
  config.vocab_path = (dir / "data" / "vocab.txt").string();
  config.checkpoint_dir = (dir / "ck").string();
  config.loss_log = (dir / "loss.log").string();
  const auto result = train_from_files(config);
  for (const char* name : {"epoch-1.d2cp", "epoch-2.d2cp", "final.d2cp", "vocab.txt", "config.json"}) {
    EXPECT_TRUE(fs::exists(dir / "ck" / name)) << name;
  }
  std::ifstream log(config.loss_log);
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, kLossLogHeader);
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    std::istringstream fields(line);
    std::size_t step;
    double cl, crtd, total, wall;
    ASSERT_TRUE(fields >> step >> cl >> crtd >> total >> wall) << line;
    EXPECT_EQ(step, ++lines);
  }
  EXPECT_EQ(lines, result.steps.size());
  EXPECT_EQ(lines, 2u * ((120 + 7) / 8));
}

TEST(Embedding, LengthLimitAndSkips) {
  auto config = small_config();
  config.encoder.vocab_size = synthetic().vocab.size();
  config.encoder.max_seq_len = 12;
  const auto model = build_model(config);
  const auto& vocab = synthetic().vocab;
  const auto v = embed_sentence(model, vocab, "the big dog likes the cat");
  EXPECT_EQ(v.size(), 16u);
  EXPECT_EQ(embed_sentence(model, vocab, "the big dog likes the cat"), v);
  EXPECT_THROW(embed_sentence(model, vocab, "the big dog likes the cat the cat"), std::length_error);
  std::vector<std::size_t> skipped;
  const auto vs = embed_sentences(model, vocab, {"the big dog", "the big dog likes the cat the cat", ""}, &skipped);
  EXPECT_EQ(vs.size(), 2u);
  EXPECT_EQ(skipped, (std::vector<std::size_t>{1}));
}

TEST(Evaluation, CheckpointRoundTripReproducesReport) {
  auto config = small_config();
  const auto result = train(config, training_data(false));
  auto model = result.model.clone_trainable();
  model.round_to_f32();
  const auto path = scratch("eval.d2cp");
  save_checkpoint(path, result.config, result.model, 5);
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(evaluate(loaded.model, synthetic().vocab, synthetic().sts),
            evaluate(model, synthetic().vocab, synthetic().sts));
}

TEST(GradCheck, TinyConfigPasses) {
  auto config = small_config();
  config.encoder.vocab_size = 50;
  const auto r = grad_check(config);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_name << "[" << r.worst_index << "]";
  EXPECT_EQ(r.checked, prompt_parameter_formula(2, 4, 16, true));
  config.lambda = 0.0;
  EXPECT_LT(grad_check(config).max_rel_error, 1e-4);
}

TEST(GradCheck, DetectsBrokenBackwardRule) {
  auto config = small_config();
  config.encoder.vocab_size = 50;
  ScopedBackwardFault fault(OpKind::kSoftplus, 1.5);
  EXPECT_GT(grad_check(config).max_rel_error, 1e-3);
}

TEST(Ablation, EightRowsWithStructuralDifferences) {
  auto config = small_config();
  config.max_steps = 1;
  const auto rows = ablate(config, training_data(false), synthetic().sts);
  ASSERT_EQ(rows.size(), 8u);
  std::size_t b_count = 0, other_max = 0;
  const TrainConfig* c_on = nullptr;
  const TrainConfig* d_on = nullptr;
  for (const auto& r : rows) {
    if (r.variant == Variant::kB) b_count = std::max(b_count, r.trainable_params);
    else other_max = std::max(other_max, r.trainable_params);
    if (r.cls_prompt && r.variant == Variant::kC) c_on = &r.config;
    if (r.cls_prompt && r.variant == Variant::kD) d_on = &r.config;
  }
  EXPECT_GT(b_count, other_max);
  ASSERT_TRUE(c_on && d_on);
  EXPECT_EQ(config_diff(*c_on, *d_on), (std::vector<std::string>{"framework.conditioning"}));
  const auto csv = ablation_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
}
