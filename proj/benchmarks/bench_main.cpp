#include <benchmark/benchmark.h>

#include "d2cse/checkpoint.hpp"
#include "d2cse/objectives.hpp"
#include "d2cse/trainer.hpp"

using namespace d2cse;

namespace {

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal();
  return Tensor({rows, cols}, v, true);
}

EncoderConfig encoder_config(std::size_t dim) {
  EncoderConfig c;
  c.num_layers = 2;
  c.hidden_dim = dim;
  c.num_heads = 2;
  c.ffn_dim = 2 * dim;
  c.vocab_size = 50;
  c.max_seq_len = 32;
  return c;
}

}  // namespace

static void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  auto a = random_matrix(rng, n, n);
  auto b = random_matrix(rng, n, n);
  for (auto _ : state) {
    Tape tape;
    tape.backward(tape.sum(tape.matmul(a, b)));
    a.zero_grad();
    b.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_MatmulBackward)->Arg(16)->Arg(64)->Arg(128);

static void BM_EncodeSentence(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto model = Model::create(encoder_config(dim), 1, 12, true, Variant::kD, 2);
  const std::vector<TokenId> ids = {Vocab::kCls, 10, 11, 12, 13, 14, 15, Vocab::kSep};
  for (auto _ : state) {
    Tape tape;
    const auto out = encode(tape, model.encoder, ids, model.prompts.inputs(), {});
    benchmark::DoNotOptimize(sentence_vector(tape, out).data().data());
  }
}
BENCHMARK(BM_EncodeSentence)->Arg(16)->Arg(32)->Arg(64);

static void BM_TrainStep(benchmark::State& state) {
  const bool supervised = state.range(0) != 0;
  const auto data = generate_synthetic({.seed = 1, .num_sentences = 64, .num_triples = 64, .num_sts_pairs = 1,
                                        .words_per_class = 3});
  TrainingData training{data.vocab, {}};
  for (const auto& t : data.triples) training.examples.push_back(supervised ? t : Example{t.anchor, {}, {}});
  TrainConfig config;
  config.encoder = encoder_config(16);
  config.encoder.vocab_size = 0;
  config.supervised = supervised;
  config.batch_size = 16;
  config.epochs = 1;
  config.max_steps = 4;
  for (auto _ : state) benchmark::DoNotOptimize(train(config, training).steps.size());
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
