#include <gtest/gtest.h>

#include <cmath>

#include "d2cse/adam.hpp"
#include "d2cse/tape.hpp"
#include "test_support.hpp"

using namespace d2cse;
using d2cse::testing::finite_difference_check;
using d2cse::testing::probe;
using d2cse::testing::random_tensor;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  const Tensor t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Tensor, GradHasDataShape) {
  Tensor t = Tensor::zeros({3, 2}, true);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.mutable_grad().size(), t.numel());
}

TEST(Matmul, IdentityAndHandArithmetic) {
  Tape tape;
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor m({2, 2}, {5, 6, 7, 8});
  EXPECT_TRUE(bit_equal(tape.matmul(eye, m), m));
  const auto out = tape.matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {1, 1}));
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_EQ(out.data()[0], 3.0);
  EXPECT_EQ(out.data()[1], 7.0);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tape tape;
  try {
    tape.matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Matmul, BackwardMatchesFiniteDifferences) {
  Rng rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  const auto r = finite_difference_check({a, b}, [&](Tape& t) { return t.sum(t.matmul(a, b)); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Softmax, Examples) {
  Tape tape;
  const auto u = tape.softmax_rows(Tensor::row({2.5, 2.5, 2.5}));
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto p = tape.softmax_rows(Tensor::row({0.0, std::log(2.0)}));
  EXPECT_NEAR(p.data()[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p.data()[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantAndStable) {
  Rng rng(2);
  Tape tape;
  const auto x = random_tensor({4, 5}, rng, 3.0, false);
  const auto shifted = tape.add(x, Tensor::full({4, 5}, 1000.0));
  const auto a = tape.softmax_rows(x);
  const auto b = tape.softmax_rows(shifted);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
    EXPECT_TRUE(std::isfinite(b.data()[i]));
    EXPECT_GT(b.data()[i], 0.0);
  }
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += a.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, MaskedKeysGetZeroProbability) {
  Tape tape;
  const bool valid[] = {true, false, true};
  const auto p = tape.softmax_rows(Tensor::row({1.0, 50.0, 1.0}), valid);
  EXPECT_EQ(p.data()[1], 0.0);
  EXPECT_NEAR(p.data()[0], 0.5, 1e-15);
}

TEST(LayerNorm, Examples) {
  Tape tape;
  const auto gain = Tensor::full({2}, 1.0);
  const auto bias = Tensor::zeros({2});
  const auto c = tape.layer_norm(Tensor::row({4.0, 4.0}), gain, bias, 1e-5);
  for (double v : c.data()) EXPECT_NEAR(v, 0.0, 1e-12);
  const auto y = tape.layer_norm(Tensor::row({1.0, 3.0}), gain, bias, 1e-12);
  EXPECT_NEAR(y.data()[0], -1.0, 1e-9);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-9);
  EXPECT_THROW(tape.layer_norm(Tensor::row({1.0}), Tensor::full({1}, 1.0), Tensor::zeros({1}), 1e-5),
               DimensionError);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  auto x = random_tensor({3, 5}, rng);
  auto g = random_tensor({5}, rng);
  auto b = random_tensor({5}, rng);
  const auto r =
      finite_difference_check({x, g, b}, [&](Tape& t) { return probe(t, t.layer_norm(x, g, b, 1e-5)); });
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(BatchNorm, Examples) {
  Tape tape;
  auto state = BatchNormState::create(1, false);
  state.eps = 1e-12;
  const auto y = tape.batch_norm(Tensor({2, 1}, {0.0, 2.0}), state, Mode::kTrain);
  EXPECT_NEAR(y.data()[0], -1.0, 1e-9);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-9);

  auto flat = BatchNormState::create(2, false);
  flat.beta.data()[0] = 0.25;
  flat.beta.data()[1] = -3.0;
  const auto z = tape.batch_norm(Tensor({3, 2}, {7, 1, 7, 1, 7, 1}), flat, Mode::kTrain);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_NEAR(z.at(r, 0), 0.25, 1e-12);
    EXPECT_NEAR(z.at(r, 1), -3.0, 1e-12);
  }
}

TEST(BatchNorm, TrainModeRejectsSingleRow) {
  Tape tape;
  auto state = BatchNormState::create(2, false);
  EXPECT_THROW(tape.batch_norm(Tensor::row({1.0, 2.0}), state, Mode::kTrain), std::invalid_argument);
  EXPECT_NO_THROW(tape.batch_norm(Tensor::row({1.0, 2.0}), state, Mode::kEval));
}

TEST(BatchNorm, RunningStatisticsAndEvalDeterminism) {
  Tape tape;
  auto state = BatchNormState::create(1, false);
  state.momentum = 0.5;
  tape.batch_norm(Tensor({2, 1}, {0.0, 2.0}), state, Mode::kTrain);
  EXPECT_DOUBLE_EQ(state.running_mean[0], 0.5);  // 0.5 * 0 + 0.5 * 1
  EXPECT_DOUBLE_EQ(state.running_var[0], 1.5);   // 0.5 * 1 + 0.5 * 2 (unbiased)
  const Tensor x({2, 1}, {3.0, -1.0});
  const auto a = tape.batch_norm(x, state, Mode::kEval);
  const auto b = tape.batch_norm(x, state, Mode::kEval);
  EXPECT_TRUE(bit_equal(a, b));
  EXPECT_DOUBLE_EQ(state.running_mean[0], 0.5);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  auto x = random_tensor({4, 3}, rng);
  auto state = BatchNormState::create(3, true);
  for (auto& v : state.gamma.data()) v = rng.uniform(0.5, 1.5);
  for (auto& v : state.beta.data()) v = rng.normal();
  auto f = [&](Tape& t) { return probe(t, t.batch_norm(x, state, Mode::kTrain)); };
  EXPECT_LT(finite_difference_check({x, state.gamma, state.beta}, f).max_rel_error, 1e-5);
  auto g = [&](Tape& t) { return probe(t, t.batch_norm(x, state, Mode::kEval)); };
  EXPECT_LT(finite_difference_check({x, state.gamma, state.beta}, g).max_rel_error, 1e-5);
}

TEST(Dropout, ZeroRateIsIdentity) {
  Tape tape;
  Rng rng(5);
  const auto x = random_tensor({3, 3}, rng, 1.0, false);
  EXPECT_TRUE(bit_equal(tape.dropout(x, 0.0, rng), x));
}

TEST(Dropout, RejectsRatesOutsideUnitInterval) {
  Tape tape;
  Rng rng(5);
  const auto x = Tensor::full({2, 2}, 1.0);
  EXPECT_THROW(tape.dropout(x, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(tape.dropout(x, -0.1, rng), std::invalid_argument);
}

TEST(Dropout, SeededMaskIsReproducible) {
  Tape tape;
  const auto x = Tensor::full({10, 10}, 1.0);
  Rng r1(6), r2(6);
  EXPECT_TRUE(bit_equal(tape.dropout(x, 0.3, r1), tape.dropout(x, 0.3, r2)));
}

TEST(Dropout, ZeroFractionAndSurvivorScale) {
  Tape tape;
  Rng rng(7);
  const auto x = Tensor::full({1000, 100}, 1.0);
  const auto y = tape.dropout(x, 0.1, rng);
  std::size_t zeros = 0;
  for (double v : y.data()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.9);
    }
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 1e5, 0.1, 0.01);
}

TEST(Backward, SquareSum) {
  Tensor x({2}, {1.0, 2.0}, true);
  Tape tape;
  tape.backward(tape.sum(tape.mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, DetachedLeafGetsNoGradient) {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor c({2}, {3.0, 4.0}, false);
  Tape tape;
  tape.backward(tape.sum(tape.mul(x, c)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_TRUE(x.has_grad());
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x({2}, {1.0, 2.0}, true);
  Tape tape;
  EXPECT_THROW(tape.backward(tape.scale(x, 2.0)), DimensionError);
}

TEST(Backward, GradientsAccumulateAcrossUses) {
  Tensor x({2}, {1.0, -1.0}, true);
  Tape tape;
  tape.backward(tape.add(tape.sum(x), tape.sum(tape.scale(x, 3.0))));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  Tape again;
  again.backward(again.sum(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
}

TEST(Backward, NoRecordingWithoutTrainableInputs) {
  Tape tape;
  tape.matmul(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, LinearInLoss) {
  Rng rng(8);
  auto x = random_tensor({3, 4}, rng);
  auto w = random_tensor({4, 2}, rng);
  auto l1 = [&](Tape& t) { return t.sum(t.gelu(t.matmul(x, w))); };
  auto l2 = [&](Tape& t) { return t.sum(t.softplus(t.matmul(x, w))); };
  auto grads = [&](const std::function<Tensor(Tape&)>& f) {
    x.clear_grad();
    w.clear_grad();
    Tape t;
    t.backward(f(t));
    std::vector<double> g(x.grad().begin(), x.grad().end());
    g.insert(g.end(), w.grad().begin(), w.grad().end());
    return g;
  };
  const double a = 0.7, b = -1.3;
  const auto g1 = grads(l1);
  const auto g2 = grads(l2);
  const auto g = grads([&](Tape& t) { return t.add(t.scale(l1(t), a), t.scale(l2(t), b)); });
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], a * g1[i] + b * g2[i], 1e-10);
}

// Every differentiable op against central differences on small random inputs.
TEST(Backward, EveryOpMatchesFiniteDifferences) {
  Rng rng(9);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  auto row = random_tensor({4}, rng);
  auto sq = random_tensor({4, 3}, rng);
  const std::int32_t ids[] = {2, 0, 2, 1};
  const std::size_t cols[] = {1, 3, 0};
  const bool valid[] = {true, false, true, true};
  std::vector<std::pair<const char*, std::function<Tensor(Tape&)>>> cases = {
      {"matmul", [&](Tape& t) { return probe(t, t.matmul(a, sq)); }},
      {"transpose", [&](Tape& t) { return probe(t, t.transpose(a)); }},
      {"add", [&](Tape& t) { return probe(t, t.add(a, b)); }},
      {"sub", [&](Tape& t) { return probe(t, t.sub(a, b)); }},
      {"mul", [&](Tape& t) { return probe(t, t.mul(a, b)); }},
      {"add_row", [&](Tape& t) { return probe(t, t.add_row(a, row)); }},
      {"scale", [&](Tape& t) { return probe(t, t.scale(a, -2.5)); }},
      {"gelu", [&](Tape& t) { return probe(t, t.gelu(a)); }},
      {"relu", [&](Tape& t) { return probe(t, t.relu(a)); }},
      {"softplus", [&](Tape& t) { return probe(t, t.softplus(a)); }},
      {"sigmoid", [&](Tape& t) { return probe(t, t.sigmoid(a)); }},
      {"softmax", [&](Tape& t) { return probe(t, t.softmax_rows(a)); }},
      {"softmax_masked", [&](Tape& t) { return probe(t, t.softmax_rows(a, valid)); }},
      {"log_softmax", [&](Tape& t) { return probe(t, t.log_softmax_rows(a)); }},
      {"concat_rows", [&](Tape& t) { const Tensor p[] = {a, b}; return probe(t, t.concat_rows(p)); }},
      {"slice_rows", [&](Tape& t) { return probe(t, t.slice_rows(a, 1, 2)); }},
      {"concat_cols", [&](Tape& t) { const Tensor p[] = {a, b}; return probe(t, t.concat_cols(p)); }},
      {"slice_cols", [&](Tape& t) { return probe(t, t.slice_cols(a, 1, 2)); }},
      {"l2_normalize", [&](Tape& t) { return probe(t, t.l2_normalize_rows(a)); }},
      {"take_along_rows", [&](Tape& t) { return probe(t, t.take_along_rows(a, cols)); }},
      {"gather_rows", [&](Tape& t) { return probe(t, t.gather_rows(a, ids)); }},
      {"mean", [&](Tape& t) { return t.scale(t.mean(t.mul(a, b)), 3.0); }},
      {"reshape", [&](Tape& t) { return probe(t, t.reshape(a, {2, 6})); }},
  };
  for (auto& [name, f] : cases) {
    EXPECT_LT(finite_difference_check({a, b, row, sq}, f).max_rel_error, 1e-6) << name;
  }
}

TEST(Backward, DropoutGradientUsesTheSameMask) {
  Rng data(10);
  auto x = random_tensor({4, 4}, data);
  auto f = [&](Tape& t) {
    Rng rng(11);
    return probe(t, t.dropout(x, 0.4, rng));
  };
  EXPECT_LT(finite_difference_check({x}, f).max_rel_error, 1e-6);
}

TEST(Backward, InjectedFaultIsDetected) {
  Rng rng(12);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto f = [&](Tape& t) { return probe(t, t.gelu(t.matmul(a, b))); };
  EXPECT_LT(finite_difference_check({a, b}, f).max_rel_error, 1e-6);
  ScopedBackwardFault fault(OpKind::kGelu, 1.01);
  EXPECT_GT(finite_difference_check({a, b}, f).max_rel_error, 1e-3);
}

TEST(L2Normalize, ZeroRowIsAnError) {
  Tape tape;
  EXPECT_THROW(tape.l2_normalize_rows(Tensor({2, 2}, {1, 0, 0, 0})), std::domain_error);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p({3}, {0.1, -0.2, 0.3}, true);
  const auto before = p.clone();
  p.mutable_grad();
  Adam adam({p}, {});
  adam.step();
  adam.step();
  EXPECT_TRUE(bit_equal(p, before));
  EXPECT_EQ(adam.step_count(), 2u);
  EXPECT_EQ(adam.first_moment(0).size(), p.numel());
  EXPECT_EQ(adam.second_moment(0).size(), p.numel());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p({1}, {0.0}, true);
  p.mutable_grad()[0] = 1.0;
  Adam adam({p}, {.learning_rate = 0.1});
  adam.step();
  // m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
  EXPECT_NEAR(p.data()[0], -0.1, 1e-8);
}

TEST(Adam, MissingGradientIsAnError) {
  Tensor p({1}, {0.0}, true);
  Adam adam({p}, {});
  EXPECT_THROW(adam.step(), std::logic_error);
}

TEST(Adam, TrajectoriesAreDeterministic) {
  auto run = [] {
    Rng rng(13);
    auto w = random_tensor({3, 3}, rng);
    auto x = random_tensor({2, 3}, rng, 1.0, false);
    Adam adam({w}, {.learning_rate = 0.05});
    for (int i = 0; i < 20; ++i) {
      Tape t;
      t.backward(t.sum(t.gelu(t.matmul(x, w))));
      adam.step();
      adam.zero_grad();
    }
    return w;
  };
  EXPECT_TRUE(bit_equal(run(), run()));
}
