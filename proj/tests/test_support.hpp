#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "d2cse/rng.hpp"
#include "d2cse/tape.hpp"
#include "d2cse/tensor.hpp"

namespace d2cse::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = scale * rng.normal();
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

struct FdReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Central differences of a scalar function of `inputs` against the tape's
// gradients. `f` builds the loss on the given tape.
inline FdReport finite_difference_check(std::vector<Tensor> inputs, const std::function<Tensor(Tape&)>& f,
                                        double h = 1e-5, double floor = 1e-8) {
  for (auto& t : inputs) t.clear_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  FdReport report;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) {
      auto g = t.grad();
      analytic.assign(g.begin(), g.end());
    }
    auto data = t.data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + h;
      double up, down;
      {
        Tape tape;
        up = f(tape).item();
      }
      data[k] = saved - h;
      {
        Tape tape;
        down = f(tape).item();
      }
      data[k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double abs_err = std::abs(numeric - analytic[k]);
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error =
          std::max(report.max_rel_error, abs_err / std::max({std::abs(numeric), std::abs(analytic[k]), floor}));
    }
  }
  for (auto& t : inputs) t.clear_grad();
  return report;
}

// Weighted sum with fixed pseudo-random weights, so every output element
// contributes a distinct gradient.
inline Tensor probe(Tape& tape, const Tensor& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<double> w(out.numel());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return tape.sum(tape.mul(out, Tensor(out.shape(), std::move(w))));
}

}  // namespace d2cse::testing
