#include "d2cse/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>

namespace d2cse {
namespace {

using NodePtr = std::shared_ptr<detail::TensorNode>;

struct Fault {
  OpKind kind;
  double factor;
};
thread_local std::optional<Fault> g_fault;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

// Accumulation target for an input, or nullptr when it needs no gradient.
double* grad_of(const NodePtr& node) {
  if (!node->requires_grad) return nullptr;
  node->ensure_grad();
  return node->grad.data();
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_slope(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kScale: return "scale";
    case OpKind::kGelu: return "gelu";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kBatchNorm: return "batch_norm";
    case OpKind::kDropout: return "dropout";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kL2Normalize: return "l2_normalize";
    case OpKind::kTakeAlongRows: return "take_along_rows";
    case OpKind::kSum: return "sum";
    case OpKind::kReshape: return "reshape";
    case OpKind::kGatherRows: return "gather_rows";
  }
  return "unknown";
}

BatchNormState BatchNormState::create(std::size_t features, bool requires_grad) {
  BatchNormState state;
  state.gamma = Tensor::full({features}, 1.0, requires_grad);
  state.beta = Tensor::zeros({features}, requires_grad);
  state.running_mean.assign(features, 0.0);
  state.running_var.assign(features, 1.0);
  return state;
}

ScopedBackwardFault::ScopedBackwardFault(OpKind kind, double factor) { g_fault = Fault{kind, factor}; }
ScopedBackwardFault::~ScopedBackwardFault() { g_fault.reset(); }

Tensor Tape::record(OpKind kind, std::vector<const Tensor*> inputs, Shape shape,
                    std::vector<double> data,
                    std::function<void(const std::vector<double>&)> backward) {
  const bool tracked =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
  Tensor out(std::move(shape), std::move(data), tracked);
  if (!tracked) return out;
  out.node()->is_leaf = false;
  Op op{kind, {}, out.node(), std::move(backward)};
  op.inputs.reserve(inputs.size());
  for (const Tensor* t : inputs) op.inputs.push_back(t->node());
  ops_.push_back(std::move(op));
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  NodePtr na = a.node(), nb = b.node();
  return record(OpKind::kMatmul, {&a, &b}, {m, n}, std::move(out),
                [na, nb, m, k, n](const std::vector<double>& g) {
                  if (double* ga = grad_of(na)) {
                    const double* pb = nb->data.data();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb[p * n + j];
                        ga[i * k + p] += acc;
                      }
                  }
                  if (double* gb = grad_of(nb)) {
                    const double* pa = na->data.data();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const double av = pa[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                      }
                  }
                });
}

Tensor Tape::transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.at(i, j);
  NodePtr na = a.node();
  return record(OpKind::kTranspose, {&a}, {n, m}, std::move(out),
                [na, m, n](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  NodePtr na = a.node(), nb = b.node();
  return record(OpKind::kAdd, {&a, &b}, a.shape(), std::move(out),
                [na, nb](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  if (double* gb = grad_of(nb))
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  NodePtr na = a.node(), nb = b.node();
  return record(OpKind::kSub, {&a, &b}, a.shape(), std::move(out),
                [na, nb](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  if (double* gb = grad_of(nb))
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  NodePtr na = a.node(), nb = b.node();
  return record(OpKind::kMul, {&a, &b}, a.shape(), std::move(out),
                [na, nb](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * nb->data[i];
                  if (double* gb = grad_of(nb))
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * na->data[i];
                });
}

Tensor Tape::add_row(const Tensor& a, const Tensor& row) {
  const std::size_t m = a.rows(), n = a.cols();
  if (row.numel() != n) {
    throw DimensionError("add_row: row " + shape_to_string(row.shape()) + " does not broadcast over " +
                         shape_to_string(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row.data()[j];
  NodePtr na = a.node(), nr = row.node();
  return record(OpKind::kAddRow, {&a, &row}, a.shape(), std::move(out),
                [na, nr, m, n](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  if (double* gr = grad_of(nr))
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
                });
}

Tensor Tape::scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  NodePtr na = a.node();
  return record(OpKind::kScale, {&a}, a.shape(), std::move(out),
                [na, factor](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                });
}

Tensor Tape::gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(a.data()[i]);
  NodePtr na = a.node();
  return record(OpKind::kGelu, {&a}, a.shape(), std::move(out), [na](const std::vector<double>& g) {
    if (double* ga = grad_of(na))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_slope(na->data[i]);
  });
}

Tensor Tape::relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], 0.0);
  NodePtr na = a.node();
  return record(OpKind::kRelu, {&a}, a.shape(), std::move(out), [na](const std::vector<double>& g) {
    if (double* ga = grad_of(na))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (na->data[i] > 0.0) ga[i] += g[i];
  });
}

Tensor Tape::softplus(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_value(a.data()[i]);
  NodePtr na = a.node();
  return record(OpKind::kSoftplus, {&a}, a.shape(), std::move(out),
                [na](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < g.size(); ++i)
                      ga[i] += g[i] * sigmoid_value(na->data[i]);
                });
}

Tensor Tape::sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(a.data()[i]);
  auto y = std::make_shared<std::vector<double>>(out);
  NodePtr na = a.node();
  return record(OpKind::kSigmoid, {&a}, a.shape(), std::move(out),
                [na, y](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < g.size(); ++i)
                      ga[i] += g[i] * (*y)[i] * (1.0 - (*y)[i]);
                });
}

Tensor Tape::softmax_rows(const Tensor& a, std::span<const bool> key_valid) {
  const std::size_t m = a.rows(), n = a.cols();
  if (!key_valid.empty() && key_valid.size() != n) {
    throw DimensionError("softmax_rows: mask of length " + std::to_string(key_valid.size()) +
                         " for rows of width " + std::to_string(n));
  }
  auto valid = [&](std::size_t j) { return key_valid.empty() || key_valid[j]; };
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.data().data() + i * n;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j)
      if (valid(j)) mx = std::max(mx, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!valid(j)) continue;
      out[i * n + j] = std::exp(x[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  NodePtr na = a.node();
  return record(OpKind::kSoftmax, {&a}, a.shape(), std::move(out),
                [na, y, m, n](const std::vector<double>& g) {
                  double* ga = grad_of(na);
                  if (!ga) return;
                  for (std::size_t i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * (*y)[i * n + j];
                    for (std::size_t j = 0; j < n; ++j)
                      ga[i * n + j] += (*y)[i * n + j] * (g[i * n + j] - dot);
                  }
                });
}

Tensor Tape::log_softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto probs = std::make_shared<std::vector<double>>(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.data().data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(x[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = x[j] - lse;
      (*probs)[i * n + j] = std::exp(out[i * n + j]);
    }
  }
  NodePtr na = a.node();
  return record(OpKind::kLogSoftmax, {&a}, a.shape(), std::move(out),
                [na, probs, m, n](const std::vector<double>& g) {
                  double* ga = grad_of(na);
                  if (!ga) return;
                  for (std::size_t i = 0; i < m; ++i) {
                    double total = 0.0;
                    for (std::size_t j = 0; j < n; ++j) total += g[i * n + j];
                    for (std::size_t j = 0; j < n; ++j)
                      ga[i * n + j] += g[i * n + j] - (*probs)[i * n + j] * total;
                  }
                });
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (n < 2) throw DimensionError("layer_norm: normalized extent must be >= 2");
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: affine parameters " + shape_to_string(gain.shape()) + "/" +
                         shape_to_string(bias.shape()) + " for rows of width " + std::to_string(n));
  }
  std::vector<double> out(m * n);
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * inv;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  NodePtr nx = x.node(), ng = gain.node(), nb = bias.node();
  return record(OpKind::kLayerNorm, {&x, &gain, &bias}, x.shape(), std::move(out),
                [nx, ng, nb, xhat, inv_std, m, n](const std::vector<double>& g) {
                  if (double* gg = grad_of(ng))
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * (*xhat)[i * n + j];
                  if (double* gb = grad_of(nb))
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                  double* gx = grad_of(nx);
                  if (!gx) return;
                  const double dn = static_cast<double>(n);
                  std::vector<double> dxhat(n);
                  for (std::size_t i = 0; i < m; ++i) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      dxhat[j] = g[i * n + j] * ng->data[j];
                      sum_d += dxhat[j];
                      sum_dx += dxhat[j] * (*xhat)[i * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j)
                      gx[i * n + j] += (*inv_std)[i] / dn *
                                       (dn * dxhat[j] - sum_d - (*xhat)[i * n + j] * sum_dx);
                  }
                });
}

Tensor Tape::batch_norm(const Tensor& x, BatchNormState& state, Mode mode) {
  const std::size_t m = x.rows(), n = x.cols();
  if (state.gamma.numel() != n || state.beta.numel() != n || state.running_mean.size() != n) {
    throw DimensionError("batch_norm: state has " + std::to_string(state.gamma.numel()) +
                         " features, input " + shape_to_string(x.shape()));
  }
  if (mode == Mode::kTrain && m < 2) {
    throw std::invalid_argument("batch_norm: train mode needs a batch of at least 2 rows");
  }
  std::vector<double> mean(n, 0.0), inv(n, 0.0);
  if (mode == Mode::kTrain) {
    std::vector<double> var(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) mean[j] += x.at(i, j);
    for (auto& v : mean) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) var[j] += (x.at(i, j) - mean[j]) * (x.at(i, j) - mean[j]);
    for (std::size_t j = 0; j < n; ++j) {
      const double biased = var[j] / static_cast<double>(m);
      const double unbiased = var[j] / static_cast<double>(m - 1);
      inv[j] = 1.0 / std::sqrt(biased + state.eps);
      state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean[j];
      state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      mean[j] = state.running_mean[j];
      inv[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
    }
  }
  std::vector<double> out(m * n);
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (x.at(i, j) - mean[j]) * inv[j];
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * state.gamma.data()[j] + state.beta.data()[j];
    }
  NodePtr nx = x.node(), ng = state.gamma.node(), nb = state.beta.node();
  const bool batch_stats = mode == Mode::kTrain;
  return record(OpKind::kBatchNorm, {&x, &state.gamma, &state.beta}, x.shape(), std::move(out),
                [nx, ng, nb, xhat, inv, m, n, batch_stats](const std::vector<double>& g) {
                  if (double* gg = grad_of(ng))
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * (*xhat)[i * n + j];
                  if (double* gb = grad_of(nb))
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                  double* gx = grad_of(nx);
                  if (!gx) return;
                  const double dm = static_cast<double>(m);
                  for (std::size_t j = 0; j < n; ++j) {
                    if (!batch_stats) {
                      for (std::size_t i = 0; i < m; ++i) gx[i * n + j] += g[i * n + j] * ng->data[j] * inv[j];
                      continue;
                    }
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                      const double d = g[i * n + j] * ng->data[j];
                      sum_d += d;
                      sum_dx += d * (*xhat)[i * n + j];
                    }
                    for (std::size_t i = 0; i < m; ++i) {
                      const double d = g[i * n + j] * ng->data[j];
                      gx[i * n + j] += inv[j] / dm * (dm * d - sum_d - (*xhat)[i * n + j] * sum_dx);
                    }
                  }
                });
}

Tensor Tape::dropout(const Tensor& x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = x.data()[i] * (*mask)[i];
  }
  NodePtr nx = x.node();
  return record(OpKind::kDropout, {&x}, x.shape(), std::move(out),
                [nx, mask](const std::vector<double>& g) {
                  if (double* gx = grad_of(nx))
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
                });
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t total_rows = 0;
  std::vector<const Tensor*> inputs;
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: width mismatch " + shape_to_string(parts.front().shape()) +
                           " vs " + shape_to_string(p.shape()));
    }
    offsets.push_back(total_rows * n);
    total_rows += p.rows();
    inputs.push_back(&p);
    nodes.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(total_rows * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return record(OpKind::kConcatRows, inputs, {total_rows, n}, std::move(out),
                [nodes, offsets](const std::vector<double>& g) {
                  for (std::size_t k = 0; k < nodes.size(); ++k)
                    if (double* gp = grad_of(nodes[k]))
                      for (std::size_t i = 0; i < nodes[k]->data.size(); ++i) gp[i] += g[offsets[k] + i];
                });
}

Tensor Tape::slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  const std::size_t n = a.cols();
  if (begin + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_to_string(a.shape()));
  }
  std::vector<double> out(a.data().begin() + begin * n, a.data().begin() + (begin + count) * n);
  NodePtr na = a.node();
  return record(OpKind::kSliceRows, {&a}, {count, n}, std::move(out),
                [na, begin, n](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
                });
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t total_cols = 0;
  std::vector<const Tensor*> inputs;
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> col_offsets, widths;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: height mismatch " + shape_to_string(parts.front().shape()) +
                           " vs " + shape_to_string(p.shape()));
    }
    col_offsets.push_back(total_cols);
    widths.push_back(p.cols());
    total_cols += p.cols();
    inputs.push_back(&p);
    nodes.push_back(p.node());
  }
  std::vector<double> out(m * total_cols);
  for (std::size_t k = 0; k < parts.size(); ++k)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j)
        out[i * total_cols + col_offsets[k] + j] = parts[k].at(i, j);
  return record(OpKind::kConcatCols, inputs, {m, total_cols}, std::move(out),
                [nodes, col_offsets, widths, m, total_cols](const std::vector<double>& g) {
                  for (std::size_t k = 0; k < nodes.size(); ++k)
                    if (double* gp = grad_of(nodes[k]))
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                          gp[i * widths[k] + j] += g[i * total_cols + col_offsets[k] + j];
                });
}

Tensor Tape::slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  const std::size_t m = a.rows(), n = a.cols();
  if (begin + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_to_string(a.shape()));
  }
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.at(i, begin + j);
  NodePtr na = a.node();
  return record(OpKind::kSliceCols, {&a}, {m, count}, std::move(out),
                [na, begin, count, m, n](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += g[i * count + j];
                });
}

Tensor Tape::l2_normalize_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto norms = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += a.at(i, j) * a.at(i, j);
    const double norm = std::sqrt(sq);
    if (norm == 0.0) {
      throw std::domain_error("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    }
    (*norms)[i] = norm;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, j) / norm;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  NodePtr na = a.node();
  return record(OpKind::kL2Normalize, {&a}, a.shape(), std::move(out),
                [na, y, norms, m, n](const std::vector<double>& g) {
                  double* ga = grad_of(na);
                  if (!ga) return;
                  for (std::size_t i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * (*y)[i * n + j];
                    for (std::size_t j = 0; j < n; ++j)
                      ga[i * n + j] += (g[i * n + j] - (*y)[i * n + j] * dot) / (*norms)[i];
                  }
                });
}

Tensor Tape::take_along_rows(const Tensor& a, std::span<const std::size_t> cols) {
  const std::size_t m = a.rows(), n = a.cols();
  if (cols.size() != m) {
    throw DimensionError("take_along_rows: " + std::to_string(cols.size()) + " indices for " +
                         std::to_string(m) + " rows");
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] >= n) throw DimensionError("take_along_rows: column index out of range");
    out[i] = a.at(i, idx[i]);
  }
  NodePtr na = a.node();
  return record(OpKind::kTakeAlongRows, {&a}, {m}, std::move(out),
                [na, idx, n](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < idx.size(); ++i) ga[i * n + idx[i]] += g[i];
                });
}

Tensor Tape::gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  const std::size_t n = table.cols(), vocab = table.rows();
  std::vector<std::size_t> idx;
  idx.reserve(ids.size());
  std::vector<double> out;
  out.reserve(ids.size() * n);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DimensionError("gather_rows: id " + std::to_string(id) + " outside table " +
                           shape_to_string(table.shape()));
    }
    idx.push_back(static_cast<std::size_t>(id));
    auto row = table.data().subspan(idx.back() * n, n);
    out.insert(out.end(), row.begin(), row.end());
  }
  NodePtr nt = table.node();
  return record(OpKind::kGatherRows, {&table}, {idx.size(), n}, std::move(out),
                [nt, idx, n](const std::vector<double>& g) {
                  if (double* gt = grad_of(nt))
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      for (std::size_t j = 0; j < n; ++j) gt[idx[i] * n + j] += g[i * n + j];
                });
}

Tensor Tape::sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  NodePtr na = a.node();
  return record(OpKind::kSum, {&a}, {1}, {total}, [na](const std::vector<double>& g) {
    if (double* ga = grad_of(na))
      for (std::size_t i = 0; i < na->data.size(); ++i) ga[i] += g[0];
  });
}

Tensor Tape::mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_to_string(a.shape()) + " to " + shape_to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  NodePtr na = a.node();
  return record(OpKind::kReshape, {&a}, std::move(shape), std::move(out),
                [na](const std::vector<double>& g) {
                  if (double* ga = grad_of(na))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                });
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    ops_.clear();
    return;
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    const auto& out = it->output;
    if (out->grad.empty()) continue;
    if (g_fault && g_fault->kind == it->kind) {
      std::vector<double> scaled(out->grad);
      for (auto& v : scaled) v *= g_fault->factor;
      it->backward(scaled);
    } else {
      it->backward(out->grad);
    }
  }
  for (auto& op : ops_) {
    op.output->grad.clear();
    op.output->grad.shrink_to_fit();
  }
  ops_.clear();
}

}  // namespace d2cse
