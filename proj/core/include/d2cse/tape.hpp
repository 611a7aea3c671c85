#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "d2cse/rng.hpp"
#include "d2cse/tensor.hpp"

namespace d2cse {

enum class Mode { kTrain, kEval };

enum class OpKind {
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kAddRow,
  kScale,
  kGelu,
  kRelu,
  kSoftplus,
  kSigmoid,
  kSoftmax,
  kLogSoftmax,
  kLayerNorm,
  kBatchNorm,
  kDropout,
  kConcatRows,
  kSliceRows,
  kConcatCols,
  kSliceCols,
  kL2Normalize,
  kTakeAlongRows,
  kSum,
  kReshape,
  kGatherRows,
};

const char* op_name(OpKind kind);

/// Affine parameters and running statistics for one batch-norm layer over
/// the columns of a [batch x features] input.
struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState create(std::size_t features, bool requires_grad = true);
};

/// Records differentiable ops in execution order and replays their
/// backward rules in reverse. An op is recorded only when at least one of
/// its inputs requires grad; the others run as plain forward computation.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  /// a[m x n] + row[n], broadcast over rows.
  Tensor add_row(const Tensor& a, const Tensor& row);
  Tensor scale(const Tensor& a, double factor);
  Tensor gelu(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor softplus(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  /// Row-wise softmax. Columns with key_valid[c] == false get probability 0.
  Tensor softmax_rows(const Tensor& a, std::span<const bool> key_valid = {});
  Tensor log_softmax_rows(const Tensor& a);
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
  Tensor batch_norm(const Tensor& x, BatchNormState& state, Mode mode);
  Tensor dropout(const Tensor& x, double rate, Rng& rng);
  Tensor concat_rows(std::span<const Tensor> parts);
  Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
  Tensor l2_normalize_rows(const Tensor& a);
  /// out[i] = a[i, cols[i]], shape {rows}.
  Tensor take_along_rows(const Tensor& a, std::span<const std::size_t> cols);
  /// out[i] = table[ids[i]], shape {ids.size() x cols}.
  Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  Tensor reshape(const Tensor& a, Shape shape);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once,
  /// newest first. Leaf gradients accumulate; the tape is cleared after.
  void backward(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

 private:
  struct Op {
    OpKind kind;
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    std::function<void(const std::vector<double>& out_grad)> backward;
  };

  Tensor record(OpKind kind, std::vector<const Tensor*> inputs, Shape shape,
                std::vector<double> data,
                std::function<void(const std::vector<double>&)> backward);

  std::vector<Op> ops_;
};

/// Test hook: while alive, scales every backward contribution of the given
/// op kind by `factor` on the current thread. Used to prove that gradient
/// checks detect a broken rule.
class ScopedBackwardFault {
 public:
  ScopedBackwardFault(OpKind kind, double factor);
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;
};

}  // namespace d2cse
