#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "multipar/error.hpp"

namespace multipar {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major tensor of 64-bit floats. Values are immutable once an op
// has produced them; only the grad accumulator mutates afterwards.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Entries uniform in [-bound, bound].
  static Tensor uniform(Shape shape, double bound, std::mt19937_64& rng,
                        bool requires_grad = false);
  static Tensor randn(Shape shape, double stddev, std::mt19937_64& rng,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // For parameter initialization and optimizer updates only.
  std::span<double> mutable_data() { return impl_->data; }

  double value() const;  // scalar tensors only
  double at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const;
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Per-backward-pass gradient buffers keyed by tensor identity. Keeping them
// outside TensorImpl lets independent tapes run on parallel workers against
// shared (read-only) parameters.
class GradStore {
 public:
  // Zero-initialized buffer of numel(impl) doubles, created on first use.
  std::vector<double>& slot(const TensorImpl* impl);
  const std::vector<double>* find(const TensorImpl* impl) const;
  void for_each(const std::function<void(const TensorImpl*,
                                         const std::vector<double>&)>& fn)
      const;

 private:
  std::unordered_map<const TensorImpl*, std::vector<double>> slots_;
};

// Reverse-mode tape. Ops append their backward rule as they execute, so the
// record order is a topological order and one reverse sweep visits every
// node exactly once.
class Tape {
 public:
  using BackwardFn = std::function<void(GradStore&)>;

  struct Node {
    BackwardFn backward;
    std::shared_ptr<TensorImpl> output;  // keeps intermediates alive
  };

  void record(BackwardFn fn, std::shared_ptr<TensorImpl> output);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
  // stay in the returned store; tensors are untouched.
  GradStore gradients(const Tensor& loss) const;

  // Convenience form: additionally accumulates into the .grad of every
  // requires_grad tensor reached, so repeated calls add up.
  void backward(const Tensor& loss) const;

 private:
  std::vector<Node> nodes_;
};

// RAII activation of a tape on the current thread. Ops record only while a
// tape is active and some input requires grad.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Throws NumericalError when the span holds a NaN or infinity.
void check_finite(const char* op, std::span<const double> values);

// ---- differentiable ops -------------------------------------------------
// Elementwise ops require identical shapes; the only broadcasting anywhere
// is scalar-with-tensor (scale / add_scalar) and the explicit add_rows.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Adds a length-c row vector to every row of an [r x c] matrix.
Tensor add_rows(const Tensor& m, const Tensor& row);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);
// a[i, ...] for a rank >= 2 tensor; result drops the first axis.
Tensor index_first(const Tensor& a, std::size_t i);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);

Tensor sum(const Tensor& a);   // -> scalar, shape {1}
Tensor mean(const Tensor& a);  // -> scalar, shape {1}

// Feature-axis layer norm with learnable gain/bias of width c.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

// Row-stochastic softmax. mask, when defined, is an [r x c] tensor of 0/1;
// masked entries come out exactly 0. A row with no permitted entry is a
// degenerate-row error.
Tensor softmax_rows(const Tensor& x);
Tensor softmax_rows(const Tensor& x, const Tensor& mask);

// Inverted dropout; rate 0 is the identity. Scales kept entries by
// 1/(1-rate) so eval needs no rescaling.
Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng);

// Lower-triangular permission mask: mask[i][j] = 1 iff j <= i.
Tensor causal_mask(std::size_t k);

}  // namespace multipar
