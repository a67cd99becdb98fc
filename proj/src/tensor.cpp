#include "multipar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "multipar/kernels.hpp"

namespace multipar {

namespace {

thread_local Tape* t_active_tape = nullptr;

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> data,
                                      bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return impl;
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     shape_string(t.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!t_active_tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Accumulate src into the store slot of `to` if it participates in grad flow.
void flow(GradStore& gs, const Tensor& to,
          const std::function<void(std::vector<double>&)>& accumulate) {
  if (!to.requires_grad()) return;
  accumulate(gs.slot(to.impl()));
}

}  // namespace

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, 0.0),
                          requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, value),
                          requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("from_data: " + shape_string(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  return Tensor(make_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double bound, std::mt19937_64& rng,
                       bool requires_grad) {
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : data) v = dist(rng);
  return Tensor(make_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::randn(Shape shape, double stddev, std::mt19937_64& rng,
                     bool requires_grad) {
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : data) v = dist(rng);
  return Tensor(make_impl(std::move(shape), std::move(data), requires_grad));
}

double Tensor::value() const {
  if (size() != 1)
    throw ShapeError("value(): tensor " + shape_string(shape()) +
                     " is not a scalar");
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != rank())
    throw ShapeError("at(): index rank mismatch for " + shape_string(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= impl_->shape[axis])
      throw ShapeError("at(): index out of range for " +
                       shape_string(shape()));
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != size())
    throw ShapeError("accumulate_grad: size mismatch for " +
                     shape_string(shape()));
  if (impl_->grad.empty()) impl_->grad.assign(size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) impl_->grad[i] += g[i];
}

// ---- GradStore / Tape -----------------------------------------------------

std::vector<double>& GradStore::slot(const TensorImpl* impl) {
  auto it = slots_.find(impl);
  if (it == slots_.end())
    it = slots_.emplace(impl, std::vector<double>(impl->data.size(), 0.0))
             .first;
  return it->second;
}

const std::vector<double>* GradStore::find(const TensorImpl* impl) const {
  auto it = slots_.find(impl);
  return it == slots_.end() ? nullptr : &it->second;
}

void GradStore::for_each(
    const std::function<void(const TensorImpl*, const std::vector<double>&)>&
        fn) const {
  for (const auto& [impl, buf] : slots_) fn(impl, buf);
}

void Tape::record(BackwardFn fn, std::shared_ptr<TensorImpl> output) {
  nodes_.push_back(Node{std::move(fn), std::move(output)});
}

GradStore Tape::gradients(const Tensor& loss) const {
  if (!loss.defined() || loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar tensor");
  GradStore store;
  store.slot(loss.impl())[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward(store);
  return store;
}

void Tape::backward(const Tensor& loss) const {
  GradStore store = gradients(loss);
  // Leaves appear only as closure inputs, so walk every slot in the store.
  store.for_each([](const TensorImpl* impl, const std::vector<double>& buf) {
    if (!impl->requires_grad) return;
    auto* target = const_cast<TensorImpl*>(impl);
    if (target->grad.empty()) target->grad.assign(target->data.size(), 0.0);
    for (std::size_t i = 0; i < buf.size(); ++i) target->grad[i] += buf[i];
  });
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) {
  t_active_tape = &tape;
}

TapeScope::~TapeScope() { t_active_tape = previous_; }

Tape* active_tape() { return t_active_tape; }

void check_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v))
      throw NumericalError(std::string(op) +
                           ": produced a non-finite value (overflow or NaN)");
  }
}

// ---- op helpers ------------------------------------------------------------

namespace {

// Finalizes an op: finiteness check, grad participation, tape recording.
Tensor finish(const char* op, Tensor out,
              std::initializer_list<const Tensor*> inputs,
              Tape::BackwardFn backward) {
  check_finite(op, out.data());
  if (should_record(inputs)) {
    out.set_requires_grad(true);
    t_active_tape->record(std::move(backward), out.impl_ptr());
  }
  return out;
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("add", result, {&a, &b}, [a, b, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (std::size_t i = 0; i < g->size(); ++i) da[i] += (*g)[i];
    });
    flow(gs, b, [&](std::vector<double>& db) {
      for (std::size_t i = 0; i < g->size(); ++i) db[i] += (*g)[i];
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("sub", result, {&a, &b}, [a, b, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (std::size_t i = 0; i < g->size(); ++i) da[i] += (*g)[i];
    });
    flow(gs, b, [&](std::vector<double>& db) {
      for (std::size_t i = 0; i < g->size(); ++i) db[i] -= (*g)[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("mul", result, {&a, &b}, [a, b, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (std::size_t i = 0; i < g->size(); ++i) da[i] += (*g)[i] * b.data()[i];
    });
    flow(gs, b, [&](std::vector<double>& db) {
      for (std::size_t i = 0; i < g->size(); ++i) db[i] += (*g)[i] * a.data()[i];
    });
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("scale", result, {&a}, [a, s, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (std::size_t i = 0; i < g->size(); ++i) da[i] += (*g)[i] * s;
    });
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("add_scalar", result, {&a}, [a, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (std::size_t i = 0; i < g->size(); ++i) da[i] += (*g)[i];
    });
  });
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  std::vector<double> out(m * p);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, n, p);
  Tensor result = Tensor::from_data({m, p}, std::move(out));
  return finish("matmul", result, {&a, &b},
                [a, b, m, n, p, o = result.impl()](GradStore& gs) {
                  const auto* g = gs.find(o);
                  if (!g) return;
                  flow(gs, a, [&](std::vector<double>& da) {
                    kernels::matmul_nt_acc(g->data(), b.data().data(),
                                           da.data(), m, p, n);
                  });
                  flow(gs, b, [&](std::vector<double>& db) {
                    kernels::matmul_tn_acc(a.data().data(), g->data(),
                                           db.data(), m, n, p);
                  });
                });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  Tensor result = Tensor::from_data({c, r}, std::move(out));
  return finish("transpose", result, {&a},
                [a, r, c, o = result.impl()](GradStore& gs) {
                  const auto* g = gs.find(o);
                  if (!g) return;
                  flow(gs, a, [&](std::vector<double>& da) {
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j)
                        da[i * c + j] += (*g)[j * r + i];
                  });
                });
}

Tensor add_rows(const Tensor& m, const Tensor& row) {
  require_rank2("add_rows", m);
  if (row.rank() != 1 || row.dim(0) != m.dim(1))
    throw ShapeError("add_rows: row " + shape_string(row.shape()) +
                     " does not match matrix " + shape_string(m.shape()));
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] = m.data()[i * c + j] + row.data()[j];
  Tensor result = Tensor::from_data(m.shape(), std::move(out));
  return finish("add_rows", result, {&m, &row},
                [m, row, r, c, o = result.impl()](GradStore& gs) {
                  const auto* g = gs.find(o);
                  if (!g) return;
                  flow(gs, m, [&](std::vector<double>& dm) {
                    for (std::size_t i = 0; i < g->size(); ++i)
                      dm[i] += (*g)[i];
                  });
                  flow(gs, row, [&](std::vector<double>& dr) {
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j)
                        dr[j] += (*g)[i * c + j];
                  });
                });
}

// ---- shape ops ---------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    require_rank2("concat_cols", t);
    if (t.dim(0) != r)
      throw ShapeError("concat_cols: row mismatch " +
                       shape_string(parts[0].shape()) + " vs " +
                       shape_string(t.shape()));
    total += t.dim(1);
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (const Tensor& t : parts) {
    const std::size_t c = t.dim(1);
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(t.data().data() + i * c, c, out.data() + i * total + offset);
    offset += c;
  }
  Tensor result = Tensor::from_data({r, total}, std::move(out));

  bool any_grad = false;
  for (const Tensor& t : parts) any_grad |= t.requires_grad();
  if (t_active_tape && any_grad) {
    result.set_requires_grad(true);
    auto captured = parts;
    t_active_tape->record(
        [captured, r, total, o = result.impl()](GradStore& gs) {
          const auto* g = gs.find(o);
          if (!g) return;
          std::size_t off = 0;
          for (const Tensor& t : captured) {
            const std::size_t c = t.dim(1);
            flow(gs, t, [&](std::vector<double>& dt) {
              for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                  dt[i * c + j] += (*g)[i * total + off + j];
            });
            off += c;
          }
        },
        result.impl_ptr());
  }
  check_finite("concat_cols", result.data());
  return result;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2("slice_cols", a);
  if (begin >= end || end > a.dim(1))
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for " +
                     shape_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1), w = end - begin;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(a.data().data() + i * c + begin, w, out.data() + i * w);
  Tensor result = Tensor::from_data({r, w}, std::move(out));
  return finish("slice_cols", result, {&a},
                [a, begin, r, c, w, o = result.impl()](GradStore& gs) {
                  const auto* g = gs.find(o);
                  if (!g) return;
                  flow(gs, a, [&](std::vector<double>& da) {
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < w; ++j)
                        da[i * c + begin + j] += (*g)[i * w + j];
                  });
                });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2("slice_rows", a);
  if (begin >= end || end > a.dim(0))
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for " +
                     shape_string(a.shape()));
  const std::size_t c = a.dim(1), h = end - begin;
  std::vector<double> out(h * c);
  std::copy_n(a.data().data() + begin * c, h * c, out.data());
  Tensor result = Tensor::from_data({h, c}, std::move(out));
  return finish("slice_rows", result, {&a},
                [a, begin, c, h, o = result.impl()](GradStore& gs) {
                  const auto* g = gs.find(o);
                  if (!g) return;
                  flow(gs, a, [&](std::vector<double>& da) {
                    for (std::size_t i = 0; i < h * c; ++i)
                      da[begin * c + i] += (*g)[i];
                  });
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) +
                     " as " + shape_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  Tensor result = Tensor::from_data(std::move(shape), std::move(out));
  return finish("reshape", result, {&a}, [a, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (std::size_t i = 0; i < g->size(); ++i) da[i] += (*g)[i];
    });
  });
}

Tensor index_first(const Tensor& a, std::size_t i) {
  if (a.rank() < 2)
    throw ShapeError("index_first: needs rank >= 2, got " +
                     shape_string(a.shape()));
  if (i >= a.dim(0))
    throw ShapeError("index_first: index " + std::to_string(i) +
                     " out of range for " + shape_string(a.shape()));
  Shape rest(a.shape().begin() + 1, a.shape().end());
  const std::size_t block = shape_numel(rest);
  std::vector<double> out(a.data().begin() + i * block,
                          a.data().begin() + (i + 1) * block);
  Tensor result = Tensor::from_data(std::move(rest), std::move(out));
  return finish("index_first", result, {&a},
                [a, i, block, o = result.impl()](GradStore& gs) {
                  const auto* g = gs.find(o);
                  if (!g) return;
                  flow(gs, a, [&](std::vector<double>& da) {
                    for (std::size_t j = 0; j < block; ++j)
                      da[i * block + j] += (*g)[j];
                  });
                });
}

// ---- nonlinearities ------------------------------------------------------

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("tanh", result, {&a}, [a, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double y = o->data[i];
        da[i] += (*g)[i] * (1.0 - y * y);
      }
    });
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("sigmoid", result, {&a}, [a, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double y = o->data[i];
        da[i] += (*g)[i] * y * (1.0 - y);
      }
    });
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("relu", result, {&a}, [a, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (std::size_t i = 0; i < g->size(); ++i)
        if (a.data()[i] > 0.0) da[i] += (*g)[i];
    });
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("log", result, {&a}, [a, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (std::size_t i = 0; i < g->size(); ++i)
        da[i] += (*g)[i] / a.data()[i];
    });
  });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor result = Tensor::scalar(total);
  return finish("sum", result, {&a}, [a, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (double& v : da) v += (*g)[0];
    });
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  double total = 0.0;
  for (double v : a.data()) total += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor result = Tensor::scalar(total * inv);
  return finish("mean", result, {&a}, [a, inv, o = result.impl()](GradStore& gs) {
    const auto* g = gs.find(o);
    if (!g) return;
    flow(gs, a, [&](std::vector<double>& da) {
      for (double& v : da) v += (*g)[0] * inv;
    });
  });
}

// ---- layer norm ------------------------------------------------------------

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  require_rank2("layer_norm_rows", x);
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != c || bias.rank() != 1 ||
      bias.dim(0) != c)
    throw ShapeError("layer_norm_rows: gain/bias must be width " +
                     std::to_string(c));
  auto xhat = std::make_shared<std::vector<double>>(r * c);
  auto inv_sd = std::make_shared<std::vector<double>>(r);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (row[j] - mu) * inv;
      (*xhat)[i * c + j] = xh;
      out[i * c + j] = gain.data()[j] * xh + bias.data()[j];
    }
  }
  Tensor result = Tensor::from_data({r, c}, std::move(out));
  return finish(
      "layer_norm_rows", result, {&x, &gain, &bias},
      [x, gain, bias, xhat, inv_sd, r, c, o = result.impl()](GradStore& gs) {
        const auto* g = gs.find(o);
        if (!g) return;
        flow(gs, gain, [&](std::vector<double>& dg) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              dg[j] += (*g)[i * c + j] * (*xhat)[i * c + j];
        });
        flow(gs, bias, [&](std::vector<double>& db) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) db[j] += (*g)[i * c + j];
        });
        flow(gs, x, [&](std::vector<double>& dx) {
          const double invc = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = (*g)[i * c + j] * gain.data()[j];
              m1 += dxh;
              m2 += dxh * (*xhat)[i * c + j];
            }
            m1 *= invc;
            m2 *= invc;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = (*g)[i * c + j] * gain.data()[j];
              dx[i * c + j] +=
                  (*inv_sd)[i] * (dxh - m1 - (*xhat)[i * c + j] * m2);
            }
          }
        });
      });
}

// ---- softmax ---------------------------------------------------------------

namespace {

Tensor softmax_rows_impl(const Tensor& x, const Tensor* mask) {
  require_rank2("softmax_rows", x);
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<unsigned char> mask_bytes;
  const unsigned char* mask_ptr = nullptr;
  if (mask) {
    require_same_shape("softmax_rows", x, *mask);
    mask_bytes.resize(r * c);
    for (std::size_t i = 0; i < r * c; ++i)
      mask_bytes[i] = mask->data()[i] != 0.0 ? 1 : 0;
    mask_ptr = mask_bytes.data();
  }
  std::vector<double> out(r * c);
  if (!kernels::softmax_rows(x.data().data(), mask_ptr, out.data(), r, c))
    throw ShapeError("softmax_rows: degenerate row with no permitted entry");
  Tensor result = Tensor::from_data({r, c}, std::move(out));
  // Masked entries have output 0, so one formula covers both cases.
  return finish("softmax_rows", result, {&x},
                [x, r, c, o = result.impl()](GradStore& gs) {
                  const auto* g = gs.find(o);
                  if (!g) return;
                  flow(gs, x, [&](std::vector<double>& dx) {
                    for (std::size_t i = 0; i < r; ++i) {
                      const double* a = o->data.data() + i * c;
                      const double* gr = g->data() + i * c;
                      double dot = 0.0;
                      for (std::size_t j = 0; j < c; ++j) dot += gr[j] * a[j];
                      for (std::size_t j = 0; j < c; ++j)
                        dx[i * c + j] += a[j] * (gr[j] - dot);
                    }
                  });
                });
}

}  // namespace

Tensor softmax_rows(const Tensor& x) { return softmax_rows_impl(x, nullptr); }

Tensor softmax_rows(const Tensor& x, const Tensor& mask) {
  return softmax_rows_impl(x, &mask);
}

// ---- dropout ---------------------------------------------------------------

Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0, 1), got " +
                      std::to_string(rate));
  if (rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(a.size());
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = dist(rng) < rate ? 0.0 : keep_scale;
    out[i] = a.data()[i] * (*mask)[i];
  }
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("dropout", result, {&a},
                [a, mask, o = result.impl()](GradStore& gs) {
                  const auto* g = gs.find(o);
                  if (!g) return;
                  flow(gs, a, [&](std::vector<double>& da) {
                    for (std::size_t i = 0; i < g->size(); ++i)
                      da[i] += (*g)[i] * (*mask)[i];
                  });
                });
}

Tensor causal_mask(std::size_t k) {
  std::vector<double> m(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * k + j] = 1.0;
  return Tensor::from_data({k, k}, std::move(m));
}

}  // namespace multipar
