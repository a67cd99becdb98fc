#include "multipar/lstm.hpp"

#include <cmath>

namespace multipar {

namespace {

inline double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Saved activations for one forward pass; owned by the backward closure.
struct LstmTrace {
  std::size_t steps = 0, hidden = 0;
  std::vector<double> gate_i, gate_f, gate_g, gate_o;  // each [k x H]
  std::vector<double> cell;                            // [k x H]
  std::vector<double> cell_tanh;                       // [k x H]
  std::vector<double> hidden_seq;                      // [k x H]
};

}  // namespace

LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim,
                     std::mt19937_64& rng) {
  if (input_dim == 0 || hidden_dim == 0)
    throw ConfigError("lstm dims must be positive");
  const double bound = std::sqrt(1.0 / static_cast<double>(hidden_dim));
  LstmParams p;
  p.w_ih = Tensor::uniform({4 * hidden_dim, input_dim}, bound, rng, true);
  p.w_hh = Tensor::uniform({4 * hidden_dim, hidden_dim}, bound, rng, true);
  p.bias = Tensor::zeros({4 * hidden_dim}, true);
  // Open the forget gate at the start of training.
  for (std::size_t j = 0; j < hidden_dim; ++j)
    p.bias.mutable_data()[hidden_dim + j] = 1.0;
  return p;
}

Tensor lstm_last_hidden(const Tensor& x, const LstmParams& params) {
  if (x.rank() != 2)
    throw ShapeError("lstm: input must be [k x D], got " +
                     shape_string(x.shape()));
  const std::size_t steps = x.dim(0), in_dim = x.dim(1);
  const std::size_t hid = params.hidden_dim();
  if (in_dim != params.input_dim())
    throw ShapeError("lstm: input width " + std::to_string(in_dim) +
                     " does not match w_ih " +
                     shape_string(params.w_ih.shape()));
  if (params.w_hh.dim(0) != 4 * hid || params.bias.dim(0) != 4 * hid ||
      params.w_ih.dim(0) != 4 * hid)
    throw ShapeError("lstm: inconsistent gate packing in parameters");

  auto trace = std::make_shared<LstmTrace>();
  trace->steps = steps;
  trace->hidden = hid;
  trace->gate_i.resize(steps * hid);
  trace->gate_f.resize(steps * hid);
  trace->gate_g.resize(steps * hid);
  trace->gate_o.resize(steps * hid);
  trace->cell.resize(steps * hid);
  trace->cell_tanh.resize(steps * hid);
  trace->hidden_seq.resize(steps * hid);

  const double* w_ih = params.w_ih.data().data();
  const double* w_hh = params.w_hh.data().data();
  const double* bias = params.bias.data().data();

  std::vector<double> pre(4 * hid);
  std::vector<double> h_prev(hid, 0.0), c_prev(hid, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    const double* x_row = x.data().data() + t * in_dim;
    for (std::size_t r = 0; r < 4 * hid; ++r) {
      const double* wi = w_ih + r * in_dim;
      double acc = bias[r];
      for (std::size_t c = 0; c < in_dim; ++c) acc += wi[c] * x_row[c];
      const double* wh = w_hh + r * hid;
      for (std::size_t c = 0; c < hid; ++c) acc += wh[c] * h_prev[c];
      pre[r] = acc;
    }
    for (std::size_t j = 0; j < hid; ++j) {
      const double gi = sigmoid_scalar(pre[j]);
      const double gf = sigmoid_scalar(pre[hid + j]);
      const double gg = std::tanh(pre[2 * hid + j]);
      const double go = sigmoid_scalar(pre[3 * hid + j]);
      const double c_new = gf * c_prev[j] + gi * gg;
      const double tc = std::tanh(c_new);
      trace->gate_i[t * hid + j] = gi;
      trace->gate_f[t * hid + j] = gf;
      trace->gate_g[t * hid + j] = gg;
      trace->gate_o[t * hid + j] = go;
      trace->cell[t * hid + j] = c_new;
      trace->cell_tanh[t * hid + j] = tc;
      trace->hidden_seq[t * hid + j] = go * tc;
      c_prev[j] = c_new;
    }
    std::copy_n(trace->hidden_seq.data() + t * hid, hid, h_prev.data());
  }

  Tensor result = Tensor::from_data(
      {1, hid}, std::vector<double>(trace->hidden_seq.end() - hid,
                                    trace->hidden_seq.end()));
  check_finite("lstm", result.data());

  Tape* tape = active_tape();
  const Tensor wih_t = params.w_ih, whh_t = params.w_hh, bias_t = params.bias;
  if (!tape || !(x.requires_grad() || wih_t.requires_grad() ||
                 whh_t.requires_grad() || bias_t.requires_grad()))
    return result;

  result.set_requires_grad(true);
  tape->record(
      [x, wih_t, whh_t, bias_t, trace, steps, in_dim, hid,
       o = result.impl()](GradStore& gs) {
        const auto* g_out = gs.find(o);
        if (!g_out) return;
        const double* w_ih = wih_t.data().data();
        const double* w_hh = whh_t.data().data();

        std::vector<double>* d_wih =
            wih_t.requires_grad() ? &gs.slot(wih_t.impl()) : nullptr;
        std::vector<double>* d_whh =
            whh_t.requires_grad() ? &gs.slot(whh_t.impl()) : nullptr;
        std::vector<double>* d_bias =
            bias_t.requires_grad() ? &gs.slot(bias_t.impl()) : nullptr;
        std::vector<double>* d_x =
            x.requires_grad() ? &gs.slot(x.impl()) : nullptr;

        std::vector<double> dh(g_out->begin(), g_out->end());
        std::vector<double> dc(hid, 0.0);
        std::vector<double> da(4 * hid);
        for (std::size_t ti = steps; ti-- > 0;) {
          const double* gi = trace->gate_i.data() + ti * hid;
          const double* gf = trace->gate_f.data() + ti * hid;
          const double* gg = trace->gate_g.data() + ti * hid;
          const double* go = trace->gate_o.data() + ti * hid;
          const double* tc = trace->cell_tanh.data() + ti * hid;
          const double* c_prev =
              ti > 0 ? trace->cell.data() + (ti - 1) * hid : nullptr;
          for (std::size_t j = 0; j < hid; ++j) {
            const double d_o = dh[j] * tc[j];
            const double dcj = dc[j] + dh[j] * go[j] * (1.0 - tc[j] * tc[j]);
            const double d_i = dcj * gg[j];
            const double d_g = dcj * gi[j];
            const double d_f = dcj * (c_prev ? c_prev[j] : 0.0);
            da[j] = d_i * gi[j] * (1.0 - gi[j]);
            da[hid + j] = d_f * gf[j] * (1.0 - gf[j]);
            da[2 * hid + j] = d_g * (1.0 - gg[j] * gg[j]);
            da[3 * hid + j] = d_o * go[j] * (1.0 - go[j]);
            dc[j] = dcj * gf[j];
          }
          const double* x_row = x.data().data() + ti * in_dim;
          const double* h_prev =
              ti > 0 ? trace->hidden_seq.data() + (ti - 1) * hid : nullptr;
          if (d_bias)
            for (std::size_t r = 0; r < 4 * hid; ++r) (*d_bias)[r] += da[r];
          if (d_wih)
            for (std::size_t r = 0; r < 4 * hid; ++r) {
              double* row = d_wih->data() + r * in_dim;
              const double dar = da[r];
              for (std::size_t c = 0; c < in_dim; ++c) row[c] += dar * x_row[c];
            }
          if (d_whh && h_prev)
            for (std::size_t r = 0; r < 4 * hid; ++r) {
              double* row = d_whh->data() + r * hid;
              const double dar = da[r];
              for (std::size_t c = 0; c < hid; ++c) row[c] += dar * h_prev[c];
            }
          if (d_x) {
            double* dx_row = d_x->data() + ti * in_dim;
            for (std::size_t r = 0; r < 4 * hid; ++r) {
              const double dar = da[r];
              const double* wi = w_ih + r * in_dim;
              for (std::size_t c = 0; c < in_dim; ++c) dx_row[c] += dar * wi[c];
            }
          }
          // Gradient flowing to h_{t-1} through the recurrence.
          std::fill(dh.begin(), dh.end(), 0.0);
          for (std::size_t r = 0; r < 4 * hid; ++r) {
            const double dar = da[r];
            const double* wh = w_hh + r * hid;
            for (std::size_t c = 0; c < hid; ++c) dh[c] += dar * wh[c];
          }
        }
      },
      result.impl_ptr());
  return result;
}

}  // namespace multipar
