#include "multipar/encoder.hpp"

#include <cmath>

#include "multipar/kernels.hpp"

namespace multipar {

EncoderParams init_encoder(std::size_t w, std::size_t f, std::size_t d_x,
                           std::mt19937_64& rng) {
  if (w % 2 == 0)
    throw ConfigError("encoder kernel width must be odd, got " +
                      std::to_string(w));
  const double bound = std::sqrt(1.0 / static_cast<double>(w * f));
  EncoderParams p;
  p.conv_kernel = Tensor::uniform({w, f, d_x}, bound, rng, true);
  p.conv_bias = Tensor::zeros({d_x}, true);
  return p;
}

Tensor conv1d_temporal(const Tensor& x, const EncoderParams& params) {
  if (x.rank() != 2)
    throw ShapeError("conv1d_temporal: input must be [k x F], got " +
                     shape_string(x.shape()));
  const std::size_t k = x.dim(0), f = x.dim(1);
  const std::size_t w = params.width(), d = params.output_dim();
  if (f != params.input_dim())
    throw ShapeError("conv1d_temporal: input width " + std::to_string(f) +
                     " does not match kernel " +
                     shape_string(params.conv_kernel.shape()));
  if (w % 2 == 0)
    throw ConfigError("conv1d_temporal: kernel width must be odd");

  std::vector<double> out(k * d);
  kernels::conv1d(x.data().data(), params.conv_kernel.data().data(),
                  params.conv_bias.data().data(), out.data(), k, f, d, w);
  Tensor result = Tensor::from_data({k, d}, std::move(out));

  check_finite("conv1d_temporal", result.data());
  Tape* tape = active_tape();
  const Tensor kernel = params.conv_kernel;
  const Tensor bias = params.conv_bias;
  if (tape &&
      (x.requires_grad() || kernel.requires_grad() || bias.requires_grad())) {
    result.set_requires_grad(true);
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(w / 2);
    tape->record(
        [x, kernel, bias, k, f, d, w, half, o = result.impl()](GradStore& gs) {
          const auto* g = gs.find(o);
          if (!g) return;
          if (bias.requires_grad()) {
            auto& db = gs.slot(bias.impl());
            for (std::size_t t = 0; t < k; ++t)
              for (std::size_t o_i = 0; o_i < d; ++o_i)
                db[o_i] += (*g)[t * d + o_i];
          }
          if (kernel.requires_grad()) {
            auto& dk = gs.slot(kernel.impl());
            for (std::size_t t = 0; t < k; ++t) {
              const double* g_row = g->data() + t * d;
              for (std::size_t j = 0; j < w; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(k)) continue;
                const double* x_row =
                    x.data().data() + static_cast<std::size_t>(src) * f;
                double* dk_plane = dk.data() + j * f * d;
                for (std::size_t c = 0; c < f; ++c) {
                  const double xv = x_row[c];
                  double* dk_row = dk_plane + c * d;
                  for (std::size_t o_i = 0; o_i < d; ++o_i)
                    dk_row[o_i] += xv * g_row[o_i];
                }
              }
            }
          }
          if (x.requires_grad()) {
            auto& dx = gs.slot(x.impl());
            for (std::size_t t = 0; t < k; ++t) {
              const double* g_row = g->data() + t * d;
              for (std::size_t j = 0; j < w; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(k)) continue;
                double* dx_row = dx.data() + static_cast<std::size_t>(src) * f;
                const double* k_plane = kernel.data().data() + j * f * d;
                for (std::size_t c = 0; c < f; ++c) {
                  const double* k_row = k_plane + c * d;
                  double acc = 0.0;
                  for (std::size_t o_i = 0; o_i < d; ++o_i)
                    acc += k_row[o_i] * g_row[o_i];
                  dx_row[c] += acc;
                }
              }
            }
          }
        },
        result.impl_ptr());
  }
  return result;
}

Tensor positional_encoding(std::size_t k, std::size_t d_x) {
  if (d_x % 2 != 0)
    throw ConfigError("positional_encoding: d_x must be even, got " +
                      std::to_string(d_x));
  std::vector<double> pe(k * d_x);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t i = 0; 2 * i < d_x; ++i) {
      const double rate =
          std::pow(10000.0, -(2.0 * static_cast<double>(i)) /
                                static_cast<double>(d_x));
      const double angle = static_cast<double>(t) * rate;
      pe[t * d_x + 2 * i] = std::sin(angle);
      pe[t * d_x + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_data({k, d_x}, std::move(pe));
}

EncodedSequence encode(const Tensor& x, const EncoderParams& params) {
  Tensor conv = conv1d_temporal(x, params);
  Tensor pe = positional_encoding(conv.dim(0), conv.dim(1));
  return EncodedSequence{add(conv, pe)};
}

}  // namespace multipar
