#pragma once

#include <random>

#include "multipar/tensor.hpp"

namespace multipar {

// Temporal encoder parameters: a width-w 1-D convolution mapping F input
// features to d_x encoded features. w must be odd so that zero "same"
// padding preserves the sequence length.
struct EncoderParams {
  Tensor conv_kernel;  // [w x F x d_x]
  Tensor conv_bias;    // [d_x]

  std::size_t width() const { return conv_kernel.dim(0); }
  std::size_t input_dim() const { return conv_kernel.dim(1); }
  std::size_t output_dim() const { return conv_kernel.dim(2); }
};

// Fan-in scaled init: kernel uniform in +/- sqrt(1/(w*F)), bias zero.
EncoderParams init_encoder(std::size_t w, std::size_t f, std::size_t d_x,
                           std::mt19937_64& rng);

// Per-person encoded sequence, one d_x-vector per timestep.
struct EncodedSequence {
  Tensor z;  // [k x d_x]

  std::size_t timesteps() const { return z.dim(0); }
  std::size_t dim() const { return z.dim(1); }
};

// Temporal convolution over x [k x F] with zero padding outside [0, k):
//   out[t] = bias + sum_j x[t + j - w/2] * kernel[j]
Tensor conv1d_temporal(const Tensor& x, const EncoderParams& params);

// Deterministic sinusoidal position table:
//   PE[t, 2i] = sin(t / 10000^(2i/d_x)),  PE[t, 2i+1] = cos(t / 10000^(2i/d_x))
// d_x must be even.
Tensor positional_encoding(std::size_t k, std::size_t d_x);

// z = conv1d_temporal(x) + positional_encoding(k, d_x)
EncodedSequence encode(const Tensor& x, const EncoderParams& params);

}  // namespace multipar
