#pragma once

#include <random>

#include "multipar/tensor.hpp"

namespace multipar {

// Single-layer LSTM. Gates are packed along the first axis in the order
// input, forget, candidate, output.
struct LstmParams {
  Tensor w_ih;  // [4H x D]
  Tensor w_hh;  // [4H x H]
  Tensor bias;  // [4H]

  std::size_t hidden_dim() const { return w_hh.dim(1); }
  std::size_t input_dim() const { return w_ih.dim(1); }
};

// Uniform +/- sqrt(1/H) init; forget-gate bias starts at 1.
LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim,
                     std::mt19937_64& rng);

// Runs the recurrence over x [k x D] from zero initial state and returns
// the final hidden state as [1 x H]. Forward and the full
// backpropagation-through-time rule form one tape node.
Tensor lstm_last_hidden(const Tensor& x, const LstmParams& params);

}  // namespace multipar
