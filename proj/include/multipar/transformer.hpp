#pragma once

#include "multipar/attention.hpp"

namespace multipar {

struct FfnParams {
  Tensor w1;  // [d_x x d_ffn]
  Tensor b1;  // [d_ffn]
  Tensor w2;  // [d_ffn x d_x]
  Tensor b2;  // [d_x]
};

struct NormParams {
  Tensor gain;  // [d_x]
  Tensor bias;  // [d_x]
};

// One pre-norm crossperson transformer layer:
//   gamma_hat = CPA(Norm(gamma_prev), Norm(z_self)) + Norm(gamma_prev)
//   gamma     = Norm(FFN(gamma_hat) + gamma_hat)
struct CPTLayerParams {
  CPAParams cpa;
  FfnParams ffn;
  NormParams norm_query;  // applied to the evolving gamma stream
  NormParams norm_kv;     // applied to z_self
  NormParams norm_out;
};

struct CPTStack {
  std::vector<CPTLayerParams> layers;

  std::size_t depth() const { return layers.size(); }
};

CPTLayerParams init_cpt_layer(std::size_t d_x, std::size_t d_ffn,
                              std::size_t h, bool full_head_width,
                              std::mt19937_64& rng);
CPTStack init_cpt_stack(std::size_t layers, std::size_t d_x,
                        std::size_t d_ffn, std::size_t h,
                        bool full_head_width, std::mt19937_64& rng);

// Optional training-time dropout applied after the attention projection and
// after the FFN. rate 0 or a null rng disables it.
struct DropoutCtx {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
};

// Attention maps of one stream, indexed [layer]. Layer 0 holds the weights
// that align raw encodings, where contingent behavior shows up first.
using LayerAttention = std::vector<AttentionWeights>;

Tensor cpt_layer(const Tensor& gamma_prev, const Tensor& z_self,
                 const CPTLayerParams& params, bool causal,
                 AttentionWeights* out_weights = nullptr,
                 DropoutCtx dropout = {});

// gamma^0 = z_query_source; each layer re-reads z_self for keys/values.
// For the self-stream pass z_query_source = z_self.
Tensor cpt_forward(const EncodedSequence& z_query_source,
                   const EncodedSequence& z_self, const CPTStack& stack,
                   bool causal, LayerAttention* out_attention = nullptr,
                   DropoutCtx dropout = {});

}  // namespace multipar
