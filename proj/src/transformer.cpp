#include "multipar/transformer.hpp"

#include <cmath>

namespace multipar {

namespace {

NormParams init_norm(std::size_t d_x) {
  NormParams n;
  n.gain = Tensor::full({d_x}, 1.0, true);
  n.bias = Tensor::zeros({d_x}, true);
  return n;
}

Tensor apply_ffn(const Tensor& x, const FfnParams& ffn) {
  Tensor hidden = relu(add_rows(matmul(x, ffn.w1), ffn.b1));
  return add_rows(matmul(hidden, ffn.w2), ffn.b2);
}

Tensor maybe_dropout(Tensor t, const DropoutCtx& ctx) {
  if (ctx.rate > 0.0 && ctx.rng) return dropout(t, ctx.rate, *ctx.rng);
  return t;
}

}  // namespace

CPTLayerParams init_cpt_layer(std::size_t d_x, std::size_t d_ffn,
                              std::size_t h, bool full_head_width,
                              std::mt19937_64& rng) {
  if (d_ffn < d_x)
    throw ConfigError("d_ffn (" + std::to_string(d_ffn) +
                      ") must be >= d_x (" + std::to_string(d_x) + ")");
  CPTLayerParams p;
  p.cpa = init_cpa(d_x, h, full_head_width, rng);
  const double b1 = std::sqrt(1.0 / static_cast<double>(d_x));
  const double b2 = std::sqrt(1.0 / static_cast<double>(d_ffn));
  p.ffn.w1 = Tensor::uniform({d_x, d_ffn}, b1, rng, true);
  p.ffn.b1 = Tensor::zeros({d_ffn}, true);
  p.ffn.w2 = Tensor::uniform({d_ffn, d_x}, b2, rng, true);
  p.ffn.b2 = Tensor::zeros({d_x}, true);
  p.norm_query = init_norm(d_x);
  p.norm_kv = init_norm(d_x);
  p.norm_out = init_norm(d_x);
  return p;
}

CPTStack init_cpt_stack(std::size_t layers, std::size_t d_x, std::size_t d_ffn,
                        std::size_t h, bool full_head_width,
                        std::mt19937_64& rng) {
  if (layers < 1) throw ConfigError("transformer depth must be >= 1");
  CPTStack stack;
  stack.layers.reserve(layers);
  for (std::size_t i = 0; i < layers; ++i)
    stack.layers.push_back(init_cpt_layer(d_x, d_ffn, h, full_head_width, rng));
  return stack;
}

Tensor cpt_layer(const Tensor& gamma_prev, const Tensor& z_self,
                 const CPTLayerParams& params, bool causal,
                 AttentionWeights* out_weights, DropoutCtx dropout_ctx) {
  if (gamma_prev.rank() != 2 || gamma_prev.shape() != z_self.shape())
    throw ShapeError("cpt_layer: stream shapes differ, " +
                     shape_string(gamma_prev.shape()) + " vs " +
                     shape_string(z_self.shape()));
  Tensor norm_gamma = layer_norm_rows(gamma_prev, params.norm_query.gain,
                                      params.norm_query.bias);
  Tensor norm_kv =
      layer_norm_rows(z_self, params.norm_kv.gain, params.norm_kv.bias);
  Tensor att = cpa_multihead(EncodedSequence{norm_gamma},
                             EncodedSequence{norm_kv}, params.cpa, causal,
                             out_weights);
  Tensor gamma_hat = add(maybe_dropout(att, dropout_ctx), norm_gamma);
  Tensor ffn_out = maybe_dropout(apply_ffn(gamma_hat, params.ffn), dropout_ctx);
  return layer_norm_rows(add(ffn_out, gamma_hat), params.norm_out.gain,
                         params.norm_out.bias);
}

Tensor cpt_forward(const EncodedSequence& z_query_source,
                   const EncodedSequence& z_self, const CPTStack& stack,
                   bool causal, LayerAttention* out_attention,
                   DropoutCtx dropout_ctx) {
  if (stack.layers.empty()) throw ConfigError("cpt_forward: empty stack");
  if (out_attention) out_attention->assign(stack.depth(), AttentionWeights{});
  Tensor gamma = z_query_source.z;
  for (std::size_t m = 0; m < stack.depth(); ++m) {
    AttentionWeights* slot = out_attention ? &(*out_attention)[m] : nullptr;
    gamma = cpt_layer(gamma, z_self.z, stack.layers[m], causal, slot,
                      dropout_ctx);
  }
  return gamma;
}

}  // namespace multipar
