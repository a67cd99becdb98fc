#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "multipar/encoder.hpp"
#include "multipar/tensor.hpp"

namespace multipar {

// Which sequence supplies the attention queries in a crossperson pair.
// OtherToSelf: queries from the other person, keys/values from the target;
// SelfToOther swaps the roles.
enum class Direction {
  kOtherToSelf,
  kSelfToOther,
};

const char* direction_name(Direction d);
Direction direction_from_name(const std::string& name);

// Per-head projection triple; all [d_x x d_head].
struct CpaHeadParams {
  Tensor w_q;
  Tensor w_k;
  Tensor w_v;
};

// Multi-head crossperson attention parameters. With h heads of width d_head,
// the concatenated head outputs are projected back to d_x by w_multi.
struct CPAParams {
  std::vector<CpaHeadParams> heads;
  Tensor w_multi;  // [(h * d_head) x d_x]

  std::size_t head_count() const { return heads.size(); }
  std::size_t model_dim() const { return heads.at(0).w_q.dim(0); }
  std::size_t head_dim() const { return heads.at(0).w_q.dim(1); }
};

// d_head = d_x / h (h must divide d_x), or d_x per head when
// full_head_width is set.
CPAParams init_cpa(std::size_t d_x, std::size_t h, bool full_head_width,
                   std::mt19937_64& rng);

// Row-stochastic attention maps, one k x k matrix per head. Rows index the
// query timestep, columns the key timestep; under causal masking all
// entries with column > row are exactly zero.
struct AttentionWeights {
  std::size_t heads = 0;
  std::size_t k = 0;
  std::vector<double> values;  // [h x k x k] row-major

  double at(std::size_t head, std::size_t i, std::size_t j) const {
    return values[(head * k + i) * k + j];
  }
  Tensor as_tensor() const {
    return Tensor::from_data({heads, k, k}, values);
  }
};

struct CpaResult {
  Tensor context;  // [k x d_head]
  Tensor weights;  // [k x k] row-stochastic
};

// Single-head scaled dot-product crossperson attention:
//   A = softmax((Zq Wq)(Zkv Wk)^T / sqrt(d_head))   (causal mask optional)
//   context = A (Zkv Wv)
// Both the context and A are returned; A backs the explainability export.
CpaResult cpa(const EncodedSequence& query_seq, const EncodedSequence& kv_seq,
              const CpaHeadParams& head, bool causal);

// Multi-head form: per-head contexts concatenated on the feature axis and
// projected to d_x. When out_weights is non-null it receives a value
// snapshot of every head's attention map.
Tensor cpa_multihead(const EncodedSequence& query_seq,
                     const EncodedSequence& kv_seq, const CPAParams& params,
                     bool causal, AttentionWeights* out_weights = nullptr);

// cpa_multihead with query, key and value sources all equal to seq.
Tensor self_attention(const EncodedSequence& seq, const CPAParams& params,
                      bool causal, AttentionWeights* out_weights = nullptr);

}  // namespace multipar
