#include "multipar/attention.hpp"

#include <cmath>

namespace multipar {

const char* direction_name(Direction d) {
  return d == Direction::kOtherToSelf ? "other_to_self" : "self_to_other";
}

Direction direction_from_name(const std::string& name) {
  if (name == "other_to_self") return Direction::kOtherToSelf;
  if (name == "self_to_other") return Direction::kSelfToOther;
  throw ConfigError("unknown attention direction '" + name +
                    "' (expected other_to_self or self_to_other)");
}

CPAParams init_cpa(std::size_t d_x, std::size_t h, bool full_head_width,
                   std::mt19937_64& rng) {
  if (h < 1) throw ConfigError("head count must be >= 1");
  std::size_t d_head;
  if (full_head_width) {
    d_head = d_x;
  } else {
    if (d_x % h != 0)
      throw ConfigError("head count " + std::to_string(h) +
                        " must divide d_x = " + std::to_string(d_x));
    d_head = d_x / h;
  }
  const double bound = std::sqrt(1.0 / static_cast<double>(d_x));
  CPAParams p;
  p.heads.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    CpaHeadParams head;
    head.w_q = Tensor::uniform({d_x, d_head}, bound, rng, true);
    // Similarity init: keys start as a copy of the queries (separate
    // tensors, independent gradients), so initial logits are the PSD form
    // (Wz_i)'(Wz_j) and attention begins similarity/diagonal-dominant
    // instead of an arbitrary random pattern.
    head.w_k = Tensor::from_data(
        {d_x, d_head},
        std::vector<double>(head.w_q.data().begin(), head.w_q.data().end()),
        true);
    head.w_v = Tensor::uniform({d_x, d_head}, bound, rng, true);
    p.heads.push_back(std::move(head));
  }
  const double multi_bound = std::sqrt(1.0 / static_cast<double>(h * d_head));
  p.w_multi = Tensor::uniform({h * d_head, d_x}, multi_bound, rng, true);
  return p;
}

CpaResult cpa(const EncodedSequence& query_seq, const EncodedSequence& kv_seq,
              const CpaHeadParams& head, bool causal) {
  const Tensor& zq = query_seq.z;
  const Tensor& zkv = kv_seq.z;
  if (zq.rank() != 2 || zkv.rank() != 2 || zq.shape() != zkv.shape())
    throw ShapeError("cpa: query and key/value sequences must share [k x d_x], got " +
                     shape_string(zq.shape()) + " vs " +
                     shape_string(zkv.shape()));
  const std::size_t d_x = zq.dim(1);
  if (head.w_q.rank() != 2 || head.w_q.dim(0) != d_x ||
      head.w_q.shape() != head.w_k.shape() ||
      head.w_q.shape() != head.w_v.shape())
    throw ShapeError("cpa: projection shape " + shape_string(head.w_q.shape()) +
                     " does not match sequences " + shape_string(zq.shape()));

  const std::size_t d_head = head.w_q.dim(1);
  Tensor q = matmul(zq, head.w_q);   // [k x d_head]
  Tensor k = matmul(zkv, head.w_k);  // [k x d_head]
  Tensor v = matmul(zkv, head.w_v);  // [k x d_head]

  Tensor logits =
      scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_head)));
  Tensor weights = causal ? softmax_rows(logits, causal_mask(zq.dim(0)))
                          : softmax_rows(logits);
  return CpaResult{matmul(weights, v), weights};
}

Tensor cpa_multihead(const EncodedSequence& query_seq,
                     const EncodedSequence& kv_seq, const CPAParams& params,
                     bool causal, AttentionWeights* out_weights) {
  if (params.heads.empty()) throw ConfigError("cpa_multihead: no heads");
  const std::size_t h = params.head_count();
  const std::size_t k = query_seq.z.dim(0);
  std::vector<Tensor> contexts;
  contexts.reserve(h);
  if (out_weights) {
    out_weights->heads = h;
    out_weights->k = k;
    out_weights->values.assign(h * k * k, 0.0);
  }
  for (std::size_t i = 0; i < h; ++i) {
    CpaResult r = cpa(query_seq, kv_seq, params.heads[i], causal);
    if (out_weights)
      std::copy(r.weights.data().begin(), r.weights.data().end(),
                out_weights->values.begin() + i * k * k);
    contexts.push_back(std::move(r.context));
  }
  Tensor concat = h == 1 ? contexts[0] : concat_cols(contexts);
  if (params.w_multi.dim(0) != concat.dim(1))
    throw ShapeError("cpa_multihead: w_multi " +
                     shape_string(params.w_multi.shape()) +
                     " does not accept concatenated heads " +
                     shape_string(concat.shape()));
  return matmul(concat, params.w_multi);
}

Tensor self_attention(const EncodedSequence& seq, const CPAParams& params,
                      bool causal, AttentionWeights* out_weights) {
  return cpa_multihead(seq, seq, params, causal, out_weights);
}

}  // namespace multipar
