#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "multipar/dataset.hpp"
#include "multipar/lstm.hpp"
#include "multipar/transformer.hpp"

namespace multipar {

// Every architectural knob. A config plus a seed fully determines the
// parameter tensors, so runs are reproducible from the manifest alone.
struct ModelConfig {
  std::size_t persons = 5;         // P
  std::size_t timesteps = 64;      // k
  std::size_t feature_dim = 2183;  // F
  std::size_t d_x = 100;           // per-timestep encoding width
  std::size_t heads = 4;           // h
  std::size_t layers = 2;          // M
  std::size_t d_ffn = 400;         // transformer FFN width (4 * d_x)
  std::size_t lstm_hidden = 128;
  std::size_t conv_width = 3;      // temporal kernel width, odd
  Direction direction = Direction::kOtherToSelf;
  bool use_self_attention = true;
  bool use_cpa = true;
  bool causal = true;
  bool shared_encoder = true;
  bool full_head_width = false;
  bool per_pair_stacks = false;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  // Cross streams plus the optional self stream.
  std::size_t stream_count() const {
    return (use_cpa ? persons - 1 : 0) + (use_self_attention ? 1 : 0);
  }
  std::size_t lstm_input_dim() const { return stream_count() * d_x; }
};

void validate_config(const ModelConfig& cfg);

struct ModelParams {
  std::vector<EncoderParams> encoders;  // 1 when shared, else P
  std::vector<CPTStack> cross_stacks;   // 1 when shared, else P-1 slot stacks
  CPTStack self_stack;                  // present when use_self_attention
  LstmParams lstm;
  Tensor head_w1, head_b1;  // [H x H], [H]
  Tensor head_w2, head_b2;  // [H x 4], [4]

  // Stable name -> tensor registry; iteration order is the optimizer and
  // checkpoint order.
  std::vector<std::pair<std::string, Tensor>> named;

  Tensor find(const std::string& name) const;
};

// Deterministic in (cfg, cfg.seed).
ModelParams init_model_params(const ModelConfig& cfg);

std::size_t count_parameters(const ModelConfig& cfg);

struct Prediction {
  Tensor probs;  // [4], strictly positive, sums to 1

  int argmax() const;
};

// Attention maps of one stream of a forward pass: `pair` is the person the
// queries came from under other->self (the target itself for the self
// stream), layers index the transformer depth.
struct StreamAttention {
  std::size_t pair = 0;
  LayerAttention layers;
};

struct ForwardResult {
  Prediction prediction;
  std::vector<StreamAttention> attention;  // filled when requested
};

// Full pass for one target person: encode all persons, run the P-1
// crossperson streams plus the self stream, concatenate per timestep in
// ascending person order (self stream in the target's own slot), LSTM over
// the k steps, then the classification head.
ForwardResult forward(const GroupWindow& window, std::size_t target,
                      const ModelConfig& cfg, const ModelParams& params,
                      bool collect_attention = false,
                      DropoutCtx dropout = {});

// One prediction per person, sharing the per-person encodings across the
// P target passes. Bit-identical to P independent forward calls.
std::vector<Prediction> predict_all(const GroupWindow& window,
                                    const ModelConfig& cfg,
                                    const ModelParams& params);

// Versioned "MPT1" checkpoint: full config plus every named parameter.
// Round trips bit-exactly.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params);
struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace multipar
