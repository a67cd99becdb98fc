#include "multipar/model.hpp"

#include <cmath>
#include <fstream>

#include "multipar/config_io.hpp"

namespace multipar {

using nlohmann::json;

// ---- model config JSON ------------------------------------------------------

json model_config_to_json(const ModelConfig& cfg) {
  return json{{"persons", cfg.persons},
              {"timesteps", cfg.timesteps},
              {"feature_dim", cfg.feature_dim},
              {"d_x", cfg.d_x},
              {"heads", cfg.heads},
              {"layers", cfg.layers},
              {"d_ffn", cfg.d_ffn},
              {"lstm_hidden", cfg.lstm_hidden},
              {"conv_width", cfg.conv_width},
              {"direction", direction_name(cfg.direction)},
              {"use_self_attention", cfg.use_self_attention},
              {"use_cpa", cfg.use_cpa},
              {"causal", cfg.causal},
              {"shared_encoder", cfg.shared_encoder},
              {"full_head_width", cfg.full_head_width},
              {"per_pair_stacks", cfg.per_pair_stacks},
              {"dropout", cfg.dropout},
              {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  bool d_ffn_given = false;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "persons") cfg.persons = value.get<std::size_t>();
      else if (key == "timesteps") cfg.timesteps = value.get<std::size_t>();
      else if (key == "feature_dim") cfg.feature_dim = value.get<std::size_t>();
      else if (key == "d_x") cfg.d_x = value.get<std::size_t>();
      else if (key == "heads") cfg.heads = value.get<std::size_t>();
      else if (key == "layers") cfg.layers = value.get<std::size_t>();
      else if (key == "d_ffn") { cfg.d_ffn = value.get<std::size_t>(); d_ffn_given = true; }
      else if (key == "lstm_hidden") cfg.lstm_hidden = value.get<std::size_t>();
      else if (key == "conv_width") cfg.conv_width = value.get<std::size_t>();
      else if (key == "direction")
        cfg.direction = direction_from_name(value.get<std::string>());
      else if (key == "use_self_attention") cfg.use_self_attention = value.get<bool>();
      else if (key == "use_cpa") cfg.use_cpa = value.get<bool>();
      else if (key == "causal") cfg.causal = value.get<bool>();
      else if (key == "shared_encoder") cfg.shared_encoder = value.get<bool>();
      else if (key == "full_head_width") cfg.full_head_width = value.get<bool>();
      else if (key == "per_pair_stacks") cfg.per_pair_stacks = value.get<bool>();
      else if (key == "dropout") cfg.dropout = value.get<double>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else
        throw ConfigError("unknown model config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config value: ") + e.what());
  }
  if (!d_ffn_given) cfg.d_ffn = 4 * cfg.d_x;
  validate_config(cfg);
  return cfg;
}

namespace {

constexpr const char* kCheckpointMagic = "MPT1";
constexpr int kCheckpointVersion = 1;

void register_norm(std::vector<std::pair<std::string, Tensor>>& named,
                   const std::string& prefix, const NormParams& n) {
  named.emplace_back(prefix + ".gain", n.gain);
  named.emplace_back(prefix + ".bias", n.bias);
}

void register_stack(std::vector<std::pair<std::string, Tensor>>& named,
                    const std::string& prefix, const CPTStack& stack) {
  for (std::size_t m = 0; m < stack.depth(); ++m) {
    const CPTLayerParams& layer = stack.layers[m];
    const std::string lp = prefix + ".layer" + std::to_string(m);
    for (std::size_t h = 0; h < layer.cpa.head_count(); ++h) {
      const std::string hp = lp + ".cpa.head" + std::to_string(h);
      named.emplace_back(hp + ".w_q", layer.cpa.heads[h].w_q);
      named.emplace_back(hp + ".w_k", layer.cpa.heads[h].w_k);
      named.emplace_back(hp + ".w_v", layer.cpa.heads[h].w_v);
    }
    named.emplace_back(lp + ".cpa.w_multi", layer.cpa.w_multi);
    named.emplace_back(lp + ".ffn.w1", layer.ffn.w1);
    named.emplace_back(lp + ".ffn.b1", layer.ffn.b1);
    named.emplace_back(lp + ".ffn.w2", layer.ffn.w2);
    named.emplace_back(lp + ".ffn.b2", layer.ffn.b2);
    register_norm(named, lp + ".norm_query", layer.norm_query);
    register_norm(named, lp + ".norm_kv", layer.norm_kv);
    register_norm(named, lp + ".norm_out", layer.norm_out);
  }
}

}  // namespace

void validate_config(const ModelConfig& cfg) {
  if (cfg.persons < 2)
    throw ConfigError("P must be >= 2, got " + std::to_string(cfg.persons));
  if (cfg.timesteps < 1 || cfg.feature_dim < 1 || cfg.d_x < 1 ||
      cfg.heads < 1 || cfg.layers < 1 || cfg.lstm_hidden < 1)
    throw ConfigError("all model dimensions must be positive");
  if (cfg.d_x % 2 != 0)
    throw ConfigError("d_x must be even for the sinusoidal position table");
  if (!cfg.full_head_width && cfg.d_x % cfg.heads != 0)
    throw ConfigError("heads (" + std::to_string(cfg.heads) +
                      ") must divide d_x (" + std::to_string(cfg.d_x) + ")");
  if (cfg.d_ffn < cfg.d_x)
    throw ConfigError("d_ffn must be >= d_x");
  if (cfg.conv_width % 2 == 0)
    throw ConfigError("conv_width must be odd");
  if (!cfg.use_cpa && !cfg.use_self_attention)
    throw ConfigError("at least one of use_cpa / use_self_attention required");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
    throw ConfigError("dropout must be in [0, 1)");
}

Tensor ModelParams::find(const std::string& name) const {
  for (const auto& [n, t] : named)
    if (n == name) return t;
  throw ConfigError("unknown parameter name: " + name);
}

ModelParams init_model_params(const ModelConfig& cfg) {
  validate_config(cfg);
  std::mt19937_64 rng(cfg.seed);
  ModelParams p;

  const std::size_t encoder_count = cfg.shared_encoder ? 1 : cfg.persons;
  for (std::size_t e = 0; e < encoder_count; ++e)
    p.encoders.push_back(
        init_encoder(cfg.conv_width, cfg.feature_dim, cfg.d_x, rng));

  if (cfg.use_cpa) {
    const std::size_t stack_count = cfg.per_pair_stacks ? cfg.persons - 1 : 1;
    for (std::size_t s = 0; s < stack_count; ++s)
      p.cross_stacks.push_back(init_cpt_stack(
          cfg.layers, cfg.d_x, cfg.d_ffn, cfg.heads, cfg.full_head_width, rng));
  }
  if (cfg.use_self_attention)
    p.self_stack = init_cpt_stack(cfg.layers, cfg.d_x, cfg.d_ffn, cfg.heads,
                                  cfg.full_head_width, rng);

  p.lstm = init_lstm(cfg.lstm_input_dim(), cfg.lstm_hidden, rng);

  const double hb = std::sqrt(1.0 / static_cast<double>(cfg.lstm_hidden));
  p.head_w1 =
      Tensor::uniform({cfg.lstm_hidden, cfg.lstm_hidden}, hb, rng, true);
  p.head_b1 = Tensor::zeros({cfg.lstm_hidden}, true);
  p.head_w2 = Tensor::uniform(
      {cfg.lstm_hidden, static_cast<std::size_t>(kNumClasses)}, hb, rng, true);
  p.head_b2 = Tensor::zeros({static_cast<std::size_t>(kNumClasses)}, true);

  for (std::size_t e = 0; e < p.encoders.size(); ++e) {
    const std::string ep = "encoder." + std::to_string(e);
    p.named.emplace_back(ep + ".conv_kernel", p.encoders[e].conv_kernel);
    p.named.emplace_back(ep + ".conv_bias", p.encoders[e].conv_bias);
  }
  for (std::size_t s = 0; s < p.cross_stacks.size(); ++s)
    register_stack(p.named, "cross." + std::to_string(s), p.cross_stacks[s]);
  if (cfg.use_self_attention) register_stack(p.named, "self", p.self_stack);
  p.named.emplace_back("lstm.w_ih", p.lstm.w_ih);
  p.named.emplace_back("lstm.w_hh", p.lstm.w_hh);
  p.named.emplace_back("lstm.bias", p.lstm.bias);
  p.named.emplace_back("head.w1", p.head_w1);
  p.named.emplace_back("head.b1", p.head_b1);
  p.named.emplace_back("head.w2", p.head_w2);
  p.named.emplace_back("head.b2", p.head_b2);
  return p;
}

std::size_t count_parameters(const ModelConfig& cfg) {
  ModelParams p = init_model_params(cfg);
  std::size_t total = 0;
  for (const auto& [name, t] : p.named) total += t.size();
  return total;
}

int Prediction::argmax() const {
  int best = 0;
  for (int c = 1; c < kNumClasses; ++c)
    if (probs.data()[c] > probs.data()[best]) best = c;
  return best;
}

namespace {

// Encodings are produced once per person and shared across target passes.
std::vector<EncodedSequence> encode_all(const GroupWindow& window,
                                        const ModelConfig& cfg,
                                        const ModelParams& params) {
  std::vector<EncodedSequence> z;
  z.reserve(cfg.persons);
  for (std::size_t p = 0; p < cfg.persons; ++p) {
    const EncoderParams& enc =
        cfg.shared_encoder ? params.encoders[0] : params.encoders[p];
    z.push_back(encode(window.person_features(p), enc));
  }
  return z;
}

ForwardResult forward_encoded(const std::vector<EncodedSequence>& z,
                              std::size_t target, const ModelConfig& cfg,
                              const ModelParams& params,
                              bool collect_attention, DropoutCtx dropout_ctx) {
  ForwardResult result;
  std::vector<Tensor> streams;
  streams.reserve(cfg.stream_count());
  std::size_t cross_rank = 0;
  for (std::size_t p = 0; p < cfg.persons; ++p) {
    LayerAttention layers;
    LayerAttention* slot = collect_attention ? &layers : nullptr;
    if (p == target) {
      if (!cfg.use_self_attention) continue;
      streams.push_back(cpt_forward(z[target], z[target], params.self_stack,
                                    cfg.causal, slot, dropout_ctx));
    } else {
      if (!cfg.use_cpa) continue;
      const CPTStack& stack =
          cfg.per_pair_stacks ? params.cross_stacks[cross_rank]
                              : params.cross_stacks[0];
      ++cross_rank;
      // other->self draws queries from the other person and keys/values
      // from the target; the reversed direction swaps the roles.
      const EncodedSequence& query_src =
          cfg.direction == Direction::kOtherToSelf ? z[p] : z[target];
      const EncodedSequence& kv_src =
          cfg.direction == Direction::kOtherToSelf ? z[target] : z[p];
      streams.push_back(cpt_forward(query_src, kv_src, stack, cfg.causal,
                                    slot, dropout_ctx));
    }
    if (collect_attention)
      result.attention.push_back(StreamAttention{p, std::move(layers)});
  }

  Tensor joined = streams.size() == 1 ? streams[0] : concat_cols(streams);
  Tensor final_hidden = lstm_last_hidden(joined, params.lstm);
  Tensor hidden =
      relu(add_rows(matmul(final_hidden, params.head_w1), params.head_b1));
  Tensor logits = add_rows(matmul(hidden, params.head_w2), params.head_b2);
  Tensor probs = reshape(softmax_rows(logits),
                         {static_cast<std::size_t>(kNumClasses)});

  double total = 0.0;
  for (double v : probs.data()) {
    if (!(v > 0.0 && v < 1.0))
      throw NumericalError("prediction probability outside (0, 1)");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw NumericalError("prediction probabilities do not sum to 1");

  result.prediction = Prediction{probs};
  return result;
}

}  // namespace

ForwardResult forward(const GroupWindow& window, std::size_t target,
                      const ModelConfig& cfg, const ModelParams& params,
                      bool collect_attention, DropoutCtx dropout_ctx) {
  if (target >= cfg.persons)
    throw ShapeError("forward: target " + std::to_string(target) +
                     " out of range for P = " + std::to_string(cfg.persons));
  if (window.persons() != cfg.persons || window.timesteps() != cfg.timesteps ||
      window.feature_dim() != cfg.feature_dim)
    throw ShapeError("forward: window " + shape_string(window.features.shape()) +
                     " does not match config [" + std::to_string(cfg.persons) +
                     "x" + std::to_string(cfg.timesteps) + "x" +
                     std::to_string(cfg.feature_dim) + "]");
  return forward_encoded(encode_all(window, cfg, params), target, cfg, params,
                         collect_attention, dropout_ctx);
}

std::vector<Prediction> predict_all(const GroupWindow& window,
                                    const ModelConfig& cfg,
                                    const ModelParams& params) {
  if (window.persons() != cfg.persons || window.timesteps() != cfg.timesteps ||
      window.feature_dim() != cfg.feature_dim)
    throw ShapeError("predict_all: window " +
                     shape_string(window.features.shape()) +
                     " does not match config");
  std::vector<EncodedSequence> z = encode_all(window, cfg, params);
  std::vector<Prediction> out;
  out.reserve(cfg.persons);
  for (std::size_t target = 0; target < cfg.persons; ++target)
    out.push_back(
        forward_encoded(z, target, cfg, params, false, {}).prediction);
  return out;
}

// ---- checkpointing ---------------------------------------------------------

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params) {
  json j;
  j["magic"] = kCheckpointMagic;
  j["version"] = kCheckpointVersion;
  j["model"] = model_config_to_json(cfg);
  json tensors = json::object();
  for (const auto& [name, t] : params.named) {
    tensors[name] = {{"shape", t.shape()},
                     {"data", std::vector<double>(t.data().begin(),
                                                  t.data().end())}};
  }
  j["params"] = std::move(tensors);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << j.dump();
  if (!out) throw DataError("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("checkpoint parse error in " + path + ": " + e.what());
  }
  if (!j.contains("magic") || j["magic"] != kCheckpointMagic)
    throw DataError("checkpoint " + path + " is missing the MPT1 magic");
  if (!j.contains("version") || j["version"] != kCheckpointVersion)
    throw DataError("checkpoint version mismatch in " + path + ": expected " +
                    std::to_string(kCheckpointVersion));
  Checkpoint ckpt;
  ckpt.config = model_config_from_json(j.at("model"));
  ckpt.params = init_model_params(ckpt.config);
  const json& tensors = j.at("params");
  for (auto& [name, t] : ckpt.params.named) {
    if (!tensors.contains(name))
      throw DataError("checkpoint " + path + " is missing parameter " + name);
    const json& entry = tensors.at(name);
    Shape shape = entry.at("shape").get<Shape>();
    if (shape != t.shape())
      throw DataError("checkpoint parameter " + name + " has shape " +
                      shape_string(shape) + ", expected " +
                      shape_string(t.shape()));
    std::vector<double> data = entry.at("data").get<std::vector<double>>();
    if (data.size() != t.size())
      throw DataError("checkpoint parameter " + name + " has wrong size");
    std::copy(data.begin(), data.end(), t.mutable_data().begin());
  }
  return ckpt;
}

}  // namespace multipar
