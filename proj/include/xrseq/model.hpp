#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "xrseq/backbones.hpp"
#include "xrseq/error.hpp"
#include "xrseq/labels.hpp"
#include "xrseq/layers.hpp"
#include "xrseq/rng.hpp"
#include "xrseq/tensor.hpp"

namespace xrseq {

enum class LstmSequenceMode { per_image, concat_first };

inline std::string_view lstm_sequence_mode_name(LstmSequenceMode m) {
  return m == LstmSequenceMode::per_image ? "per_image" : "concat_first";
}

inline LstmSequenceMode parse_lstm_sequence_mode(const std::string& s) {
  if (s == "per_image") return LstmSequenceMode::per_image;
  if (s == "concat_first") return LstmSequenceMode::concat_first;
  raise(ErrorKind::config_error, "unknown lstm_sequence_mode '" + s + "'");
}

struct ModelConfig {
  BackboneKind backbone = BackboneKind::tiny;
  bool use_lstm = false;
  int lstm_units = 50;
  LstmSequenceMode lstm_sequence_mode = LstmSequenceMode::per_image;
  float dropout_rate = 0.2f;
  int input_size = 128;
  int channels = 3;
  int num_outputs = kNumLabels;
  int branches = 3;
  bool pretrained = false;  // the training recipe uses no pretrained weights
  uint64_t init_seed = 0;
};

inline void validate_config(const ModelConfig& c) {
  if (c.lstm_units <= 0) raise(ErrorKind::config_error, "lstm_units must be positive");
  if (!(c.dropout_rate >= 0.0f && c.dropout_rate < 1.0f)) {
    raise(ErrorKind::config_error, "dropout_rate must be in [0,1)");
  }
  if (c.num_outputs != kNumLabels) {
    raise(ErrorKind::config_error, "num_outputs must equal the label vocabulary size");
  }
  if (c.branches != 1 && c.branches != 3) raise(ErrorKind::config_error, "branches must be 1 or 3");
  if (c.channels != 1 && c.channels != 3) raise(ErrorKind::config_error, "channels must be 1 or 3");
  if (c.input_size <= 0) raise(ErrorKind::config_error, "input_size must be positive");
  if (c.pretrained) raise(ErrorKind::config_error, "pretrained weights are not supported");
  if (c.branches == 1 && c.use_lstm) {
    raise(ErrorKind::config_error, "the single-image baseline has no LSTM head");
  }
}

// ---------------------------------------------------------------------------
// Trainable head. Everything above the frozen feature extractor:
// optional LSTM (gate order i,f,c,o; tanh cell, sigmoid gates), dropout
// before the output layer, dense to num_outputs logits. Probabilities are
// sigmoid(logits); training works on logits for numerical stability.
// ---------------------------------------------------------------------------

struct Head {
  bool use_lstm = false;
  LstmSequenceMode seq_mode = LstmSequenceMode::per_image;
  int branches = 3;
  int feature_dim = 0;  // flattened per-branch feature size
  int lstm_units = 0;
  int num_outputs = kNumLabels;
  float dropout_rate = 0.0f;

  Tensor lstm_kernel;     // (lstm_in, 4u)
  Tensor lstm_recurrent;  // (u, 4u)
  Tensor lstm_bias;       // (4u)
  Tensor dense_kernel;    // (dense_in, num_outputs)
  Tensor dense_bias;      // (num_outputs)

  int lstm_input_dim() const {
    return seq_mode == LstmSequenceMode::per_image ? feature_dim : branches * feature_dim;
  }
  int dense_input_dim() const { return use_lstm ? lstm_units : branches * feature_dim; }
};

struct HeadGrads {
  Tensor lstm_kernel, lstm_recurrent, lstm_bias, dense_kernel, dense_bias;

  static HeadGrads zeros_like(const Head& h) {
    HeadGrads g;
    if (h.use_lstm) {
      g.lstm_kernel = Tensor(h.lstm_kernel.shape());
      g.lstm_recurrent = Tensor(h.lstm_recurrent.shape());
      g.lstm_bias = Tensor(h.lstm_bias.shape());
    }
    g.dense_kernel = Tensor(h.dense_kernel.shape());
    g.dense_bias = Tensor(h.dense_bias.shape());
    return g;
  }
};

/// Intermediate activations kept for the backward pass.
struct HeadCache {
  std::vector<Tensor> xs;     // per-timestep LSTM inputs (B, lstm_in)
  std::vector<Tensor> gates;  // per-timestep (B, 4u), post-activation i|f|g|o
  std::vector<Tensor> cells;  // per-timestep cell state (B, u)
  std::vector<Tensor> hiddens;
  Tensor head_in;             // dropout input (B, dense_in)
  Tensor dropout_mask;        // empty when dropout inactive
  Tensor dropped;             // dense input
};

namespace detail {

inline float sigmoidf(float z) { return 1.0f / (1.0f + std::exp(-z)); }

inline Tensor concat_features(const std::vector<Tensor>& feats) {
  const int b = feats[0].dim(0);
  int total = 0;
  for (const auto& f : feats) total += f.dim(1);
  Tensor out({b, total});
  int off = 0;
  for (const auto& f : feats) {
    const int d = f.dim(1);
    for (int r = 0; r < b; ++r) {
      std::copy(f.data() + static_cast<int64_t>(r) * d, f.data() + static_cast<int64_t>(r + 1) * d,
                out.data() + static_cast<int64_t>(r) * total + off);
    }
    off += d;
  }
  return out;
}

inline void lstm_step(const Head& h, const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                      Tensor& gates, Tensor& c_out, Tensor& h_out) {
  const int b = x.dim(0), u = h.lstm_units, din = x.dim(1);
  gates = Tensor({b, 4 * u});
  as_matrix(gates, b, 4 * u).noalias() = as_matrix(x, b, din) * as_matrix(h.lstm_kernel, din, 4 * u);
  as_matrix(gates, b, 4 * u).noalias() +=
      as_matrix(h_prev, b, u) * as_matrix(h.lstm_recurrent, u, 4 * u);
  c_out = Tensor({b, u});
  h_out = Tensor({b, u});
  for (int r = 0; r < b; ++r) {
    float* z = gates.data() + static_cast<int64_t>(r) * 4 * u;
    const float* cp = c_prev.data() + static_cast<int64_t>(r) * u;
    float* co = c_out.data() + static_cast<int64_t>(r) * u;
    float* ho = h_out.data() + static_cast<int64_t>(r) * u;
    for (int j = 0; j < u; ++j) {
      const float zi = z[j] + h.lstm_bias[j];
      const float zf = z[u + j] + h.lstm_bias[u + j];
      const float zc = z[2 * u + j] + h.lstm_bias[2 * u + j];
      const float zo = z[3 * u + j] + h.lstm_bias[3 * u + j];
      const float gi = sigmoidf(zi);
      const float gf = sigmoidf(zf);
      const float gg = std::tanh(zc);
      const float go = sigmoidf(zo);
      z[j] = gi;
      z[u + j] = gf;
      z[2 * u + j] = gg;
      z[3 * u + j] = go;
      co[j] = gf * cp[j] + gi * gg;
      ho[j] = go * std::tanh(co[j]);
    }
  }
}

}  // namespace detail

/// Head forward pass on per-branch flattened features. Returns logits
/// (B, num_outputs). With `training`, dropout draws a fresh inverted
/// mask from `rng`; in inference it is the identity.
inline Tensor head_forward(const Head& h, const std::vector<Tensor>& feats, bool training,
                           DeterministicRng* rng, HeadCache* cache) {
  if (static_cast<int>(feats.size()) != h.branches) {
    raise(ErrorKind::shape_mismatch, "head expects " + std::to_string(h.branches) + " feature sets");
  }
  const int b = feats[0].dim(0);
  HeadCache local;
  HeadCache& cc = cache ? *cache : local;

  if (h.use_lstm) {
    if (h.seq_mode == LstmSequenceMode::per_image) {
      cc.xs = feats;
    } else {
      cc.xs = {detail::concat_features(feats)};
    }
    const int u = h.lstm_units;
    Tensor h_prev({b, u}), c_prev({b, u});
    cc.gates.clear();
    cc.cells.clear();
    cc.hiddens.clear();
    for (const Tensor& x : cc.xs) {
      Tensor gates, c_out, h_out;
      detail::lstm_step(h, x, h_prev, c_prev, gates, c_out, h_out);
      cc.gates.push_back(std::move(gates));
      cc.cells.push_back(c_out);
      cc.hiddens.push_back(h_out);
      h_prev = std::move(h_out);
      c_prev = std::move(c_out);
    }
    cc.head_in = cc.hiddens.back();
  } else {
    cc.head_in = h.branches == 1 ? feats[0] : detail::concat_features(feats);
  }

  if (training && h.dropout_rate > 0.0f) {
    if (!rng) raise(ErrorKind::config_error, "training-mode dropout needs an RNG");
    const float keep = 1.0f - h.dropout_rate;
    cc.dropout_mask = Tensor(cc.head_in.shape());
    cc.dropped = cc.head_in;
    for (int64_t i = 0; i < cc.head_in.numel(); ++i) {
      const float m = rng->next_unit_f() < keep ? 1.0f / keep : 0.0f;
      cc.dropout_mask[i] = m;
      cc.dropped[i] *= m;
    }
  } else {
    cc.dropout_mask = Tensor();
    cc.dropped = cc.head_in;
  }

  const int din = h.dense_input_dim(), out = h.num_outputs;
  Tensor logits({b, out});
  as_matrix(logits, b, out).noalias() =
      as_matrix(cc.dropped, b, din) * as_matrix(h.dense_kernel, din, out);
  for (int r = 0; r < b; ++r) {
    for (int j = 0; j < out; ++j) logits[static_cast<int64_t>(r) * out + j] += h.dense_bias[j];
  }
  return logits;
}

/// Backpropagates d(loss)/d(logits) through dense, dropout, and (when
/// present) the LSTM via backprop-through-time. Gradients for the frozen
/// feature extractor are never formed.
inline void head_backward(const Head& h, const HeadCache& cc, const Tensor& dlogits,
                          HeadGrads& grads) {
  const int b = dlogits.dim(0), out = h.num_outputs, din = h.dense_input_dim();

  // dense
  as_matrix(grads.dense_kernel, din, out).noalias() =
      as_matrix(cc.dropped, b, din).transpose() * as_matrix(dlogits, b, out);
  for (int j = 0; j < out; ++j) {
    float s = 0.0f;
    for (int r = 0; r < b; ++r) s += dlogits[static_cast<int64_t>(r) * out + j];
    grads.dense_bias[j] = s;
  }
  Tensor dhead({b, din});
  as_matrix(dhead, b, din).noalias() =
      as_matrix(dlogits, b, out) * as_matrix(h.dense_kernel, din, out).transpose();
  if (!cc.dropout_mask.empty()) {
    for (int64_t i = 0; i < dhead.numel(); ++i) dhead[i] *= cc.dropout_mask[i];
  }
  if (!h.use_lstm) return;  // feature gradients are not needed (backbone frozen)

  // LSTM backprop through time
  const int u = h.lstm_units;
  const int steps = static_cast<int>(cc.xs.size());
  const int lin = h.lstm_input_dim();
  Tensor dh = dhead;          // d loss / d h_t
  Tensor dc_acc({b, u});      // carry of d loss / d c_t from step t+1
  Tensor dz({b, 4 * u});
  for (int t = steps - 1; t >= 0; --t) {
    const Tensor& gates = cc.gates[static_cast<size_t>(t)];
    const Tensor& c_t = cc.cells[static_cast<size_t>(t)];
    const Tensor* c_prev = t > 0 ? &cc.cells[static_cast<size_t>(t - 1)] : nullptr;
    for (int r = 0; r < b; ++r) {
      const float* g = gates.data() + static_cast<int64_t>(r) * 4 * u;
      const float* ct = c_t.data() + static_cast<int64_t>(r) * u;
      const float* cp = c_prev ? c_prev->data() + static_cast<int64_t>(r) * u : nullptr;
      const float* dhr = dh.data() + static_cast<int64_t>(r) * u;
      float* dca = dc_acc.data() + static_cast<int64_t>(r) * u;
      float* dzr = dz.data() + static_cast<int64_t>(r) * 4 * u;
      for (int j = 0; j < u; ++j) {
        const float gi = g[j], gf = g[u + j], gg = g[2 * u + j], go = g[3 * u + j];
        const float tc = std::tanh(ct[j]);
        const float dct = dca[j] + dhr[j] * go * (1.0f - tc * tc);
        dzr[j] = (dct * gg) * gi * (1.0f - gi);
        dzr[u + j] = (dct * (cp ? cp[j] : 0.0f)) * gf * (1.0f - gf);
        dzr[2 * u + j] = (dct * gi) * (1.0f - gg * gg);
        dzr[3 * u + j] = (dhr[j] * tc) * go * (1.0f - go);
        dca[j] = dct * gf;  // carried to step t-1
      }
    }
    const Tensor& x = cc.xs[static_cast<size_t>(t)];
    as_matrix(grads.lstm_kernel, lin, 4 * u).noalias() +=
        as_matrix(x, b, lin).transpose() * as_matrix(dz, b, 4 * u);
    if (t > 0) {
      const Tensor& h_prev = cc.hiddens[static_cast<size_t>(t - 1)];
      as_matrix(grads.lstm_recurrent, u, 4 * u).noalias() +=
          as_matrix(h_prev, b, u).transpose() * as_matrix(dz, b, 4 * u);
      dh = Tensor({b, u});
      as_matrix(dh, b, u).noalias() =
          as_matrix(dz, b, 4 * u) * as_matrix(h.lstm_recurrent, u, 4 * u).transpose();
    }
    for (int j = 0; j < 4 * u; ++j) {
      float s = 0.0f;
      for (int r = 0; r < b; ++r) s += dz[static_cast<int64_t>(r) * 4 * u + j];
      grads.lstm_bias[j] += s;
    }
  }
}

// ---------------------------------------------------------------------------
// Binary cross-entropy over per-label sigmoid outputs, mean over batch
// and labels, computed from logits.
// ---------------------------------------------------------------------------

inline double bce_from_logits(const Tensor& logits, const Tensor& targets, Tensor* dlogits) {
  if (logits.shape() != targets.shape()) {
    raise(ErrorKind::shape_mismatch, "logits " + logits.shape_str() + " vs targets " + targets.shape_str());
  }
  const int64_t n = logits.numel();
  double loss = 0.0;
  if (dlogits) *dlogits = Tensor(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) {
    const double z = logits[i];
    const double y = targets[i];
    const double softplus = std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0);
    loss += y * (softplus - z) + (1.0 - y) * softplus;
    if (dlogits) {
      const double p = 1.0 / (1.0 + std::exp(-z));
      (*dlogits)[i] = static_cast<float>((p - y) * inv_n);
    }
  }
  return loss * inv_n;
}

// ---------------------------------------------------------------------------
// BuiltModel: one shared frozen feature extractor applied to every
// branch, plus the trainable head.
// ---------------------------------------------------------------------------

struct ParamCounts {
  int64_t frozen = 0;
  int64_t trainable = 0;
  int64_t total = 0;
};

struct BuiltModel {
  ModelConfig config;
  FeatureExtractor backbone;
  Head head;

  /// Flattened per-branch feature dimension at config.input_size.
  int feature_dim() const { return head.feature_dim; }

  /// Runs the shared backbone over each branch batch and flattens.
  std::vector<Tensor> extract_features(const std::vector<Tensor>& images) const {
    if (static_cast<int>(images.size()) != config.branches) {
      raise(ErrorKind::shape_mismatch,
            "model has " + std::to_string(config.branches) + " branches, got " +
                std::to_string(images.size()) + " inputs");
    }
    std::vector<Tensor> feats;
    feats.reserve(images.size());
    for (const Tensor& img : images) {
      Tensor fm = backbone.forward(img);
      const int b = fm.dim(0);
      feats.push_back(fm.reshaped({b, static_cast<int>(fm.numel() / b)}));
      if (feats.back().dim(1) != head.feature_dim) {
        raise(ErrorKind::shape_mismatch, "feature dim " + std::to_string(feats.back().dim(1)) +
                                             " != head dim " + std::to_string(head.feature_dim));
      }
    }
    return feats;
  }

  /// Inference forward: probabilities in (0,1), shape (B, num_outputs).
  Tensor forward(const std::vector<Tensor>& images) const {
    const std::vector<Tensor> feats = extract_features(images);
    Tensor logits = head_forward(head, feats, false, nullptr, nullptr);
    for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = detail::sigmoidf(logits[i]);
    return logits;
  }
};

inline int64_t head_param_count(const Head& h) {
  int64_t n = h.dense_kernel.numel() + h.dense_bias.numel();
  if (h.use_lstm) n += h.lstm_kernel.numel() + h.lstm_recurrent.numel() + h.lstm_bias.numel();
  return n;
}

inline ParamCounts count_parameters(const BuiltModel& m) {
  ParamCounts c;
  c.frozen = m.backbone.param_count();
  c.trainable = head_param_count(m.head);
  c.total = c.frozen + c.trainable;
  return c;
}

/// Builds backbone + head per the config. The same seed yields bitwise
/// identical initial parameters.
inline BuiltModel build_model(const ModelConfig& config) {
  validate_config(config);
  BuiltModel m;
  m.config = config;
  m.backbone = build_backbone(config.backbone, config.channels, config.init_seed);

  const auto out_shape = backbone_output_shape(m.backbone, config.input_size);
  Head h;
  h.use_lstm = config.use_lstm;
  h.seq_mode = config.lstm_sequence_mode;
  h.branches = config.branches;
  h.feature_dim = out_shape[0] * out_shape[1] * out_shape[2];
  h.lstm_units = config.lstm_units;
  h.num_outputs = config.num_outputs;
  h.dropout_rate = config.dropout_rate;

  DeterministicRng rng(mix_seed(config.init_seed, 0x68656164ull));  // "head"
  if (h.use_lstm) {
    const int lin = h.lstm_input_dim(), u = h.lstm_units;
    h.lstm_kernel = Tensor({lin, 4 * u});
    h.lstm_recurrent = Tensor({u, 4 * u});
    h.lstm_bias = Tensor({4 * u});
    glorot_uniform(h.lstm_kernel, lin, 4 * u, rng);
    glorot_uniform(h.lstm_recurrent, u, 4 * u, rng);
    for (int j = 0; j < u; ++j) h.lstm_bias[u + j] = 1.0f;  // forget-gate bias 1
  }
  const int din = h.dense_input_dim();
  h.dense_kernel = Tensor({din, h.num_outputs});
  h.dense_bias = Tensor({h.num_outputs});
  glorot_uniform(h.dense_kernel, din, h.num_outputs, rng);

  m.head = std::move(h);
  return m;
}

/// 3-branch architecture (shared frozen CNN; optional LSTM head).
inline BuiltModel build_sequence_model(ModelConfig config) {
  config.branches = 3;
  return build_model(config);
}

/// Single-image baseline: backbone -> flatten -> dropout -> dense-15.
inline BuiltModel build_single_image_model(ModelConfig config) {
  config.branches = 1;
  if (config.use_lstm) raise(ErrorKind::config_error, "the single-image baseline has no LSTM head");
  return build_model(config);
}

// ---------------------------------------------------------------------------
// Digests and checkpoints
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

/// Digest of every frozen (backbone) parameter byte.
inline uint64_t frozen_digest(const BuiltModel& m) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& p : m.backbone.params) {
    h = fnv1a64(p.value.data(), sizeof(float) * static_cast<size_t>(p.value.numel()), h);
  }
  return h;
}

inline uint64_t trainable_digest(const BuiltModel& m) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](const Tensor& t) {
    h = fnv1a64(t.data(), sizeof(float) * static_cast<size_t>(t.numel()), h);
  };
  if (m.head.use_lstm) {
    mix(m.head.lstm_kernel);
    mix(m.head.lstm_recurrent);
    mix(m.head.lstm_bias);
  }
  mix(m.head.dense_kernel);
  mix(m.head.dense_bias);
  return h;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"backbone", std::string(backbone_name(c.backbone))},
                        {"use_lstm", c.use_lstm},
                        {"lstm_units", c.lstm_units},
                        {"lstm_sequence_mode", std::string(lstm_sequence_mode_name(c.lstm_sequence_mode))},
                        {"dropout_rate", c.dropout_rate},
                        {"input_size", c.input_size},
                        {"channels", c.channels},
                        {"num_outputs", c.num_outputs},
                        {"branches", c.branches},
                        {"pretrained", c.pretrained},
                        {"init_seed", c.init_seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.backbone = parse_backbone(j.at("backbone").get<std::string>());
  c.use_lstm = j.at("use_lstm").get<bool>();
  c.lstm_units = j.at("lstm_units").get<int>();
  c.lstm_sequence_mode = parse_lstm_sequence_mode(j.at("lstm_sequence_mode").get<std::string>());
  c.dropout_rate = j.at("dropout_rate").get<float>();
  c.input_size = j.at("input_size").get<int>();
  c.channels = j.at("channels").get<int>();
  c.num_outputs = j.at("num_outputs").get<int>();
  c.branches = j.at("branches").get<int>();
  c.pretrained = j.value("pretrained", false);
  c.init_seed = j.at("init_seed").get<uint64_t>();
  return c;
}

inline constexpr char kCheckpointMagic[8] = {'X', 'R', 'S', 'Q', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  const uint32_t nlen = static_cast<uint32_t>(name.size());
  out.write(reinterpret_cast<const char*>(&nlen), sizeof nlen);
  out.write(name.data(), nlen);
  const uint32_t nd = static_cast<uint32_t>(t.shape().size());
  out.write(reinterpret_cast<const char*>(&nd), sizeof nd);
  for (int d : t.shape()) {
    const int32_t dd = d;
    out.write(reinterpret_cast<const char*>(&dd), sizeof dd);
  }
  out.write(reinterpret_cast<const char*>(t.data()), sizeof(float) * static_cast<size_t>(t.numel()));
}

inline std::pair<std::string, Tensor> read_tensor(std::istream& in) {
  uint32_t nlen = 0;
  in.read(reinterpret_cast<char*>(&nlen), sizeof nlen);
  if (!in || nlen > 4096) raise(ErrorKind::decode_error, "corrupt checkpoint tensor header");
  std::string name(nlen, '\0');
  in.read(name.data(), nlen);
  uint32_t nd = 0;
  in.read(reinterpret_cast<char*>(&nd), sizeof nd);
  if (!in || nd > 8) raise(ErrorKind::decode_error, "corrupt checkpoint tensor rank");
  std::vector<int> shape(nd);
  for (auto& d : shape) {
    int32_t dd = 0;
    in.read(reinterpret_cast<char*>(&dd), sizeof dd);
    if (dd <= 0) raise(ErrorKind::decode_error, "corrupt checkpoint dimension");
    d = dd;
  }
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()), sizeof(float) * static_cast<size_t>(t.numel()));
  if (!in) raise(ErrorKind::decode_error, "truncated checkpoint tensor data");
  return {std::move(name), std::move(t)};
}

}  // namespace detail

/// Versioned checkpoint: config + descriptor JSON, then every parameter
/// tensor with its frozen/trainable partition tag.
inline void save_checkpoint(const BuiltModel& m, const std::string& path,
                            const std::string& view = "") {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::io_error, "cannot open checkpoint '" + path + "' for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);

  nlohmann::json meta = {{"config", config_to_json(m.config)}, {"view", view}};
  const std::string meta_str = meta.dump();
  const uint32_t mlen = static_cast<uint32_t>(meta_str.size());
  out.write(reinterpret_cast<const char*>(&mlen), sizeof mlen);
  out.write(meta_str.data(), mlen);

  uint64_t count = m.backbone.params.size();
  count += m.head.use_lstm ? 5 : 2;
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (const auto& p : m.backbone.params) detail::write_tensor(out, "frozen/" + p.name, p.value);
  if (m.head.use_lstm) {
    detail::write_tensor(out, "trainable/lstm/kernel", m.head.lstm_kernel);
    detail::write_tensor(out, "trainable/lstm/recurrent_kernel", m.head.lstm_recurrent);
    detail::write_tensor(out, "trainable/lstm/bias", m.head.lstm_bias);
  }
  detail::write_tensor(out, "trainable/dense/kernel", m.head.dense_kernel);
  detail::write_tensor(out, "trainable/dense/bias", m.head.dense_bias);
  if (!out) raise(ErrorKind::io_error, "failed writing checkpoint '" + path + "'");
}

struct LoadedCheckpoint {
  BuiltModel model;
  std::string view;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::io_error, "cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    raise(ErrorKind::version_mismatch, "'" + path + "' is not a checkpoint file");
  }
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion) {
    raise(ErrorKind::version_mismatch, "checkpoint version " + std::to_string(version) +
                                           ", expected " + std::to_string(kCheckpointVersion));
  }
  uint32_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof mlen);
  if (!in || mlen > (1u << 20)) raise(ErrorKind::decode_error, "corrupt checkpoint metadata");
  std::string meta_str(mlen, '\0');
  in.read(meta_str.data(), mlen);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::decode_error, std::string("checkpoint metadata: ") + e.what());
  }

  LoadedCheckpoint loaded;
  loaded.view = meta.value("view", "");
  const ModelConfig config = config_from_json(meta.at("config"));
  loaded.model = build_model(config);  // same shapes; values overwritten below
  BuiltModel& m = loaded.model;

  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  std::map<std::string, Tensor*> slots;
  for (auto& p : m.backbone.params) slots["frozen/" + p.name] = &p.value;
  if (m.head.use_lstm) {
    slots["trainable/lstm/kernel"] = &m.head.lstm_kernel;
    slots["trainable/lstm/recurrent_kernel"] = &m.head.lstm_recurrent;
    slots["trainable/lstm/bias"] = &m.head.lstm_bias;
  }
  slots["trainable/dense/kernel"] = &m.head.dense_kernel;
  slots["trainable/dense/bias"] = &m.head.dense_bias;
  if (count != slots.size()) {
    raise(ErrorKind::version_mismatch, "checkpoint holds " + std::to_string(count) +
                                           " tensors, model needs " + std::to_string(slots.size()));
  }
  for (uint64_t i = 0; i < count; ++i) {
    auto [name, tensor] = detail::read_tensor(in);
    auto it = slots.find(name);
    if (it == slots.end()) raise(ErrorKind::version_mismatch, "unexpected checkpoint tensor '" + name + "'");
    if (it->second->shape() != tensor.shape()) {
      raise(ErrorKind::version_mismatch, "shape mismatch for checkpoint tensor '" + name + "'");
    }
    *it->second = std::move(tensor);
  }
  return loaded;
}

}  // namespace xrseq
