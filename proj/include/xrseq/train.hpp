#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xrseq/error.hpp"
#include "xrseq/image.hpp"
#include "xrseq/model.hpp"
#include "xrseq/rng.hpp"
#include "xrseq/samples.hpp"

namespace xrseq {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 100;
  float learning_rate = 1e-2f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-7f;
  uint64_t seed = 0;
  bool shuffle_each_epoch = true;
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.epochs < 1) raise(ErrorKind::config_error, "epochs must be >= 1");
  if (c.batch_size < 1) raise(ErrorKind::config_error, "batch_size must be >= 1");
  if (!(c.learning_rate >= 0.0f) || !std::isfinite(c.learning_rate)) {
    raise(ErrorKind::config_error, "learning_rate must be finite and non-negative");
  }
}

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;  // per-label binary accuracy at 0.5, macro-averaged
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

/// Adam over the head parameters only; the backbone never enters the
/// optimizer state.
class AdamOptimizer {
 public:
  AdamOptimizer(const Head& head, const TrainConfig& cfg)
      : cfg_(cfg), m_(HeadGrads::zeros_like(head)), v_(HeadGrads::zeros_like(head)) {}

  void step(Head& head, const HeadGrads& g) {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    if (head.use_lstm) {
      update(head.lstm_kernel, g.lstm_kernel, m_.lstm_kernel, v_.lstm_kernel, bc1, bc2);
      update(head.lstm_recurrent, g.lstm_recurrent, m_.lstm_recurrent, v_.lstm_recurrent, bc1, bc2);
      update(head.lstm_bias, g.lstm_bias, m_.lstm_bias, v_.lstm_bias, bc1, bc2);
    }
    update(head.dense_kernel, g.dense_kernel, m_.dense_kernel, v_.dense_kernel, bc1, bc2);
    update(head.dense_bias, g.dense_bias, m_.dense_bias, v_.dense_bias, bc1, bc2);
  }

 private:
  void update(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, double bc1, double bc2) {
    const float lr = cfg_.learning_rate, b1 = cfg_.beta1, b2 = cfg_.beta2, eps = cfg_.epsilon;
    for (int64_t i = 0; i < p.numel(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const float mhat = static_cast<float>(m[i] / bc1);
      const float vhat = static_cast<float>(v[i] / bc2);
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

  TrainConfig cfg_;
  int64_t t_ = 0;
  HeadGrads m_, v_;
};

/// Per-branch feature matrices for a fixed sample list, plus targets.
/// Since the backbone is frozen, these are constants for a whole run.
struct FeatureSet {
  std::vector<Tensor> branches;  // each (N, feature_dim)
  Tensor targets;                // (N, num_outputs)
  int size = 0;
};

inline std::vector<Tensor> branch_inputs(const BuiltModel& model, const TripletBatch& batch) {
  if (model.config.branches == 3) return {batch.first, batch.second, batch.third};
  return {batch.third};  // single-image baseline reads the third (most recent) image
}

/// Runs the frozen backbone over every sample once, in input order,
/// chunked to bound memory.
inline FeatureSet extract_feature_set(const BuiltModel& model, const std::vector<SampleSet>& samples,
                                      const ImageSource& source, int chunk = 64) {
  FeatureSet fs;
  fs.size = static_cast<int>(samples.size());
  const int d = model.head.feature_dim;
  for (int b = 0; b < model.config.branches; ++b) fs.branches.emplace_back(std::vector<int>{fs.size, d});
  fs.targets = Tensor({fs.size, model.config.num_outputs});

  for (int start = 0; start < fs.size; start += chunk) {
    const int end = std::min(start + chunk, fs.size);
    const std::vector<SampleSet> part(samples.begin() + start, samples.begin() + end);
    const TripletBatch batch = assemble_batch(part, source, model.config.channels, model.config.input_size);
    const std::vector<Tensor> feats = model.extract_features(branch_inputs(model, batch));
    for (size_t br = 0; br < feats.size(); ++br) {
      std::copy(feats[br].data(), feats[br].data() + feats[br].numel(),
                fs.branches[br].data() + static_cast<int64_t>(start) * d);
    }
    std::copy(batch.targets.data(), batch.targets.data() + batch.targets.numel(),
              fs.targets.data() + static_cast<int64_t>(start) * model.config.num_outputs);
  }
  return fs;
}

namespace detail {

inline std::vector<Tensor> gather_rows(const FeatureSet& fs, const std::vector<int>& rows,
                                       Tensor& targets_out) {
  const int b = static_cast<int>(rows.size());
  const int out = fs.targets.dim(1);
  std::vector<Tensor> feats;
  for (const Tensor& full : fs.branches) {
    const int d = full.dim(1);
    Tensor t({b, d});
    for (int r = 0; r < b; ++r) {
      std::copy(full.data() + static_cast<int64_t>(rows[static_cast<size_t>(r)]) * d,
                full.data() + static_cast<int64_t>(rows[static_cast<size_t>(r)] + 1) * d,
                t.data() + static_cast<int64_t>(r) * d);
    }
    feats.push_back(std::move(t));
  }
  targets_out = Tensor({b, out});
  for (int r = 0; r < b; ++r) {
    std::copy(fs.targets.data() + static_cast<int64_t>(rows[static_cast<size_t>(r)]) * out,
              fs.targets.data() + static_cast<int64_t>(rows[static_cast<size_t>(r)] + 1) * out,
              targets_out.data() + static_cast<int64_t>(r) * out);
  }
  return feats;
}

inline double eval_loss_and_accuracy(const Head& head, const FeatureSet& fs, int chunk,
                                     double* accuracy_out) {
  double loss_sum = 0.0;
  int64_t correct = 0, cells = 0;
  std::vector<int> rows;
  for (int start = 0; start < fs.size; start += chunk) {
    const int end = std::min(start + chunk, fs.size);
    rows.resize(static_cast<size_t>(end - start));
    for (int i = start; i < end; ++i) rows[static_cast<size_t>(i - start)] = i;
    Tensor targets;
    const std::vector<Tensor> feats = gather_rows(fs, rows, targets);
    const Tensor logits = head_forward(head, feats, false, nullptr, nullptr);
    loss_sum += bce_from_logits(logits, targets, nullptr) * static_cast<double>(end - start);
    for (int64_t i = 0; i < logits.numel(); ++i) {
      const bool pred = logits[i] > 0.0f;  // sigmoid(z) > 0.5 iff z > 0
      const bool truth = targets[i] > 0.5f;
      correct += pred == truth ? 1 : 0;
      ++cells;
    }
  }
  if (accuracy_out) *accuracy_out = cells ? static_cast<double>(correct) / static_cast<double>(cells) : 0.0;
  return fs.size ? loss_sum / static_cast<double>(fs.size) : 0.0;
}

}  // namespace detail

/// Training loop over precomputed features. Only trainable parameters
/// are updated; frozen backbone parameters are never touched
/// (digest-checkable). A non-finite loss aborts with the offending
/// epoch and batch.
inline TrainHistory train_on_features(BuiltModel& model, const FeatureSet& train_fs,
                                      const FeatureSet& val_fs, const TrainConfig& cfg) {
  validate_train_config(cfg);
  AdamOptimizer adam(model.head, cfg);
  DeterministicRng shuffle_rng(mix_seed(cfg.seed, 0x73687566ull));  // "shuf"
  DeterministicRng dropout_rng(mix_seed(cfg.seed, 0x64726f70ull));  // "drop"

  std::vector<int> order(static_cast<size_t>(train_fs.size));
  for (int i = 0; i < train_fs.size; ++i) order[static_cast<size_t>(i)] = i;

  TrainHistory history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto tick = std::chrono::steady_clock::now();
    if (cfg.shuffle_each_epoch) shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int batch_index = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const std::vector<int> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
      Tensor targets;
      const std::vector<Tensor> feats = detail::gather_rows(train_fs, rows, targets);

      HeadCache cache;
      const Tensor logits = head_forward(model.head, feats, true, &dropout_rng, &cache);
      Tensor dlogits;
      const double loss = bce_from_logits(logits, targets, &dlogits);
      if (!std::isfinite(loss)) {
        raise(ErrorKind::numerical_error, "non-finite loss at epoch " + std::to_string(epoch + 1) +
                                              ", batch " + std::to_string(batch_index + 1));
      }
      HeadGrads grads = HeadGrads::zeros_like(model.head);
      head_backward(model.head, cache, dlogits, grads);
      adam.step(model.head, grads);

      loss_sum += loss * static_cast<double>(rows.size());
      ++batch_index;
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(train_fs.size);
    stats.val_loss = detail::eval_loss_and_accuracy(model.head, val_fs, cfg.batch_size, &stats.val_accuracy);
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();
    history.epochs.push_back(stats);
  }
  return history;
}

/// Trains from raw samples: runs the frozen backbone once over both
/// splits, then optimizes the head on the cached features (identical to
/// recomputing them every step, since the backbone cannot change).
inline TrainHistory train(BuiltModel& model, const std::vector<SampleSet>& train_samples,
                          const std::vector<SampleSet>& val_samples, const ImageSource& source,
                          const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (train_samples.empty()) raise(ErrorKind::empty_input, "empty training split");
  if (val_samples.empty()) raise(ErrorKind::empty_input, "empty validation split");

  const FeatureSet train_fs = extract_feature_set(model, train_samples, source, cfg.batch_size);
  const FeatureSet val_fs = extract_feature_set(model, val_samples, source, cfg.batch_size);
  return train_on_features(model, train_fs, val_fs, cfg);
}

/// Inference on an assembled batch; deterministic (dropout disabled).
inline Tensor predict_batch(const BuiltModel& model, const TripletBatch& batch) {
  if (batch.batch_size() == 0) raise(ErrorKind::empty_input, "empty batch");
  const Tensor& sample = batch.third;
  if (sample.dim(1) != model.config.input_size || sample.dim(3) != model.config.channels) {
    raise(ErrorKind::shape_mismatch, "batch shape " + sample.shape_str() + " does not match model input (" +
                                         std::to_string(model.config.input_size) + "," +
                                         std::to_string(model.config.channels) + ")");
  }
  return model.forward(branch_inputs(model, batch));
}

}  // namespace xrseq
