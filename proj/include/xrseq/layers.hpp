#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "xrseq/error.hpp"
#include "xrseq/rng.hpp"
#include "xrseq/tensor.hpp"

namespace xrseq {

// ---------------------------------------------------------------------------
// Feature-extractor graph. Backbones are frozen for the whole lifetime of a
// model, so the graph is forward-only: a flat node list in topological
// order, executed over NHWC batches. Parameters live in a named store so
// they can be counted, digested, and checkpointed.
// ---------------------------------------------------------------------------

enum class LayerKind { input, conv, dwconv, bn, relu, relu6, maxpool, avgpool, add, concat };

struct LayerNode {
  LayerKind kind = LayerKind::input;
  int in0 = -1, in1 = -1;
  int kernel = 0, stride = 1;
  int pad_t = 0, pad_b = 0, pad_l = 0, pad_r = 0;
  int out_channels = 0;
  bool bias = false;
  float epsilon = 1.001e-5f;
  // parameter store indices: conv weight/bias, or bn gamma/beta/mean/var
  int p0 = -1, p1 = -1, p2 = -1, p3 = -1;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

class FeatureExtractor {
 public:
  std::string kind;
  int in_channels = 3;
  std::vector<LayerNode> nodes;
  std::vector<NamedTensor> params;

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
  }

  /// Runs the graph over a (B,H,W,C) batch; returns the final feature map.
  Tensor forward(const Tensor& input) const;

  /// Deterministic init: conv/dense kernels Glorot-uniform, biases zero,
  /// batch-norm to identity (gamma 1, beta 0, mean 0, var 1).
  void init_params(DeterministicRng& rng);
};

namespace ops {

inline int conv_out_dim(int in, int pad_lo, int pad_hi, int kernel, int stride) {
  return (in + pad_lo + pad_hi - kernel) / stride + 1;
}

/// im2col + GEMM convolution. Weights are HWIO, flattened row-major, so
/// the patch matrix multiplies them directly.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const LayerNode& n) {
  const int b = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
  const int k = n.kernel, s = n.stride, cout = n.out_channels;
  const int ho = conv_out_dim(h, n.pad_t, n.pad_b, k, s);
  const int wo = conv_out_dim(wd, n.pad_l, n.pad_r, k, s);
  Tensor out({b, ho, wo, cout});

  if (k == 1 && s == 1 && n.pad_t == 0 && n.pad_b == 0 && n.pad_l == 0 && n.pad_r == 0) {
    // 1x1 stride-1: a plain matrix product over all pixels
    const int rows = b * h * wd;
    as_matrix(out, rows, cout).noalias() = as_matrix(x, rows, cin) * as_matrix(w, cin, cout);
  } else {
    const int patch = k * k * cin;
    Tensor cols({ho * wo, patch});
    for (int bi = 0; bi < b; ++bi) {
      const float* src = x.data() + static_cast<int64_t>(bi) * h * wd * cin;
      float* col = cols.data();
      for (int oy = 0; oy < ho; ++oy) {
        const int iy0 = oy * s - n.pad_t;
        for (int ox = 0; ox < wo; ++ox) {
          const int ix0 = ox * s - n.pad_l;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= h) {
              std::fill(col, col + k * cin, 0.0f);
              col += k * cin;
              continue;
            }
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= wd) {
                std::fill(col, col + cin, 0.0f);
              } else {
                const float* px = src + (static_cast<int64_t>(iy) * wd + ix) * cin;
                std::copy(px, px + cin, col);
              }
              col += cin;
            }
          }
        }
      }
      MatrixMap(out.data() + static_cast<int64_t>(bi) * ho * wo * cout, ho * wo, cout).noalias() =
          as_matrix(cols, ho * wo, patch) * as_matrix(w, patch, cout);
    }
  }
  if (bias) {
    const int64_t pixels = static_cast<int64_t>(b) * ho * wo;
    for (int64_t p = 0; p < pixels; ++p) {
      float* row = out.data() + p * cout;
      for (int c = 0; c < cout; ++c) row[c] += (*bias)[c];
    }
  }
  return out;
}

/// Depthwise 3x3-style convolution: one kernel per channel, weights (k,k,C).
inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const LayerNode& n) {
  const int b = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  const int k = n.kernel, s = n.stride;
  const int ho = conv_out_dim(h, n.pad_t, n.pad_b, k, s);
  const int wo = conv_out_dim(wd, n.pad_l, n.pad_r, k, s);
  Tensor out({b, ho, wo, c});
  for (int bi = 0; bi < b; ++bi) {
    const float* src = x.data() + static_cast<int64_t>(bi) * h * wd * c;
    float* dst = out.data() + static_cast<int64_t>(bi) * ho * wo * c;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        float* opx = dst + (static_cast<int64_t>(oy) * wo + ox) * c;
        std::fill(opx, opx + c, 0.0f);
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * s - n.pad_t + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * s - n.pad_l + kx;
            if (ix < 0 || ix >= wd) continue;
            const float* ipx = src + (static_cast<int64_t>(iy) * wd + ix) * c;
            const float* wpx = w.data() + (static_cast<int64_t>(ky) * k + kx) * c;
            for (int ch = 0; ch < c; ++ch) opx[ch] += ipx[ch] * wpx[ch];
          }
        }
      }
    }
  }
  return out;
}

inline Tensor batchnorm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                  const Tensor& mean, const Tensor& var, float eps) {
  const int c = x.dim(static_cast<size_t>(x.ndim() - 1));
  Tensor out = x;
  std::vector<float> scale(static_cast<size_t>(c)), shift(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i) {
    scale[static_cast<size_t>(i)] = gamma[i] / std::sqrt(var[i] + eps);
    shift[static_cast<size_t>(i)] = beta[i] - mean[i] * scale[static_cast<size_t>(i)];
  }
  const int64_t pixels = x.numel() / c;
  for (int64_t p = 0; p < pixels; ++p) {
    float* row = out.data() + p * c;
    for (int i = 0; i < c; ++i) row[i] = row[i] * scale[static_cast<size_t>(i)] + shift[static_cast<size_t>(i)];
  }
  return out;
}

/// Pooling with zero padding (models an explicit zero-pad layer ahead of
/// a valid pool, the convention the backbone graphs use).
inline Tensor pool2d(const Tensor& x, const LayerNode& n, bool is_max) {
  const int b = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  const int k = n.kernel, s = n.stride;
  const int ho = conv_out_dim(h, n.pad_t, n.pad_b, k, s);
  const int wo = conv_out_dim(wd, n.pad_l, n.pad_r, k, s);
  Tensor out({b, ho, wo, c});
  std::vector<float> acc(static_cast<size_t>(c));
  for (int bi = 0; bi < b; ++bi) {
    const float* src = x.data() + static_cast<int64_t>(bi) * h * wd * c;
    float* dst = out.data() + static_cast<int64_t>(bi) * ho * wo * c;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        if (is_max) std::fill(acc.begin(), acc.end(), -std::numeric_limits<float>::infinity());
        else std::fill(acc.begin(), acc.end(), 0.0f);
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * s - n.pad_t + ky;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * s - n.pad_l + kx;
            const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < wd;
            for (int ch = 0; ch < c; ++ch) {
              const float v = inside ? src[(static_cast<int64_t>(iy) * wd + ix) * c + ch] : 0.0f;
              if (is_max) acc[static_cast<size_t>(ch)] = std::max(acc[static_cast<size_t>(ch)], v);
              else acc[static_cast<size_t>(ch)] += v;
            }
          }
        }
        float* opx = dst + (static_cast<int64_t>(oy) * wo + ox) * c;
        const float inv = 1.0f / static_cast<float>(k * k);
        for (int ch = 0; ch < c; ++ch) opx[ch] = is_max ? acc[static_cast<size_t>(ch)] : acc[static_cast<size_t>(ch)] * inv;
      }
    }
  }
  return out;
}

}  // namespace ops

inline Tensor FeatureExtractor::forward(const Tensor& input) const {
  if (input.ndim() != 4 || input.dim(3) != in_channels) {
    raise(ErrorKind::shape_mismatch,
          "backbone expects (B,H,W," + std::to_string(in_channels) + "), got " + input.shape_str());
  }
  // last consumer of each node, so activations can be released eagerly
  std::vector<int> last_use(nodes.size(), static_cast<int>(nodes.size()) - 1);
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].in0 >= 0) last_use[static_cast<size_t>(nodes[i].in0)] = static_cast<int>(i);
    if (nodes[i].in1 >= 0) last_use[static_cast<size_t>(nodes[i].in1)] = static_cast<int>(i);
  }

  std::vector<Tensor> acts(nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i) {
    const LayerNode& n = nodes[i];
    const Tensor& a = n.in0 >= 0 ? acts[static_cast<size_t>(n.in0)] : input;
    switch (n.kind) {
      case LayerKind::input:
        acts[i] = input;
        break;
      case LayerKind::conv:
        acts[i] = ops::conv2d(a, params[static_cast<size_t>(n.p0)].value,
                              n.bias ? &params[static_cast<size_t>(n.p1)].value : nullptr, n);
        break;
      case LayerKind::dwconv:
        acts[i] = ops::depthwise_conv2d(a, params[static_cast<size_t>(n.p0)].value, n);
        break;
      case LayerKind::bn:
        acts[i] = ops::batchnorm_inference(a, params[static_cast<size_t>(n.p0)].value,
                                           params[static_cast<size_t>(n.p1)].value,
                                           params[static_cast<size_t>(n.p2)].value,
                                           params[static_cast<size_t>(n.p3)].value, n.epsilon);
        break;
      case LayerKind::relu: {
        acts[i] = a;
        for (int64_t j = 0; j < acts[i].numel(); ++j) acts[i][j] = std::max(acts[i][j], 0.0f);
        break;
      }
      case LayerKind::relu6: {
        acts[i] = a;
        for (int64_t j = 0; j < acts[i].numel(); ++j)
          acts[i][j] = std::min(std::max(acts[i][j], 0.0f), 6.0f);
        break;
      }
      case LayerKind::maxpool:
        acts[i] = ops::pool2d(a, n, true);
        break;
      case LayerKind::avgpool:
        acts[i] = ops::pool2d(a, n, false);
        break;
      case LayerKind::add: {
        const Tensor& b2 = acts[static_cast<size_t>(n.in1)];
        acts[i] = a;
        for (int64_t j = 0; j < acts[i].numel(); ++j) acts[i][j] += b2[j];
        break;
      }
      case LayerKind::concat: {
        const Tensor& b2 = acts[static_cast<size_t>(n.in1)];
        const int bb = a.dim(0), hh = a.dim(1), ww = a.dim(2);
        const int c1 = a.dim(3), c2 = b2.dim(3);
        Tensor out({bb, hh, ww, c1 + c2});
        const int64_t pixels = static_cast<int64_t>(bb) * hh * ww;
        for (int64_t p = 0; p < pixels; ++p) {
          std::copy(a.data() + p * c1, a.data() + (p + 1) * c1, out.data() + p * (c1 + c2));
          std::copy(b2.data() + p * c2, b2.data() + (p + 1) * c2, out.data() + p * (c1 + c2) + c1);
        }
        acts[i] = std::move(out);
        break;
      }
    }
    // release inputs that are no longer needed
    if (n.in0 >= 0 && last_use[static_cast<size_t>(n.in0)] == static_cast<int>(i)) {
      acts[static_cast<size_t>(n.in0)] = Tensor();
    }
    if (n.in1 >= 0 && last_use[static_cast<size_t>(n.in1)] == static_cast<int>(i)) {
      acts[static_cast<size_t>(n.in1)] = Tensor();
    }
  }
  return acts.back();
}

inline void glorot_uniform(Tensor& t, int fan_in, int fan_out, DeterministicRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<float>(rng.next_range(-limit, limit));
  }
}

inline void FeatureExtractor::init_params(DeterministicRng& rng) {
  for (const auto& node : nodes) {
    switch (node.kind) {
      case LayerKind::conv: {
        Tensor& w = params[static_cast<size_t>(node.p0)].value;  // (k,k,cin,cout)
        const int k = node.kernel;
        const int cin = w.dim(2), cout = w.dim(3);
        glorot_uniform(w, k * k * cin, k * k * cout, rng);
        // biases stay zero
        break;
      }
      case LayerKind::dwconv: {
        Tensor& w = params[static_cast<size_t>(node.p0)].value;  // (k,k,c)
        const int k = node.kernel;
        glorot_uniform(w, k * k, k * k, rng);
        break;
      }
      case LayerKind::bn: {
        Tensor& gamma = params[static_cast<size_t>(node.p0)].value;
        Tensor& var = params[static_cast<size_t>(node.p3)].value;
        for (int64_t i = 0; i < gamma.numel(); ++i) gamma[i] = 1.0f;
        for (int64_t i = 0; i < var.numel(); ++i) var[i] = 1.0f;
        break;
      }
      default:
        break;
    }
  }
}

}  // namespace xrseq
