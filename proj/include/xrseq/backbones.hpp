#pragma once

#include <string>
#include <vector>

#include "xrseq/error.hpp"
#include "xrseq/layers.hpp"
#include "xrseq/rng.hpp"

namespace xrseq {

enum class BackboneKind { densenet169, resnet50v2, mobilenetv2, tiny };

inline std::string_view backbone_name(BackboneKind k) {
  switch (k) {
    case BackboneKind::densenet169: return "densenet169";
    case BackboneKind::resnet50v2: return "resnet50v2";
    case BackboneKind::mobilenetv2: return "mobilenetv2";
    case BackboneKind::tiny: return "tiny";
  }
  return "?";
}

inline BackboneKind parse_backbone(const std::string& s) {
  if (s == "densenet169") return BackboneKind::densenet169;
  if (s == "resnet50v2") return BackboneKind::resnet50v2;
  if (s == "mobilenetv2") return BackboneKind::mobilenetv2;
  if (s == "tiny") return BackboneKind::tiny;
  raise(ErrorKind::unknown_backbone, "'" + s + "' (known: densenet169, resnet50v2, mobilenetv2, tiny)");
}

namespace detail {

/// Appends nodes/params to a FeatureExtractor, tracking per-node channel
/// counts so weight shapes fall out of the wiring.
class GraphBuilder {
 public:
  explicit GraphBuilder(FeatureExtractor& fx) : fx_(fx) {
    LayerNode n;
    n.kind = LayerKind::input;
    fx_.nodes.push_back(n);
    channels_.push_back(fx_.in_channels);
  }

  int conv(int in, int k, int stride, int pad_t, int pad_b, int pad_l, int pad_r, int cout,
           bool bias, const std::string& name) {
    LayerNode n;
    n.kind = LayerKind::conv;
    n.in0 = in;
    n.kernel = k;
    n.stride = stride;
    n.pad_t = pad_t; n.pad_b = pad_b; n.pad_l = pad_l; n.pad_r = pad_r;
    n.out_channels = cout;
    n.bias = bias;
    n.p0 = add_param(name + "/kernel", {k, k, channels_[static_cast<size_t>(in)], cout});
    if (bias) n.p1 = add_param(name + "/bias", {cout});
    return push(n, cout);
  }

  int conv_same(int in, int k, int cout, bool bias, const std::string& name) {
    const int p = (k - 1) / 2;
    return conv(in, k, 1, p, p, p, p, cout, bias, name);
  }

  int dwconv(int in, int k, int stride, int pad_t, int pad_b, int pad_l, int pad_r,
             const std::string& name) {
    LayerNode n;
    n.kind = LayerKind::dwconv;
    n.in0 = in;
    n.kernel = k;
    n.stride = stride;
    n.pad_t = pad_t; n.pad_b = pad_b; n.pad_l = pad_l; n.pad_r = pad_r;
    const int c = channels_[static_cast<size_t>(in)];
    n.out_channels = c;
    n.p0 = add_param(name + "/depthwise_kernel", {k, k, c});
    return push(n, c);
  }

  int bn(int in, const std::string& name, float eps = 1.001e-5f) {
    LayerNode n;
    n.kind = LayerKind::bn;
    n.in0 = in;
    n.epsilon = eps;
    const int c = channels_[static_cast<size_t>(in)];
    n.p0 = add_param(name + "/gamma", {c});
    n.p1 = add_param(name + "/beta", {c});
    n.p2 = add_param(name + "/moving_mean", {c});
    n.p3 = add_param(name + "/moving_variance", {c});
    return push(n, c);
  }

  int relu(int in) { return unary(in, LayerKind::relu); }
  int relu6(int in) { return unary(in, LayerKind::relu6); }

  int maxpool(int in, int k, int stride, int pad = 0) {
    return pool(in, LayerKind::maxpool, k, stride, pad);
  }
  int avgpool(int in, int k, int stride, int pad = 0) {
    return pool(in, LayerKind::avgpool, k, stride, pad);
  }

  int add(int a, int b) {
    LayerNode n;
    n.kind = LayerKind::add;
    n.in0 = a;
    n.in1 = b;
    return push(n, channels_[static_cast<size_t>(a)]);
  }

  int concat(int a, int b) {
    LayerNode n;
    n.kind = LayerKind::concat;
    n.in0 = a;
    n.in1 = b;
    return push(n, channels_[static_cast<size_t>(a)] + channels_[static_cast<size_t>(b)]);
  }

  int channels(int node) const { return channels_[static_cast<size_t>(node)]; }

 private:
  int unary(int in, LayerKind kind) {
    LayerNode n;
    n.kind = kind;
    n.in0 = in;
    return push(n, channels_[static_cast<size_t>(in)]);
  }

  int pool(int in, LayerKind kind, int k, int stride, int pad) {
    LayerNode n;
    n.kind = kind;
    n.in0 = in;
    n.kernel = k;
    n.stride = stride;
    n.pad_t = n.pad_b = n.pad_l = n.pad_r = pad;
    return push(n, channels_[static_cast<size_t>(in)]);
  }

  int push(const LayerNode& n, int out_channels) {
    fx_.nodes.push_back(n);
    channels_.push_back(out_channels);
    return static_cast<int>(fx_.nodes.size()) - 1;
  }

  int add_param(const std::string& name, std::vector<int> shape) {
    fx_.params.push_back({name, Tensor(std::move(shape))});
    return static_cast<int>(fx_.params.size()) - 1;
  }

  FeatureExtractor& fx_;
  std::vector<int> channels_;
};

inline void build_tiny(GraphBuilder& g) {
  // three conv blocks with average pooling; 128 -> 4 spatially
  int x = g.conv_same(0, 3, 8, true, "tiny_conv1");
  x = g.relu(x);
  x = g.avgpool(x, 4, 4);
  x = g.conv_same(x, 3, 16, true, "tiny_conv2");
  x = g.relu(x);
  x = g.avgpool(x, 4, 4);
  x = g.conv_same(x, 3, 32, true, "tiny_conv3");
  x = g.relu(x);
  g.avgpool(x, 2, 2);
}

inline void build_resnet50v2(GraphBuilder& g) {
  int x = g.conv(0, 7, 2, 3, 3, 3, 3, 64, true, "conv1_conv");
  x = g.maxpool(x, 3, 2, 1);

  const struct { int filters, blocks; } stacks[] = {{64, 3}, {128, 4}, {256, 6}, {512, 3}};
  for (size_t si = 0; si < 4; ++si) {
    const int f = stacks[si].filters;
    const int nblocks = stacks[si].blocks;
    for (int b = 1; b <= nblocks; ++b) {
      const std::string name = "conv" + std::to_string(si + 2) + "_block" + std::to_string(b);
      const bool conv_shortcut = (b == 1);
      const int stride = (b == nblocks) ? (si == 3 ? 1 : 2) : 1;

      int preact = g.bn(x, name + "_preact_bn");
      preact = g.relu(preact);

      int shortcut;
      if (conv_shortcut) {
        shortcut = g.conv(preact, 1, stride, 0, 0, 0, 0, 4 * f, true, name + "_0_conv");
      } else if (stride > 1) {
        shortcut = g.maxpool(x, 1, stride);
      } else {
        shortcut = x;
      }

      int y = g.conv(preact, 1, 1, 0, 0, 0, 0, f, false, name + "_1_conv");
      y = g.bn(y, name + "_1_bn");
      y = g.relu(y);
      y = g.conv(y, 3, stride, 1, 1, 1, 1, f, false, name + "_2_conv");
      y = g.bn(y, name + "_2_bn");
      y = g.relu(y);
      y = g.conv(y, 1, 1, 0, 0, 0, 0, 4 * f, true, name + "_3_conv");
      x = g.add(shortcut, y);
    }
  }
  x = g.bn(x, "post_bn");
  g.relu(x);
}

inline void build_densenet169(GraphBuilder& g) {
  const int growth = 32;
  const int blocks[] = {6, 12, 32, 32};

  int x = g.conv(0, 7, 2, 3, 3, 3, 3, 64, false, "conv1/conv");
  x = g.bn(x, "conv1/bn");
  x = g.relu(x);
  x = g.maxpool(x, 3, 2, 1);

  for (size_t bi = 0; bi < 4; ++bi) {
    const std::string block = "conv" + std::to_string(bi + 2);
    for (int i = 1; i <= blocks[bi]; ++i) {
      const std::string name = block + "_block" + std::to_string(i);
      int y = g.bn(x, name + "_0_bn");
      y = g.relu(y);
      y = g.conv(y, 1, 1, 0, 0, 0, 0, 4 * growth, false, name + "_1_conv");
      y = g.bn(y, name + "_1_bn");
      y = g.relu(y);
      y = g.conv(y, 3, 1, 1, 1, 1, 1, growth, false, name + "_2_conv");
      x = g.concat(x, y);
    }
    if (bi != 3) {
      const std::string name = "pool" + std::to_string(bi + 2);
      int t = g.bn(x, name + "_bn");
      t = g.relu(t);
      t = g.conv(t, 1, 1, 0, 0, 0, 0, g.channels(x) / 2, false, name + "_conv");
      x = g.avgpool(t, 2, 2);
    }
  }
  x = g.bn(x, "bn");
  g.relu(x);
}

inline void build_mobilenetv2(GraphBuilder& g) {
  const float bn_eps = 1e-3f;
  // stride-2 convs pad (0,1,0,1): explicit zero-pad for even inputs
  int x = g.conv(0, 3, 2, 0, 1, 0, 1, 32, false, "Conv1");
  x = g.bn(x, "bn_Conv1", bn_eps);
  x = g.relu6(x);

  const struct { int filters, stride, expansion; } cfg[] = {
      {16, 1, 1},  {24, 2, 6},  {24, 1, 6},  {32, 2, 6},  {32, 1, 6},  {32, 1, 6},
      {64, 2, 6},  {64, 1, 6},  {64, 1, 6},  {64, 1, 6},  {96, 1, 6},  {96, 1, 6},
      {96, 1, 6},  {160, 2, 6}, {160, 1, 6}, {160, 1, 6}, {320, 1, 6}};

  for (size_t i = 0; i < std::size(cfg); ++i) {
    const std::string name = "block_" + std::to_string(i);
    const int in_ch = g.channels(x);
    const int f = cfg[i].filters, s = cfg[i].stride, e = cfg[i].expansion;
    int t = x;
    if (e != 1) {
      t = g.conv(t, 1, 1, 0, 0, 0, 0, in_ch * e, false, name + "_expand");
      t = g.bn(t, name + "_expand_BN", bn_eps);
      t = g.relu6(t);
    }
    if (s == 1) {
      t = g.dwconv(t, 3, 1, 1, 1, 1, 1, name + "_depthwise");
    } else {
      t = g.dwconv(t, 3, 2, 0, 1, 0, 1, name + "_depthwise");
    }
    t = g.bn(t, name + "_depthwise_BN", bn_eps);
    t = g.relu6(t);
    t = g.conv(t, 1, 1, 0, 0, 0, 0, f, false, name + "_project");  // linear bottleneck
    t = g.bn(t, name + "_project_BN", bn_eps);
    x = (s == 1 && in_ch == f) ? g.add(x, t) : t;
  }

  x = g.conv(x, 1, 1, 0, 0, 0, 0, 1280, false, "Conv_1");
  x = g.bn(x, "Conv_1_bn", bn_eps);
  g.relu6(x);
}

}  // namespace detail

/// Builds the named feature extractor (classification top removed,
/// randomly initialized) for `channels`-channel inputs.
inline FeatureExtractor build_backbone(BackboneKind kind, int channels, uint64_t seed) {
  FeatureExtractor fx;
  fx.kind = std::string(backbone_name(kind));
  fx.in_channels = channels;
  detail::GraphBuilder g(fx);
  switch (kind) {
    case BackboneKind::tiny: detail::build_tiny(g); break;
    case BackboneKind::resnet50v2: detail::build_resnet50v2(g); break;
    case BackboneKind::densenet169: detail::build_densenet169(g); break;
    case BackboneKind::mobilenetv2: detail::build_mobilenetv2(g); break;
  }
  DeterministicRng rng(mix_seed(seed, 0x6261636b626f6eull));  // "backbon"
  fx.init_params(rng);
  return fx;
}

/// Spatial feature-map shape (h, w, c) for a square input.
inline std::array<int, 3> backbone_output_shape(const FeatureExtractor& fx, int input_size) {
  // run shape inference only: walk nodes tracking (h, w)
  std::vector<std::array<int, 3>> shapes(fx.nodes.size());
  for (size_t i = 0; i < fx.nodes.size(); ++i) {
    const LayerNode& n = fx.nodes[i];
    const auto in = n.in0 >= 0 ? shapes[static_cast<size_t>(n.in0)]
                               : std::array<int, 3>{input_size, input_size, fx.in_channels};
    switch (n.kind) {
      case LayerKind::input:
        shapes[i] = {input_size, input_size, fx.in_channels};
        break;
      case LayerKind::conv:
      case LayerKind::dwconv:
      case LayerKind::maxpool:
      case LayerKind::avgpool: {
        const int h = ops::conv_out_dim(in[0], n.pad_t, n.pad_b, n.kernel, n.stride);
        const int w = ops::conv_out_dim(in[1], n.pad_l, n.pad_r, n.kernel, n.stride);
        const int c = (n.kind == LayerKind::conv) ? n.out_channels : in[2];
        shapes[i] = {h, w, c};
        break;
      }
      case LayerKind::concat: {
        const auto b = shapes[static_cast<size_t>(n.in1)];
        shapes[i] = {in[0], in[1], in[2] + b[2]};
        break;
      }
      default:
        shapes[i] = in;
        break;
    }
  }
  return shapes.back();
}

}  // namespace xrseq
