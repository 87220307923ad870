#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ep2/error.hpp"

// Structural calculator for the compact keypoint network family: layer
// inventory, parameter counts, FLOP estimates and encoder receptive field.
// Nothing here touches tensors.

namespace ep2::arch {

struct ModelConfig {
  char size = 'T';  // T, S, M, L or E
  int c1 = 0;
  int c2 = 0;
  int c3 = 0;
  int c4 = 0;
  int c_agg = 0;
  int c_det = 0;
  int c_desc = 0;

  std::string name() const { return std::string(1, size) + std::to_string(c_desc); }
};

namespace detail {

struct SizeRow {
  char size;
  int c1, c2, c3, c4, c_agg, c_det;
  bool allows_64;
};

inline constexpr std::array<SizeRow, 5> kSizes{{
    {'T', 8, 8, 16, 24, 48, 8, false},
    {'S', 8, 8, 24, 32, 64, 8, true},
    {'M', 8, 16, 32, 48, 96, 8, true},
    {'L', 8, 16, 48, 64, 128, 8, true},
    {'E', 16, 16, 48, 64, 128, 16, true},
}};

}  // namespace detail

/// Looks up one of the published size/descriptor-dimension combinations.
/// Throws InvalidConfig for unknown sizes, dims outside {32, 48, 64} and the
/// Tiny model at 64 dims.
inline ModelConfig named_config(char size, int c_desc) {
  if (c_desc != 32 && c_desc != 48 && c_desc != 64) {
    throw Error(ErrorCode::InvalidConfig, "descriptor dim must be 32, 48 or 64");
  }
  for (const auto& row : detail::kSizes) {
    if (row.size != size) continue;
    if (c_desc == 64 && !row.allows_64) {
      throw Error(ErrorCode::InvalidConfig,
                  std::string("model ") + size + " is only defined for dims 32 and 48");
    }
    return {row.size, row.c1, row.c2, row.c3, row.c4, row.c_agg, row.c_det, c_desc};
  }
  throw Error(ErrorCode::InvalidConfig, std::string("unknown model size '") + size + "'");
}

/// All 14 published configurations, ordered T..E then by dim.
inline std::vector<ModelConfig> all_named_configs() {
  std::vector<ModelConfig> out;
  for (const auto& row : detail::kSizes) {
    for (int dim : {32, 48, 64}) {
      if (dim == 64 && !row.allows_64) continue;
      out.push_back(named_config(row.size, dim));
    }
  }
  return out;
}

enum class LayerKind { Conv, GroupConv, AvgPool, ResBlock, PixelShuffle, Add, Concat, Upsample };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::GroupConv: return "group-conv";
    case LayerKind::AvgPool: return "avg-pool";
    case LayerKind::ResBlock: return "resblock";
    case LayerKind::PixelShuffle: return "pixel-shuffle";
    case LayerKind::Add: return "add";
    case LayerKind::Concat: return "concat";
    case LayerKind::Upsample: return "upsample";
  }
  return "?";
}

enum class Branch { Encoder, Detection, Description };

/// Spatial sizes are stored as divisors of the input resolution (2 means
/// H/2 x W/2). `inputs` index earlier layers; -1 is the input image.
struct Layer {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  Branch branch = Branch::Encoder;
  int kernel = 1;
  int stride = 1;
  int in_channels = 0;
  int out_channels = 0;
  int groups = 1;
  int in_div = 1;
  int out_div = 1;
  bool norm = false;
  std::vector<int> inputs;
};

struct LayerGraph {
  std::vector<Layer> layers;

  int add(Layer layer) {
    layers.push_back(std::move(layer));
    return static_cast<int>(layers.size()) - 1;
  }
};

inline constexpr int kImageChannels = 1;
inline constexpr int kDescriptorGroupWidth = 16;

/// Throws InvalidConfig on the first inconsistent edge.
inline void validate(const LayerGraph& g) {
  auto fail = [](const Layer& l, const std::string& why) {
    throw Error(ErrorCode::InvalidConfig, "layer '" + l.name + "': " + why);
  };
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const Layer& l = g.layers[i];
    if (l.stride < 1 || l.kernel < 1 || l.groups < 1) fail(l, "stride/kernel/groups must be >= 1");
    if (l.in_channels < 1 || l.out_channels < 1) fail(l, "channels must be >= 1");
    if (l.inputs.empty()) fail(l, "no inputs");
    std::vector<std::pair<int, int>> sources;  // (channels, div)
    for (int src : l.inputs) {
      if (src >= static_cast<int>(i)) fail(l, "inputs must precede the layer");
      if (src < 0) {
        sources.emplace_back(kImageChannels, 1);
      } else {
        sources.emplace_back(g.layers[static_cast<std::size_t>(src)].out_channels,
                             g.layers[static_cast<std::size_t>(src)].out_div);
      }
    }
    const bool multi = l.kind == LayerKind::Add || l.kind == LayerKind::Concat;
    if (!multi && sources.size() != 1) fail(l, "expects exactly one input");
    int channel_sum = 0;
    for (const auto& [ch, div] : sources) {
      if (div != l.in_div) fail(l, "input resolution mismatch");
      if (l.kind == LayerKind::Add && ch != l.in_channels) fail(l, "add branches differ in channels");
      channel_sum += ch;
    }
    if (!multi && sources.front().first != l.in_channels) fail(l, "input channel mismatch");

    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::GroupConv:
        if (l.in_channels % l.groups != 0 || l.out_channels % l.groups != 0) {
          fail(l, "channels not divisible by groups");
        }
        if (l.out_div != l.in_div * l.stride) fail(l, "stride does not match resolution");
        break;
      case LayerKind::ResBlock:
        if (l.stride != 1 || l.out_div != l.in_div) fail(l, "resblocks keep resolution");
        break;
      case LayerKind::AvgPool:
        if (l.in_channels != l.out_channels) fail(l, "pooling keeps channels");
        if (l.out_div != l.in_div * l.stride) fail(l, "stride does not match resolution");
        break;
      case LayerKind::Upsample:
        if (l.in_channels != l.out_channels) fail(l, "upsampling keeps channels");
        if (l.out_div >= l.in_div || l.in_div % l.out_div != 0) fail(l, "bad upsample factor");
        break;
      case LayerKind::PixelShuffle: {
        if (l.in_div % l.out_div != 0) fail(l, "bad shuffle factor");
        const int f = l.in_div / l.out_div;
        if (l.in_channels != l.out_channels * f * f) fail(l, "shuffle channel arithmetic");
        break;
      }
      case LayerKind::Add:
        if (l.out_channels != l.in_channels || l.out_div != l.in_div) fail(l, "add shape");
        break;
      case LayerKind::Concat:
        if (l.out_channels != channel_sum || l.out_div != l.in_div) fail(l, "concat channel sum");
        break;
    }
  }
}

/// Reconstructs the layer graph for a configuration.
///
/// Encoder: 4x4/2 conv, 3x3 conv, resblock (H/2); 4x4 avg-pool, resblock
/// (H/8); 4x4 avg-pool, resblock (H/32). Encoder convs carry a norm layer.
/// Detection head: per-scale 1x1 to c_det, upsample to H/2, add, 3x3, 3x3,
/// 1x1 to 4 channels, x2 pixel shuffle to a full-resolution score map.
/// Description head: resize the three scales to H/4, concat (c_agg), 1x1,
/// 3x3 group conv with 16 channels per group, 1x1 to c_desc.
inline LayerGraph build_graph(const ModelConfig& c) {
  if (c.c1 < 1 || c.c2 < 1 || c.c3 < 1 || c.c4 < 1 || c.c_det < 1 || c.c_desc < 1) {
    throw Error(ErrorCode::InvalidConfig, "channel counts must be positive");
  }
  if (c.c_agg != c.c2 + c.c3 + c.c4) {
    throw Error(ErrorCode::InvalidConfig, "c_agg must equal c2 + c3 + c4");
  }
  if (c.c_agg % kDescriptorGroupWidth != 0) {
    throw Error(ErrorCode::InvalidConfig, "c_agg must be a multiple of 16");
  }
  using K = LayerKind;
  using B = Branch;
  LayerGraph g;
  const int conv1 = g.add({"enc.conv1", K::Conv, B::Encoder, 4, 2, kImageChannels, c.c1, 1, 1, 2, true, {-1}});
  const int conv2 = g.add({"enc.conv2", K::Conv, B::Encoder, 3, 1, c.c1, c.c2, 1, 2, 2, true, {conv1}});
  const int f2 = g.add({"enc.res1", K::ResBlock, B::Encoder, 3, 1, c.c2, c.c2, 1, 2, 2, true, {conv2}});
  const int pool1 = g.add({"enc.pool1", K::AvgPool, B::Encoder, 4, 4, c.c2, c.c2, 1, 2, 8, false, {f2}});
  const int f8 = g.add({"enc.res2", K::ResBlock, B::Encoder, 3, 1, c.c2, c.c3, 1, 8, 8, true, {pool1}});
  const int pool2 = g.add({"enc.pool2", K::AvgPool, B::Encoder, 4, 4, c.c3, c.c3, 1, 8, 32, false, {f8}});
  const int f32 = g.add({"enc.res3", K::ResBlock, B::Encoder, 3, 1, c.c3, c.c4, 1, 32, 32, true, {pool2}});

  const int r2 = g.add({"det.reduce2", K::Conv, B::Detection, 1, 1, c.c2, c.c_det, 1, 2, 2, false, {f2}});
  const int r8 = g.add({"det.reduce8", K::Conv, B::Detection, 1, 1, c.c3, c.c_det, 1, 8, 8, false, {f8}});
  const int r32 = g.add({"det.reduce32", K::Conv, B::Detection, 1, 1, c.c4, c.c_det, 1, 32, 32, false, {f32}});
  const int u8 = g.add({"det.up8", K::Upsample, B::Detection, 1, 1, c.c_det, c.c_det, 1, 8, 2, false, {r8}});
  const int u32 = g.add({"det.up32", K::Upsample, B::Detection, 1, 1, c.c_det, c.c_det, 1, 32, 2, false, {r32}});
  const int sum = g.add({"det.add", K::Add, B::Detection, 1, 1, c.c_det, c.c_det, 1, 2, 2, false, {r2, u8, u32}});
  const int d1 = g.add({"det.conv1", K::Conv, B::Detection, 3, 1, c.c_det, c.c_det, 1, 2, 2, false, {sum}});
  const int d2 = g.add({"det.conv2", K::Conv, B::Detection, 3, 1, c.c_det, c.c_det, 1, 2, 2, false, {d1}});
  const int d3 = g.add({"det.conv3", K::Conv, B::Detection, 1, 1, c.c_det, 4, 1, 2, 2, false, {d2}});
  g.add({"det.shuffle", K::PixelShuffle, B::Detection, 1, 1, 4, 1, 1, 2, 1, false, {d3}});

  const int p2 = g.add({"desc.pool2", K::AvgPool, B::Description, 2, 2, c.c2, c.c2, 1, 2, 4, false, {f2}});
  const int s8 = g.add({"desc.up8", K::Upsample, B::Description, 1, 1, c.c3, c.c3, 1, 8, 4, false, {f8}});
  const int s32 = g.add({"desc.up32", K::Upsample, B::Description, 1, 1, c.c4, c.c4, 1, 32, 4, false, {f32}});
  const int cat = g.add({"desc.concat", K::Concat, B::Description, 1, 1, c.c_agg, c.c_agg, 1, 4, 4, false, {p2, s8, s32}});
  const int e1 = g.add({"desc.conv1", K::Conv, B::Description, 1, 1, c.c_agg, c.c_agg, 1, 4, 4, false, {cat}});
  const int e2 = g.add({"desc.group", K::GroupConv, B::Description, 3, 1, c.c_agg, c.c_agg,
                        c.c_agg / kDescriptorGroupWidth, 4, 4, false, {e1}});
  g.add({"desc.out", K::Conv, B::Description, 1, 1, c.c_agg, c.c_desc, 1, 4, 4, false, {e2}});

  validate(g);
  return g;
}

namespace detail {

inline std::int64_t conv_params(int k, int cin, int cout, int groups, bool norm) {
  return static_cast<std::int64_t>(k) * k * cin * cout / groups + cout + (norm ? 2 * cout : 0);
}

inline std::int64_t conv_macs_per_pixel(int k, int cin, int cout, int groups) {
  return static_cast<std::int64_t>(k) * k * (cin / groups) * cout;
}

}  // namespace detail

/// Weights + biases of every convolution (resblocks count their two 3x3
/// convs and a 1x1 projection when channels change); norm layers add 2 * C.
inline std::int64_t layer_params(const Layer& l) {
  switch (l.kind) {
    case LayerKind::Conv:
    case LayerKind::GroupConv:
      return detail::conv_params(l.kernel, l.in_channels, l.out_channels, l.groups, l.norm);
    case LayerKind::ResBlock: {
      std::int64_t p = detail::conv_params(3, l.in_channels, l.out_channels, 1, l.norm) +
                       detail::conv_params(3, l.out_channels, l.out_channels, 1, l.norm);
      if (l.in_channels != l.out_channels) {
        p += detail::conv_params(1, l.in_channels, l.out_channels, 1, l.norm);
      }
      return p;
    }
    default:
      return 0;
  }
}

inline std::int64_t count_params(const LayerGraph& g) {
  std::int64_t total = 0;
  for (const auto& l : g.layers) total += layer_params(l);
  return total;
}

inline void check_input_size(std::int64_t height, std::int64_t width) {
  if (height < 32 || width < 32 || height % 32 != 0 || width % 32 != 0) {
    throw Error(ErrorCode::BadInputSize, "input " + std::to_string(height) + "x" +
                                             std::to_string(width) +
                                             " must be positive multiples of 32");
  }
}

/// 2 * k^2 * (C_in / groups) * C_out * H_out * W_out for each convolution;
/// pooling, resampling, add and concat count as zero.
inline std::int64_t layer_flops(const Layer& l, std::int64_t height, std::int64_t width) {
  const std::int64_t pixels = (height / l.out_div) * (width / l.out_div);
  switch (l.kind) {
    case LayerKind::Conv:
    case LayerKind::GroupConv:
      return 2 * detail::conv_macs_per_pixel(l.kernel, l.in_channels, l.out_channels, l.groups) *
             pixels;
    case LayerKind::ResBlock: {
      std::int64_t macs = detail::conv_macs_per_pixel(3, l.in_channels, l.out_channels, 1) +
                          detail::conv_macs_per_pixel(3, l.out_channels, l.out_channels, 1);
      if (l.in_channels != l.out_channels) {
        macs += detail::conv_macs_per_pixel(1, l.in_channels, l.out_channels, 1);
      }
      return 2 * macs * pixels;
    }
    default:
      return 0;
  }
}

inline std::int64_t estimate_flops(const LayerGraph& g, std::int64_t height, std::int64_t width) {
  check_input_size(height, width);
  std::int64_t total = 0;
  for (const auto& l : g.layers) total += layer_flops(l, height, width);
  return total;
}

/// Multiply-accumulate count (FLOPs / 2), the unit most model-profiling tools
/// report as "FLOPs".
inline std::int64_t estimate_macs(const LayerGraph& g, std::int64_t height, std::int64_t width) {
  return estimate_flops(g, height, width) / 2;
}

/// Receptive field of the last encoder layer via r += (k - 1) * jump,
/// jump *= stride. A resblock contributes two stride-1 3x3 convolutions.
inline std::int64_t receptive_field(const LayerGraph& g) {
  std::int64_t rf = 1;
  std::int64_t jump = 1;
  for (const auto& l : g.layers) {
    if (l.branch != Branch::Encoder) continue;
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::GroupConv:
      case LayerKind::AvgPool:
        rf += (l.kernel - 1) * jump;
        jump *= l.stride;
        break;
      case LayerKind::ResBlock:
        rf += 2 * 2 * jump;
        break;
      default:
        break;
    }
  }
  return rf;
}

}  // namespace ep2::arch
