#pragma once

// Frustum-range network: per-point frustum feature encoder, a plain
// convolutional backbone, frustum-point fusion after every backbone stage and
// a fusion head producing per-point logits (plus per-stage frustum logits used
// for frustum-level supervision).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "frnet/augment.hpp"
#include "frnet/error.hpp"
#include "frnet/geometry.hpp"
#include "frnet/nn/gradcheck.hpp"
#include "frnet/nn/kernels.hpp"
#include "frnet/nn/tensor.hpp"
#include "frnet/rng.hpp"
#include "frnet/scan_io.hpp"

namespace frnet {

using nn::NamedVar;
using nn::Tensor;
using nn::Var;

inline constexpr int kEncoderInputWidth = 8;

struct FrnetConfig {
  // Point MLP widths starting with the 8-wide embedded input.
  std::vector<int> encoder_channels{8, 64, 128, 256, 256};
  // Width of the pooled frustum map fed to the backbone.
  int frustum_channels = 16;
  std::vector<int> stage_channels{128, 128, 128, 128};
  std::vector<int> strides{1, 2, 2, 2};
  // Reduction after concatenating all stages (grid convs and point MLPs).
  std::vector<int> head_channels{256, 128};
  int num_classes = 19;
  bool interpolate = true;
  InterpDirection interp_direction = InterpDirection::horizontal;

  std::size_t num_stages() const { return stage_channels.size(); }

  void validate() const {
    if (encoder_channels.size() < 2 || encoder_channels.front() != kEncoderInputWidth) {
      throw ConfigError("encoder_channels must start with 8 and hold at least one layer");
    }
    if (stage_channels.empty()) throw ConfigError("at least one backbone stage is required");
    if (strides.size() != stage_channels.size()) throw ConfigError("strides and stage_channels differ in length");
    if (head_channels.empty()) throw ConfigError("head_channels must not be empty");
    for (const auto* list : {&encoder_channels, &stage_channels, &head_channels}) {
      for (int c : *list) {
        if (c < 1) throw ConfigError("all channel widths must be >= 1");
      }
    }
    if (frustum_channels < 1) throw ConfigError("frustum_channels must be >= 1");
    for (int s : strides) {
      if (s != 1 && s != 2) throw ConfigError("strides must be 1 or 2");
    }
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  }

  // Keys: encoder_channels, frustum_channels, stage_channels, strides,
  // head_channels, stages, interp (on/off), interp_direction (h/v).
  static FrnetConfig from_run_config(const RunConfig& run) {
    FrnetConfig c;
    c.num_classes = run.sensor.num_classes;
    c.encoder_channels = run.get_int_list("encoder_channels", c.encoder_channels);
    c.frustum_channels = static_cast<int>(run.get_int("frustum_channels", c.frustum_channels));
    c.stage_channels = run.get_int_list("stage_channels", c.stage_channels);
    c.head_channels = run.get_int_list("head_channels", c.head_channels);
    if (run.has("stages")) {
      auto s = static_cast<std::size_t>(run.get_int("stages", 4));
      if (s < 1) throw ConfigError("stages must be >= 1");
      if (!run.has("stage_channels")) c.stage_channels.resize(s, c.stage_channels.back());
      if (c.stage_channels.size() != s) throw ConfigError("stages does not match stage_channels length");
    }
    std::vector<int> default_strides;
    for (std::size_t k = 0; k < c.stage_channels.size(); ++k) default_strides.push_back(k == 0 ? 1 : 2);
    c.strides = run.get_int_list("strides", default_strides);
    c.interpolate = run.get_bool("interp", c.interpolate);
    std::string dir = run.get_string("interp_direction", "h");
    if (dir == "h") {
      c.interp_direction = InterpDirection::horizontal;
    } else if (dir == "v") {
      c.interp_direction = InterpDirection::vertical;
    } else {
      throw ConfigError("interp_direction must be h or v");
    }
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Parameter blocks. Weights and biases are drawn uniformly from
// [-1/sqrt(fan_in), 1/sqrt(fan_in)].

namespace detail {

inline Var uniform_param(Rng& rng, nn::Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return Var(std::move(t), true);
}

}  // namespace detail

struct Linear {
  Var weight;  // [in x out]
  Var bias;    // [out]

  Linear() = default;
  Linear(Rng& rng, int in, int out)
      : weight(detail::uniform_param(rng, {static_cast<std::size_t>(in), static_cast<std::size_t>(out)},
                                     static_cast<std::size_t>(in))),
        bias(detail::uniform_param(rng, {static_cast<std::size_t>(out)}, static_cast<std::size_t>(in))) {}

  Var operator()(const Var& x) const { return nn::dense(x, weight, bias); }
  Var on_grid(const Var& x) const { return nn::conv1x1(x, weight, bias); }
  int out_channels() const { return static_cast<int>(bias.dim(0)); }
};

struct Conv3x3 {
  Var weight;  // [out x in x 3 x 3]
  Var bias;    // [out]
  int stride = 1;

  Conv3x3() = default;
  Conv3x3(Rng& rng, int in, int out, int stride_)
      : weight(detail::uniform_param(rng, {static_cast<std::size_t>(out), static_cast<std::size_t>(in), 3, 3},
                                     static_cast<std::size_t>(in) * 9)),
        bias(detail::uniform_param(rng, {static_cast<std::size_t>(out)}, static_cast<std::size_t>(in) * 9)),
        stride(stride_) {}

  Var operator()(const Var& x) const { return nn::conv3x3(x, weight, bias, stride); }
};

// One frustum-point fusion block.
struct FusionParams {
  Linear point_mlp;  // [gathered frustum ; point] -> updated point features
  Conv3x3 reduce;    // g: [pooled points ; frustum] -> fused
  Conv3x3 attend;    // h: fused -> attention logits
};

struct FusionOutput {
  Var points;      // updated point features
  Var frustum;     // updated frustum features
  Var fused;       // output of the reduction conv
  Var attention;   // sigmoid gate
};

// Frustum-to-point then point-to-frustum fusion on one resolution:
//   points'  = relu(MLP([gather(F_f) ; F_p]))
//   fused    = relu(g([scatter_max(points') ; F_f]))
//   frustum' = F_f + sigmoid(h(fused)) * fused
inline FusionOutput fuse_frustum_point(const Var& point_feats, const Var& frustum_feats, const FrustumIndex& index,
                                       const FusionParams& params) {
  FusionOutput out;
  Var to_points = nn::gather(frustum_feats, index);
  out.points = nn::relu(params.point_mlp(nn::concat_columns({to_points, point_feats})));
  Var pooled = nn::scatter_max(out.points, index);
  out.fused = nn::relu(params.reduce(nn::concat_channels({pooled, frustum_feats})));
  out.attention = nn::sigmoid(params.attend(out.fused));
  out.frustum = nn::add(frustum_feats, nn::mul(out.attention, out.fused));
  return out;
}

// ---------------------------------------------------------------------------

struct StageTrace {
  int height = 0;
  int width = 0;
  int factor = 1;  // cumulative downsampling relative to the input grid
  FrustumIndex index;
  Var frustum_in;      // backbone output F_f
  Var point_in;        // F_p entering the fusion block
  Var point_out;       // updated point features
  Var frustum_out;     // updated frustum features
  Var frustum_logits;  // [height*width x C]
};

struct ForwardTrace {
  PointCloud cloud;  // network input (originals followed by interpolated points)
  std::size_t original_points = 0;
  FrustumIndex index;
  Var encoder_points;   // [N x C_enc]
  Var encoder_frustum;  // [C_f x H x W]
  Var low_level;        // encoder points projected to head width
  std::vector<StageTrace> stages;
  Var merged_frustum;   // all stages upsampled, concatenated, reduced
  Var merged_points;    // all stage point features concatenated, reduced
  Var point_logits;     // [N x C]
};

struct EncoderOutput {
  Var points;
  Var frustum;
};

// Per-point encoder input (x, y, z, i, d, x-x_m, y-y_m, z-z_m), [N x 8].
inline Tensor embed_points(const PointCloud& cloud, const FrustumIndex& index) {
  FrustumMeans means(cloud, index);
  Tensor t({cloud.size(), static_cast<std::size_t>(kEncoderInputWidth)});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    const Point& m = *means.at(index.pixel_of(i));
    double* row = t.data().data() + i * kEncoderInputWidth;
    row[0] = p.x;
    row[1] = p.y;
    row[2] = p.z;
    row[3] = p.intensity;
    row[4] = p.depth();
    row[5] = p.x - m.x;
    row[6] = p.y - m.y;
    row[7] = p.z - m.z;
  }
  return t;
}

class FrnetModel {
 public:
  FrnetModel(FrnetConfig config, SensorConfig sensor, std::uint64_t seed)
      : config_(std::move(config)), sensor_(sensor) {
    config_.validate();
    sensor_.validate();
    if (config_.num_classes != sensor_.num_classes) {
      throw ConfigError("model and sensor disagree on num_classes");
    }
    Rng rng(seed);
    const auto& enc = config_.encoder_channels;
    for (std::size_t k = 0; k + 1 < enc.size(); ++k) encoder_.emplace_back(rng, enc[k], enc[k + 1]);
    const int enc_out = enc.back();
    frustum_proj_ = Linear(rng, enc_out, config_.frustum_channels);

    int grid_in = config_.frustum_channels;
    int point_in = enc_out;
    int stage_sum = 0;
    for (std::size_t k = 0; k < config_.num_stages(); ++k) {
      const int c = config_.stage_channels[k];
      stages_.emplace_back(rng, grid_in, c, config_.strides[k]);
      FusionParams f;
      f.point_mlp = Linear(rng, c + point_in, c);
      f.reduce = Conv3x3(rng, 2 * c, c, 1);
      f.attend = Conv3x3(rng, c, c, 1);
      fusion_.push_back(std::move(f));
      frustum_cls_.emplace_back(rng, c, config_.num_classes);
      grid_in = c;
      point_in = c;
      stage_sum += c;
    }
    int grid_w = stage_sum, point_w = stage_sum;
    for (int c : config_.head_channels) {
      head_grid_.emplace_back(rng, grid_w, c, 1);
      head_point_.emplace_back(rng, point_w, c);
      grid_w = point_w = c;
    }
    const int head_w = config_.head_channels.back();
    low_proj_ = Linear(rng, enc_out, head_w);
    head_inner_ = Linear(rng, head_w, head_w);
    head_outer_ = Linear(rng, head_w, head_w);
    classifier_ = Linear(rng, head_w, config_.num_classes);
  }

  const FrnetConfig& config() const { return config_; }
  const SensorConfig& sensor() const { return sensor_; }

  // Stable, ordered list of every learnable tensor.
  std::vector<NamedVar> parameters() const {
    std::vector<NamedVar> out;
    auto lin = [&](const std::string& name, const Linear& l) {
      out.push_back({name + ".weight", l.weight});
      out.push_back({name + ".bias", l.bias});
    };
    auto conv = [&](const std::string& name, const Conv3x3& c) {
      out.push_back({name + ".weight", c.weight});
      out.push_back({name + ".bias", c.bias});
    };
    for (std::size_t k = 0; k < encoder_.size(); ++k) lin("encoder." + std::to_string(k), encoder_[k]);
    lin("encoder.frustum", frustum_proj_);
    for (std::size_t k = 0; k < stages_.size(); ++k) {
      const std::string s = "stage." + std::to_string(k);
      conv(s + ".conv", stages_[k]);
      lin(s + ".fusion.point_mlp", fusion_[k].point_mlp);
      conv(s + ".fusion.reduce", fusion_[k].reduce);
      conv(s + ".fusion.attend", fusion_[k].attend);
      lin(s + ".frustum_cls", frustum_cls_[k]);
    }
    for (std::size_t k = 0; k < head_grid_.size(); ++k) {
      conv("head.grid." + std::to_string(k), head_grid_[k]);
      lin("head.point." + std::to_string(k), head_point_[k]);
    }
    lin("head.low_level", low_proj_);
    lin("head.inner", head_inner_);
    lin("head.outer", head_outer_);
    lin("head.classifier", classifier_);
    return out;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.var.value().size();
    return n;
  }

  // Drops gradient buffers and stops tracking gradients; afterwards forward
  // passes build no backward closures and the model may be shared read-only.
  void freeze() {
    for (auto& p : parameters()) {
      Var v = p.var;
      v.set_requires_grad(false);
      v.value().drop_grad();
    }
  }

  // Spatial size of each stage's frustum grid.
  std::vector<std::pair<int, int>> stage_dims() const {
    std::vector<std::pair<int, int>> dims;
    std::size_t h = static_cast<std::size_t>(sensor_.height), w = static_cast<std::size_t>(sensor_.width);
    for (int s : config_.strides) {
      h = nn::conv_out_dim(h, s);
      w = nn::conv_out_dim(w, s);
      dims.emplace_back(static_cast<int>(h), static_cast<int>(w));
    }
    return dims;
  }

  std::vector<int> stage_factors() const {
    std::vector<int> f;
    int acc = 1;
    for (int s : config_.strides) {
      acc *= s;
      f.push_back(acc);
    }
    return f;
  }

  EncoderOutput encode_frustum(const PointCloud& cloud, const FrustumIndex& index) const {
    EncoderOutput out;
    Var x(embed_points(cloud, index));
    for (std::size_t k = 0; k < encoder_.size(); ++k) {
      x = encoder_[k](x);
      if (k + 1 < encoder_.size()) x = nn::relu(x);
    }
    out.points = x;
    Var pooled = nn::scatter_max(x, index);
    std::vector<double> occupied(index.num_pixels());
    for (std::size_t p = 0; p < occupied.size(); ++p) occupied[p] = index.occupied(p) ? 1.0 : 0.0;
    out.frustum = nn::mask_pixels(nn::relu(frustum_proj_.on_grid(pooled)), std::move(occupied));
    return out;
  }

  Var backbone_stage(const Var& frustum, std::size_t stage) const {
    if (stage >= stages_.size()) throw ConfigError("stage index out of range");
    return nn::relu(stages_[stage](frustum));
  }

  const FusionParams& fusion_params(std::size_t stage) const { return fusion_.at(stage); }
  FusionParams& fusion_params(std::size_t stage) { return fusion_.at(stage); }

  // Merges all stages at full resolution and applies
  //   F_out = MLP(MLP(gather(F_f)) + F_p) + F_p^l
  // followed by the per-point classifier.
  Var fusion_head(ForwardTrace& trace) const {
    const auto h = static_cast<std::size_t>(sensor_.height), w = static_cast<std::size_t>(sensor_.width);
    std::vector<Var> grids, points;
    for (const StageTrace& s : trace.stages) {
      Var g = s.frustum_out;
      if (g.dim(1) != h || g.dim(2) != w) g = nn::upsample_bilinear(g, h, w);
      grids.push_back(g);
      points.push_back(s.point_out);
    }
    Var grid = nn::concat_channels(grids);
    Var pts = nn::concat_columns(points);
    for (std::size_t k = 0; k < head_grid_.size(); ++k) {
      grid = nn::relu(head_grid_[k](grid));
      pts = nn::relu(head_point_[k](pts));
    }
    trace.merged_frustum = grid;
    trace.merged_points = pts;
    trace.low_level = low_proj_(trace.encoder_points);
    Var from_frustum = nn::relu(head_inner_(nn::gather(grid, trace.index)));
    Var fused = nn::add(nn::relu(head_outer_(nn::add(from_frustum, pts))), trace.low_level);
    trace.point_logits = classifier_(fused);
    return trace.point_logits;
  }

  // Runs the network on an already projected cloud (no interpolation).
  ForwardTrace forward_indexed(const PointCloud& cloud, const FrustumIndex& index) const {
    if (index.num_points() != cloud.size()) throw ShapeError("index does not match cloud");
    ForwardTrace trace;
    trace.cloud = cloud;
    trace.original_points = cloud.size();
    trace.index = index;
    EncoderOutput enc = encode_frustum(cloud, index);
    trace.encoder_points = enc.points;
    trace.encoder_frustum = enc.frustum;

    const auto dims = stage_dims();
    const auto factors = stage_factors();
    Var frustum = enc.frustum;
    Var points = enc.points;
    for (std::size_t k = 0; k < stages_.size(); ++k) {
      StageTrace s;
      s.height = dims[k].first;
      s.width = dims[k].second;
      s.factor = factors[k];
      s.index = factors[k] == 1 ? index : index.downsample(factors[k], s.height, s.width);
      s.frustum_in = backbone_stage(frustum, k);
      s.point_in = points;
      FusionOutput f = fuse_frustum_point(points, s.frustum_in, s.index, fusion_[k]);
      s.point_out = f.points;
      s.frustum_out = f.frustum;
      s.frustum_logits = nn::grid_to_rows(frustum_cls_[k].on_grid(f.frustum));
      frustum = f.frustum;
      points = f.points;
      trace.stages.push_back(std::move(s));
    }
    fusion_head(trace);
    return trace;
  }

  // Full pipeline: optional range interpolation, projection, network. The
  // trace's cloud carries interpolated points (and their labels) after the
  // original ones.
  ForwardTrace forward(const PointCloud& cloud) const {
    cloud.validate();
    PointCloud input = cloud;
    if (config_.interpolate) input = range_interpolate(cloud, sensor_, config_.interp_direction).cloud;
    FrustumIndex index = project(input, sensor_);
    ForwardTrace trace = forward_indexed(input, index);
    trace.original_points = cloud.size();
    return trace;
  }

  // Per-point class ids for the original points only.
  std::vector<Label> predict(const PointCloud& cloud) const {
    ForwardTrace trace = forward(cloud);
    return argmax_labels(trace.point_logits.value(), trace.original_points);
  }

  static std::vector<Label> argmax_labels(const Tensor& logits, std::size_t rows) {
    const std::size_t c = logits.dim(1);
    std::vector<Label> out(rows);
    auto d = logits.data();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* r = d.data() + i * c;
      out[i] = static_cast<Label>(std::max_element(r, r + c) - r);
    }
    return out;
  }

 private:
  FrnetConfig config_;
  SensorConfig sensor_;
  std::vector<Linear> encoder_;
  Linear frustum_proj_;
  std::vector<Conv3x3> stages_;
  std::vector<FusionParams> fusion_;
  std::vector<Linear> frustum_cls_;
  std::vector<Conv3x3> head_grid_;
  std::vector<Linear> head_point_;
  Linear low_proj_;
  Linear head_inner_;
  Linear head_outer_;
  Linear classifier_;
};

}  // namespace frnet
