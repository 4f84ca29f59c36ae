#pragma once

// Full-batch training loop on a single labeled scan.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "frnet/error.hpp"
#include "frnet/nn/gradcheck.hpp"
#include "frnet/metrics.hpp"
#include "frnet/model.hpp"
#include "frnet/supervision.hpp"

namespace frnet {

struct TrainOptions {
  int epochs = 300;
  double lr = 0.03;
  double momentum = 0.9;
  double max_grad_norm = 0.0;  // 0 disables clipping
  bool cosine = true;          // cosine-anneal the learning rate to 0 over the run
  LossWeights weights;

  static TrainOptions from_run_config(const RunConfig& run) {
    TrainOptions o;
    o.epochs = static_cast<int>(run.get_int("epochs", o.epochs));
    o.lr = run.get_double("lr", o.lr);
    o.momentum = run.get_double("momentum", o.momentum);
    o.max_grad_norm = run.get_double("max_grad_norm", o.max_grad_norm);
    o.cosine = run.get_bool("lr_cosine", o.cosine);
    o.weights.lambda_frustum = run.get_double("lambda_frustum", o.weights.lambda_frustum);
    if (o.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(o.lr >= 0.0)) throw ConfigError("lr must be >= 0");
    return o;
  }
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double point_ce = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<Label> predictions;  // one per original point, after training
  ClassScores scores;
};

// Each epoch is one forward/backward pass over the whole scan followed by one
// optimizer step.
inline TrainResult train_on_scan(FrnetModel& model, const PointCloud& scan, const TrainOptions& options,
                                 const std::function<void(const EpochStats&)>& on_epoch = {}) {
  if (!scan.labeled()) throw DataError("training requires a labeled scan");
  const SensorConfig& sensor = model.sensor();
  SgdOptimizer opt(model.parameters(), options.lr, options.momentum, options.max_grad_norm);

  // The network input does not change between epochs; project once.
  PointCloud input = scan;
  if (model.config().interpolate) input = range_interpolate(scan, sensor, model.config().interp_direction).cloud;
  const FrustumIndex index = project(input, sensor);

  TrainResult result;
  for (int e = 1; e <= options.epochs; ++e) {
    if (options.cosine) {
      const double t = static_cast<double>(e - 1) / static_cast<double>(options.epochs);
      opt.set_lr(0.5 * options.lr * (1.0 + std::cos(std::numbers::pi * t)));
    }
    ForwardTrace trace = model.forward_indexed(input, index);
    LossBreakdown loss = total_loss(trace, *input.labels, options.weights, sensor.ignore_label, sensor.num_classes);
    const double value = loss.total.item();
    if (!std::isfinite(value)) throw NumericError("non-finite loss at epoch " + std::to_string(e));
    nn::backward(loss.total);
    opt.step();
    EpochStats stats{e, value, loss.point_ce, opt.last_grad_norm()};
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  ForwardTrace trace = model.forward_indexed(input, index);
  result.predictions = FrnetModel::argmax_labels(trace.point_logits.value(), scan.size());
  ConfusionMatrix cm(sensor.num_classes, sensor.ignore_label);
  cm.accumulate(result.predictions, *scan.labels);
  result.scores = iou_acc(cm);
  return result;
}

// Built-in run configurations. The toy one is small enough to overfit a
// synthetic scene in well under a minute on one core; the desk one keeps the
// full-graph finite-difference check fast.
inline constexpr const char* kToyConfig = R"(height = 16
width = 64
fov_up_deg = 3
fov_down_deg = -25
num_classes = 3
ignore_label = 255
encoder_channels = 8,16,32,32,32
frustum_channels = 16
stage_channels = 16,16
strides = 1,2
head_channels = 32,16
interp = on
interp_direction = h
lr = 0.03
momentum = 0.9
lr_cosine = on
epochs = 300
toy_points = 2000
)";

inline constexpr const char* kDeskConfig = R"(height = 4
width = 8
fov_up_deg = 3
fov_down_deg = -25
num_classes = 3
ignore_label = 255
encoder_channels = 8,8,6
frustum_channels = 4
stage_channels = 4,6
strides = 1,2
head_channels = 6
interp = off
toy_points = 32
)";

// Finite-difference check of the complete training loss (point CE plus the
// per-stage frustum terms) with respect to every model parameter.
inline nn::GradCheckReport model_grad_check(const RunConfig& run, std::uint64_t seed, double eps = 1e-5,
                                            double tolerance = 1e-4) {
  const SensorConfig& sensor = run.sensor;
  const auto n = static_cast<std::size_t>(run.get_int("toy_points", 32));
  FrnetModel model(FrnetConfig::from_run_config(run), sensor, seed);
  const PointCloud scan = synth_scene(seed, n, sensor);
  PointCloud input = scan;
  if (model.config().interpolate) input = range_interpolate(scan, sensor, model.config().interp_direction).cloud;
  const FrustumIndex index = project(input, sensor);
  LossWeights weights;
  weights.lambda_frustum = run.get_double("lambda_frustum", weights.lambda_frustum);
  auto loss = [&]() {
    ForwardTrace trace = model.forward_indexed(input, index);
    return total_loss(trace, *input.labels, weights, sensor.ignore_label, sensor.num_classes).total;
  };
  return nn::grad_check(loss, model.parameters(), eps, tolerance);
}

}  // namespace frnet
