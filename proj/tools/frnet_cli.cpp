// frnet command-line driver.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "frnet/frnet.hpp"

namespace fs = std::filesystem;
using namespace frnet;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string num(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

RunConfig load_config(const std::string& path, const char* builtin) {
  RunConfig run = path.empty() ? parse_config(builtin) : read_config(path);
  for (const auto& w : run.warnings) std::cerr << "warning: " << w << "\n";
  return run;
}

PointCloud load_scan(const std::string& scan, const std::string& labels) {
  if (labels.empty()) return read_scan(scan);
  return read_scan(scan, fs::path(labels));
}

void write_cloud(const PointCloud& cloud, const std::string& prefix) {
  write_scan(cloud, prefix + ".bin");
  if (cloud.labeled()) write_labels(*cloud.labels, prefix + ".label");
}

// ---------------------------------------------------------------------------

struct ProjectArgs {
  std::string scan, labels, config, out_ppm, out_index;
};

int run_project(const ProjectArgs& a) {
  RunConfig run = load_config(a.config, nullptr);
  PointCloud cloud = load_scan(a.scan, a.labels);
  FrustumIndex index = project(cloud, run.sensor);
  if (!a.out_index.empty()) {
    std::ostringstream os;
    os << index.num_points() << " " << index.height() << " " << index.width() << "\n";
    for (std::size_t i = 0; i < index.num_points(); ++i) os << index.u(i) << " " << index.v(i) << "\n";
    io::write_atomic(a.out_index, os.str());
  }
  if (!a.out_ppm.empty()) {
    RangeImage image = build_range_image(cloud, index, run.sensor);
    render_ppm(image, default_palette(run.sensor.num_classes), run.sensor.ignore_label, a.out_ppm);
  }
  std::size_t occupied = 0;
  for (std::size_t p = 0; p < index.num_pixels(); ++p) occupied += index.occupied(p);
  std::cout << "points = " << index.num_points() << "\n";
  std::cout << "occupied_pixels = " << occupied << "\n";
  std::cout << "shared_points = " << index.num_points() - occupied << "\n";
  return 0;
}

struct MixArgs {
  std::string scan_a, scan_b, labels_a, labels_b, config, out;
  std::optional<std::uint64_t> seed;
};

int run_mix(const MixArgs& a) {
  RunConfig run = load_config(a.config, nullptr);
  PointCloud sa = load_scan(a.scan_a, a.labels_a);
  PointCloud sb = load_scan(a.scan_b, a.labels_b);
  MixSpec spec;
  const long long cfg_seed = run.get_int("mix_seed", static_cast<long long>(run.seed));
  if (cfg_seed < 0) throw ConfigError("mix_seed must be non-negative");
  spec.rng_seed = a.seed.value_or(static_cast<std::uint64_t>(cfg_seed));
  spec.num_areas_choices = run.get_int_list("mix_num_areas", spec.num_areas_choices);
  const std::string mode = run.get_string("mix_mode", "random");
  if (mode == "inclination") {
    spec.mode = MixMode::inclination;
  } else if (mode == "azimuth") {
    spec.mode = MixMode::azimuth;
  } else if (mode != "random") {
    throw ConfigError("mix_mode must be inclination, azimuth or random");
  }
  PointCloud mixed = frustum_mix(sa, sb, run.sensor, spec);
  write_cloud(mixed, a.out);
  std::cout << "points = " << mixed.size() << "\n";
  return 0;
}

struct InterpArgs {
  std::string scan, labels, config, direction = "h", out, report;
};

int run_interpolate(const InterpArgs& a) {
  RunConfig run = load_config(a.config, nullptr);
  PointCloud cloud = load_scan(a.scan, a.labels);
  InterpolationResult r =
      range_interpolate(cloud, run.sensor, a.direction == "v" ? InterpDirection::vertical : InterpDirection::horizontal);
  if (!a.out.empty()) write_cloud(r.cloud, a.out);
  std::ostringstream os;
  os << "original = " << cloud.size() << "\n";
  os << "interpolated = " << r.interpolated << "\n";
  os << "total = " << r.cloud.size() << "\n";
  if (!a.report.empty()) io::write_atomic(a.report, os.str());
  std::cout << os.str();
  return 0;
}

struct TrainArgs {
  std::string config, checkpoint_out, metrics_out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
};

int run_train_toy(const TrainArgs& a) {
  RunConfig run = load_config(a.config, kToyConfig);
  const std::uint64_t seed = a.seed.value_or(run.seed);
  TrainOptions options = TrainOptions::from_run_config(run);
  if (a.epochs) {
    if (*a.epochs < 0) throw ConfigError("--epochs must be >= 0");
    options.epochs = *a.epochs;
  }
  const auto n = static_cast<std::size_t>(run.get_int("toy_points", 2000));
  PointCloud scene = synth_scene(seed, n, run.sensor);
  FrnetModel model(FrnetConfig::from_run_config(run), run.sensor, seed);
  std::cout << "parameters = " << model.num_parameters() << "\n";
  TrainResult result = train_on_scan(model, scene, options, [](const EpochStats& e) {
    std::cout << "epoch " << e.epoch << " loss " << num(e.loss, 6) << " point_ce " << num(e.point_ce, 6) << "\n";
  });
  std::cout << format_scores(result.scores);
  if (!a.checkpoint_out.empty()) nn::save_checkpoint(model.parameters(), a.checkpoint_out);
  if (!a.metrics_out.empty()) {
    std::ostringstream os;
    os << "seed = " << seed << "\n";
    os << "epochs = " << options.epochs << "\n";
    os << "points = " << scene.size() << "\n";
    if (!result.history.empty()) os << "final_loss = " << num(result.history.back().loss, 6) << "\n";
    os << format_scores(result.scores);
    io::write_atomic(a.metrics_out, os.str());
  }
  return 0;
}

struct PredictArgs {
  std::string scan, config, checkpoint, out_labels;
};

int run_predict(const PredictArgs& a) {
  RunConfig run = load_config(a.config, nullptr);
  FrnetModel model(FrnetConfig::from_run_config(run), run.sensor, run.seed);
  auto params = model.parameters();
  nn::load_checkpoint(params, a.checkpoint);
  PointCloud cloud = read_scan(a.scan);
  std::vector<Label> pred = model.predict(cloud);
  write_labels(pred, a.out_labels);
  std::cout << "points = " << pred.size() << "\n";
  return 0;
}

struct EvalArgs {
  std::string pred, gt, config;
};

int run_eval(const EvalArgs& a) {
  RunConfig run = load_config(a.config, nullptr);
  std::vector<Label> pred = read_labels(a.pred), gt = read_labels(a.gt);
  ConfusionMatrix cm(run.sensor.num_classes, run.sensor.ignore_label);
  cm.accumulate(pred, gt);
  std::cout << format_scores(iou_acc(cm));
  return 0;
}

int run_eval_corruption(const std::string& table) {
  std::cout << format_corruption(corruption_scores(parse_corruption_table(io::read_text(table))));
  return 0;
}

struct KnnArgs {
  std::string pred_grid, scan, config, out_labels;
  std::optional<int> k, window;
  std::optional<double> cutoff;
};

int run_knn(const KnnArgs& a) {
  RunConfig run = load_config(a.config, nullptr);
  KnnParams params;
  params.k = a.k.value_or(static_cast<int>(run.get_int("knn_k", params.k)));
  params.window = a.window.value_or(static_cast<int>(run.get_int("knn_window", params.window)));
  params.cutoff = a.cutoff.value_or(run.get_double("knn_cutoff", params.cutoff));
  std::vector<Label> grid = read_labels(a.pred_grid);
  PointCloud cloud = read_scan(a.scan);
  FrustumIndex index = project(cloud, run.sensor);
  std::vector<Label> out = knn_postprocess(grid, cloud, index, run.sensor, params);
  write_labels(out, a.out_labels);
  std::cout << "points = " << out.size() << "\n";
  return 0;
}

int run_gradcheck(const std::string& config, std::uint64_t seed) {
  RunConfig run = load_config(config, kDeskConfig);
  nn::GradCheckReport report = model_grad_check(run, seed);
  std::size_t over = 0, beyond = 0;
  std::printf("%-32s %6s %10s %5s\n", "parameter", "coords", "max_rel", "over");
  for (const auto& e : report.entries) {
    if (e.skipped) continue;
    std::printf("%-32s %6zu %10.3e %5zu\n", e.name.c_str(), e.checked, e.max_rel_error, e.over_tolerance);
    over += e.over_tolerance;
    beyond += e.beyond_resolution;
  }
  std::printf("loss = %.12f\n", report.loss);
  std::printf("max_rel_err = %.6e\n", report.max_rel_error);
  std::printf("tolerance = %.1e\n", report.tolerance);
  std::printf("over_tolerance = %zu\n", over);
  std::printf("beyond_fd_resolution = %zu (resolution %.2e)\n", beyond, report.resolution);
  std::printf("%s\n", report.passed ? "PASS" : "FAIL");
  std::fflush(stdout);
  return report.passed ? 0 : kExitNumeric;
}

struct RenderArgs {
  std::string scan, labels, config, out;
};

int run_render(const RenderArgs& a) {
  RunConfig run = load_config(a.config, nullptr);
  PointCloud cloud = load_scan(a.scan, a.labels);
  FrustumIndex index = project(cloud, run.sensor);
  RangeImage image = build_range_image(cloud, index, run.sensor);
  render_ppm(image, default_palette(run.sensor.num_classes), run.sensor.ignore_label, a.out);
  std::cout << "valid_pixels = " << image.num_valid() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FRNet frustum-range LiDAR segmentation tools"};
  app.require_subcommand(1);

  ProjectArgs pa;
  auto* project_cmd = app.add_subcommand("project", "Project a scan and write its frustum index and range image");
  project_cmd->add_option("--scan", pa.scan, "Point file (.bin)")->required();
  project_cmd->add_option("--labels", pa.labels, "Label file (.label)");
  project_cmd->add_option("--config", pa.config, "Run config")->required();
  project_cmd->add_option("--out-ppm", pa.out_ppm, "Range image (PPM)");
  project_cmd->add_option("--out-index", pa.out_index, "Per-point pixel coordinates (text)");

  MixArgs ma;
  auto* augment_cmd = app.add_subcommand("augment", "Scene augmentations");
  augment_cmd->require_subcommand(1);
  auto* mix_cmd = augment_cmd->add_subcommand("mix", "FrustumMix two labeled scans");
  mix_cmd->add_option("--scan-a", ma.scan_a)->required();
  mix_cmd->add_option("--scan-b", ma.scan_b)->required();
  mix_cmd->add_option("--labels-a", ma.labels_a)->required();
  mix_cmd->add_option("--labels-b", ma.labels_b)->required();
  mix_cmd->add_option("--config", ma.config)->required();
  mix_cmd->add_option("--seed", ma.seed, "Mix seed (config mix_seed, then seed, if omitted)");
  mix_cmd->add_option("--out", ma.out, "Output prefix (writes PREFIX.bin and PREFIX.label)")->required();

  InterpArgs ia;
  auto* interp_cmd = app.add_subcommand("interpolate", "Range-Interpolation of empty pixels");
  interp_cmd->add_option("--scan", ia.scan)->required();
  interp_cmd->add_option("--labels", ia.labels);
  interp_cmd->add_option("--config", ia.config)->required();
  interp_cmd->add_option("--direction", ia.direction)->check(CLI::IsMember({"h", "v"}));
  interp_cmd->add_option("--out", ia.out, "Output prefix (writes PREFIX.bin and PREFIX.label)");
  interp_cmd->add_option("--report", ia.report, "Count report (text)");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train-toy", "Overfit the model on a synthetic scene");
  train_cmd->add_option("--config", ta.config, "Run config (built-in toy config if omitted)");
  train_cmd->add_option("--seed", ta.seed);
  train_cmd->add_option("--epochs", ta.epochs);
  train_cmd->add_option("--checkpoint-out", ta.checkpoint_out);
  train_cmd->add_option("--metrics-out", ta.metrics_out);

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Per-point labels from a checkpoint");
  predict_cmd->add_option("--scan", pr.scan)->required();
  predict_cmd->add_option("--config", pr.config)->required();
  predict_cmd->add_option("--checkpoint", pr.checkpoint)->required();
  predict_cmd->add_option("--out-labels", pr.out_labels)->required();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
  eval_cmd->add_option("--pred", ea.pred)->required();
  eval_cmd->add_option("--gt", ea.gt)->required();
  eval_cmd->add_option("--config", ea.config)->required();

  std::string table;
  auto* corruption_cmd = app.add_subcommand("eval-corruption", "Corruption Error and Resilience Rate");
  corruption_cmd->add_option("--table", table)->required();

  KnnArgs ka;
  auto* knn_cmd = app.add_subcommand("knn", "KNN post-processing of a 2D prediction grid");
  knn_cmd->add_option("--pred-grid", ka.pred_grid, "H*W uint32 labels, row-major")->required();
  knn_cmd->add_option("--scan", ka.scan)->required();
  knn_cmd->add_option("--config", ka.config)->required();
  knn_cmd->add_option("--k", ka.k);
  knn_cmd->add_option("--window", ka.window);
  knn_cmd->add_option("--cutoff", ka.cutoff);
  knn_cmd->add_option("--out-labels", ka.out_labels)->required();

  std::string gc_config;
  std::uint64_t gc_seed = 7;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full training graph");
  gradcheck_cmd->add_option("--config", gc_config, "Run config (built-in desk config if omitted)");
  gradcheck_cmd->add_option("--seed", gc_seed);

  RenderArgs ra;
  auto* render_cmd = app.add_subcommand("render", "Render the labeled range image as PPM");
  render_cmd->add_option("--scan", ra.scan)->required();
  render_cmd->add_option("--labels", ra.labels);
  render_cmd->add_option("--config", ra.config)->required();
  render_cmd->add_option("--out", ra.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*project_cmd) return run_project(pa);
    if (*mix_cmd) return run_mix(ma);
    if (*interp_cmd) return run_interpolate(ia);
    if (*train_cmd) return run_train_toy(ta);
    if (*predict_cmd) return run_predict(pr);
    if (*eval_cmd) return run_eval(ea);
    if (*corruption_cmd) return run_eval_corruption(table);
    if (*knn_cmd) return run_knn(ka);
    if (*gradcheck_cmd) return run_gradcheck(gc_config, gc_seed);
    if (*render_cmd) return run_render(ra);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  std::cerr << app.help();
  return kExitUsage;
}
