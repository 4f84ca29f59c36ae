#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "frnet/error.hpp"
#include "frnet/nn/tensor.hpp"

namespace frnet::nn {

struct NamedVar {
  std::string name;
  Var var;
};

struct GradCheckEntry {
  std::string name;
  bool skipped = false;  // input does not require a gradient
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t over_tolerance = 0;
  // Coordinates over tolerance whose absolute error also exceeds the
  // resolution of the central difference (see GradCheckReport::resolution).
  std::size_t beyond_resolution = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
  double loss = 0.0;
  // Absolute error a central difference can carry from rounding the loss
  // alone: 8 * machine epsilon * |L| / (2 eps).
  double resolution = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Compares the analytic gradient of a scalar loss against central
// differences (L(x+eps) - L(x-eps)) / 2eps, coordinate by coordinate, for
// every input that requires a gradient. loss_fn must rebuild the graph from
// the current input values on every call. Input gradients are left zeroed.
inline GradCheckReport grad_check(const std::function<Var()>& loss_fn, std::vector<NamedVar> inputs,
                                  double eps = 1e-5, double tolerance = 1e-4) {
  auto evaluate = [&]() {
    Var loss = loss_fn();
    double v = loss.item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return loss;
  };

  for (NamedVar& in : inputs) {
    if (in.var.requires_grad()) {
      in.var.value().ensure_grad();
      in.var.value().zero_grad();
    }
  }
  Var base = evaluate();
  const double base_value = base.item();
  backward(base);
  std::vector<std::vector<double>> analytic;
  for (NamedVar& in : inputs) {
    auto g = in.var.value().grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  report.loss = base_value;
  report.resolution = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(base_value) / (2.0 * eps);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    NamedVar& in = inputs[k];
    GradCheckEntry entry;
    entry.name = in.name;
    if (!in.var.requires_grad()) {
      entry.skipped = true;
      report.entries.push_back(entry);
      continue;
    }
    auto data = in.var.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double plus = evaluate().item();
      data[i] = saved - eps;
      const double minus = evaluate().item();
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = relative_error(analytic[k][i], numeric);
      ++entry.checked;
      if (err > tolerance) {
        ++entry.over_tolerance;
        if (std::abs(analytic[k][i] - numeric) > report.resolution) ++entry.beyond_resolution;
      }
      if (entry.checked == 1 || err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_coord = i;
        entry.worst_analytic = analytic[k][i];
        entry.worst_numeric = numeric;
      }
    }
    in.var.value().zero_grad();
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(entry);
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace frnet::nn
