#pragma once

// Point- and frustum-level supervision: pseudo frustum labels, cross-entropy,
// Lovasz-Softmax, the combined training loss and a momentum SGD optimizer.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "frnet/error.hpp"
#include "frnet/geometry.hpp"
#include "frnet/model.hpp"
#include "frnet/nn/kernels.hpp"
#include "frnet/nn/tensor.hpp"

namespace frnet {

struct LossWeights {
  double lambda_frustum = 1.0;
  double frustum_ce = 1.0;
  double frustum_lovasz = 1.5;

  void validate() const {
    if (!(lambda_frustum >= 0.0) || !(frustum_ce >= 0.0) || !(frustum_lovasz >= 0.0)) {
      throw ConfigError("loss weights must be non-negative");
    }
  }
};

// Majority class per pixel of the given grid. Votes from ignore-labeled points
// are not counted, ties go to the smallest class id and pixels with no votes
// get ignore_label.
inline std::vector<Label> frustum_pseudo_labels(std::span<const Label> labels, const FrustumIndex& index,
                                                Label ignore_label, int num_classes) {
  if (labels.size() != index.num_points()) throw ShapeError("pseudo labels: label count != indexed points");
  std::vector<Label> out(index.num_pixels(), ignore_label);
  std::vector<std::size_t> votes(static_cast<std::size_t>(num_classes));
  for (std::size_t px = 0; px < index.num_pixels(); ++px) {
    auto members = index.members(px);
    if (members.empty()) continue;
    std::fill(votes.begin(), votes.end(), 0);
    bool any = false;
    for (std::size_t m : members) {
      const Label l = labels[m];
      if (l == ignore_label) continue;
      if (l >= static_cast<Label>(num_classes)) {
        throw DataError("label " + std::to_string(l) + " outside [0, num_classes) at point " + std::to_string(m));
      }
      ++votes[l];
      any = true;
    }
    if (!any) continue;
    out[px] = static_cast<Label>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  return out;
}

namespace detail {

inline void check_targets(std::size_t rows, std::size_t classes, std::span<const Label> targets, Label ignore) {
  if (targets.size() != rows) {
    throw ShapeError("loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != ignore && targets[i] >= classes) {
      throw DataError("target " + std::to_string(targets[i]) + " at row " + std::to_string(i) +
                      " is neither a class nor the ignore label");
    }
  }
}

}  // namespace detail

// Mean over non-ignored rows of -log softmax(logits)[target]; 0 when every row
// is ignored.
inline Var cross_entropy(const Var& logits, std::span<const Label> targets, Label ignore_label) {
  if (logits.shape().size() != 2) throw ShapeError("cross_entropy expects [M x C] logits");
  const std::size_t m = logits.dim(0), c = logits.dim(1);
  detail::check_targets(m, c, targets, ignore_label);
  std::vector<Label> tgt(targets.begin(), targets.end());
  auto x = logits.data();
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (tgt[r] == ignore_label) continue;
    const double* xr = x.data() + r * c;
    const double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xr[j] - mx);
    total += (mx + std::log(z)) - xr[tgt[r]];
    ++count;
  }
  const double value = count ? total / static_cast<double>(count) : 0.0;
  return nn::make_result(Tensor({1}, std::vector<double>{value}), {logits},
                         [tgt = std::move(tgt), m, c, count, ignore_label](nn::Node& self) {
                           if (count == 0) return;
                           auto gx = nn::detail::grad_of(self, 0);
                           auto x = std::as_const(self.inputs[0]->value).data();
                           const double g = std::as_const(self.value).grad()[0] / static_cast<double>(count);
                           for (std::size_t r = 0; r < m; ++r) {
                             if (tgt[r] == ignore_label) continue;
                             const double* xr = x.data() + r * c;
                             const double mx = *std::max_element(xr, xr + c);
                             double z = 0.0;
                             for (std::size_t j = 0; j < c; ++j) z += std::exp(xr[j] - mx);
                             for (std::size_t j = 0; j < c; ++j) {
                               double p = std::exp(xr[j] - mx) / z;
                               gx[r * c + j] += g * (p - (j == tgt[r] ? 1.0 : 0.0));
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// Lovasz-Softmax. For each class present among the non-ignored targets the
// absolute errors |fg - p_c| are sorted in descending order and dotted with
// the discrete gradient of the Jaccard loss evaluated along that order.

struct LovaszClassTerm {
  Label cls;
  double value;
  std::vector<std::size_t> rows;      // non-ignored rows, descending error order
  std::vector<double> weights;        // Jaccard gradient per sorted position
  std::vector<double> signs;          // d error / d p for each sorted row
};

inline std::vector<LovaszClassTerm> lovasz_terms(const Tensor& probs, std::span<const Label> targets,
                                                 Label ignore_label) {
  const std::size_t m = probs.dim(0), c = probs.dim(1);
  auto p = probs.data();
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] != ignore_label) kept.push_back(r);
  }
  std::vector<LovaszClassTerm> terms;
  for (std::size_t cls = 0; cls < c; ++cls) {
    std::size_t gts = 0;
    for (std::size_t r : kept) gts += targets[r] == cls;
    if (gts == 0) continue;
    std::vector<std::pair<double, std::size_t>> err;
    err.reserve(kept.size());
    for (std::size_t r : kept) {
      const double fg = targets[r] == cls ? 1.0 : 0.0;
      err.emplace_back(std::abs(fg - p[r * c + cls]), r);
    }
    std::stable_sort(err.begin(), err.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    LovaszClassTerm term;
    term.cls = static_cast<Label>(cls);
    term.value = 0.0;
    double cum_fg = 0.0, cum_bg = 0.0, prev = 0.0;
    for (const auto& [e, r] : err) {
      const double fg = targets[r] == cls ? 1.0 : 0.0;
      cum_fg += fg;
      cum_bg += 1.0 - fg;
      const double jaccard = 1.0 - (static_cast<double>(gts) - cum_fg) / (static_cast<double>(gts) + cum_bg);
      const double weight = jaccard - prev;
      prev = jaccard;
      term.value += e * weight;
      term.rows.push_back(r);
      term.weights.push_back(weight);
      term.signs.push_back(fg > 0.0 ? -1.0 : 1.0);
    }
    terms.push_back(std::move(term));
  }
  return terms;
}

inline void check_simplex(const Tensor& probs, double tol = 1e-6) {
  const std::size_t m = probs.dim(0), c = probs.dim(1);
  auto p = probs.data();
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = p[r * c + j];
      if (v < -tol || v > 1.0 + tol) throw DataError("lovasz_softmax: row " + std::to_string(r) + " leaves [0,1]");
      s += v;
    }
    if (std::abs(s - 1.0) > tol) throw DataError("lovasz_softmax: row " + std::to_string(r) + " does not sum to 1");
  }
}

inline Var lovasz_softmax(const Var& probs, std::span<const Label> targets, Label ignore_label) {
  if (probs.shape().size() != 2) throw ShapeError("lovasz_softmax expects [M x C] probabilities");
  detail::check_targets(probs.dim(0), probs.dim(1), targets, ignore_label);
  check_simplex(probs.value());
  auto terms = std::make_shared<std::vector<LovaszClassTerm>>(lovasz_terms(probs.value(), targets, ignore_label));
  double value = 0.0;
  for (const auto& t : *terms) value += t.value;
  if (!terms->empty()) value /= static_cast<double>(terms->size());
  const std::size_t c = probs.dim(1);
  return nn::make_result(Tensor({1}, std::vector<double>{value}), {probs}, [terms, c](nn::Node& self) {
    if (terms->empty()) return;
    auto gp = nn::detail::grad_of(self, 0);
    const double g = std::as_const(self.value).grad()[0] / static_cast<double>(terms->size());
    for (const auto& t : *terms) {
      for (std::size_t k = 0; k < t.rows.size(); ++k) gp[t.rows[k] * c + t.cls] += g * t.weights[k] * t.signs[k];
    }
  });
}

// ---------------------------------------------------------------------------

struct LossBreakdown {
  Var total;
  double point_ce = 0.0;
  std::vector<double> frustum_ce;      // per stage
  std::vector<double> frustum_lovasz;  // per stage
};

// L = CE(point logits) + lambda * sum over stages of
//     (w_ce * CE + w_lovasz * Lovasz)(frustum logits, pseudo labels).
// labels cover every row of the trace (originals and interpolated points).
inline LossBreakdown total_loss(const ForwardTrace& trace, std::span<const Label> labels, const LossWeights& weights,
                                Label ignore_label, int num_classes) {
  weights.validate();
  LossBreakdown out;
  Var point = cross_entropy(trace.point_logits, labels, ignore_label);
  out.point_ce = point.item();
  Var total = point;
  if (weights.lambda_frustum != 0.0) {
    for (const StageTrace& s : trace.stages) {
      auto pseudo = frustum_pseudo_labels(labels, s.index, ignore_label, num_classes);
      Var ce = cross_entropy(s.frustum_logits, pseudo, ignore_label);
      Var lov = lovasz_softmax(nn::softmax_rows(s.frustum_logits), pseudo, ignore_label);
      out.frustum_ce.push_back(ce.item());
      out.frustum_lovasz.push_back(lov.item());
      Var stage = nn::add(nn::scale(ce, weights.frustum_ce), nn::scale(lov, weights.frustum_lovasz));
      total = nn::add(total, nn::scale(stage, weights.lambda_frustum));
    }
  }
  out.total = total;
  return out;
}

// ---------------------------------------------------------------------------

// Momentum SGD: v <- mu v + g; p <- p - lr v; gradients are zeroed afterwards.
// With max_grad_norm > 0 the gradient is first rescaled so its global L2 norm
// does not exceed that value.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<NamedVar> params, double lr, double momentum, double max_grad_norm = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), max_norm_(max_grad_norm) {
    for (auto& p : params_) velocity_.emplace_back(p.var.value().size(), 0.0);
  }

  void step() {
    double sq = 0.0;
    for (auto& p : params_) {
      if (!p.var.requires_grad()) continue;
      for (double g : p.var.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
        sq += g * g;
      }
    }
    const double norm = std::sqrt(sq);
    const double factor = (max_norm_ > 0.0 && norm > max_norm_) ? max_norm_ / norm : 1.0;
    last_norm_ = norm;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Var& v = params_[k].var;
      if (!v.requires_grad()) continue;
      auto data = v.data();
      auto grad = v.grad();
      auto& vel = velocity_[k];
      for (std::size_t i = 0; i < data.size(); ++i) {
        vel[i] = momentum_ * vel[i] + factor * grad[i];
        data[i] -= lr_ * vel[i];
        grad[i] = 0.0;
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) {
      if (p.var.requires_grad()) p.var.value().zero_grad();
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  // Gradient norm seen by the last step(), before clipping.
  double last_grad_norm() const { return last_norm_; }

 private:
  std::vector<NamedVar> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
  double max_norm_;
  double last_norm_ = 0.0;
};

// Single-use convenience for stateless plain steps (momentum buffer fresh).
inline void sgd_step(std::vector<NamedVar> params, double lr, double momentum) {
  SgdOptimizer(std::move(params), lr, momentum).step();
}

}  // namespace frnet
