#pragma once

// Segmentation scores from a confusion matrix, corruption robustness scores
// (Corruption Error / Resilience Rate) and the KNN post-processing baseline
// used by classic range-view pipelines to label occluded points.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "frnet/error.hpp"
#include "frnet/geometry.hpp"
#include "frnet/scan_io.hpp"

namespace frnet {

class ConfusionMatrix {
 public:
  ConfusionMatrix(int num_classes, Label ignore_label)
      : classes_(static_cast<std::size_t>(num_classes)), ignore_(ignore_label), counts_(classes_ * classes_, 0) {}

  std::size_t num_classes() const { return classes_; }
  // Points with ground truth g predicted as p.
  std::uint64_t at(std::size_t g, std::size_t p) const { return counts_[g * classes_ + p]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  // Ground truth equal to the ignore label is skipped.
  void accumulate(std::span<const Label> pred, std::span<const Label> gt) {
    if (pred.size() != gt.size()) {
      throw ShapeError("accumulate: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                       " labels");
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore_) continue;
      if (gt[i] >= classes_ || pred[i] >= classes_) {
        throw DataError("accumulate: class id out of range at index " + std::to_string(i));
      }
      ++counts_[gt[i] * classes_ + pred[i]];
    }
  }

  void merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw ShapeError("merge: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

 private:
  std::size_t classes_;
  Label ignore_;
  std::vector<std::uint64_t> counts_;
};

struct ClassScores {
  std::vector<std::optional<double>> iou;  // empty when TP+FP+FN = 0
  std::vector<std::optional<double>> acc;  // empty when TP+FP = 0
  double miou = 0.0;
  double macc = 0.0;
};

// IoU = TP/(TP+FP+FN) and Acc = TP/(TP+FP) per class. The Acc ratio is the
// column-normalized one (a precision). Classes with a zero denominator are left
// out of the corresponding mean.
inline ClassScores iou_acc(const ConfusionMatrix& cm) {
  const std::size_t c = cm.num_classes();
  ClassScores s;
  s.iou.resize(c);
  s.acc.resize(c);
  double iou_sum = 0.0, acc_sum = 0.0;
  std::size_t iou_n = 0, acc_n = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const double tp = static_cast<double>(cm.at(k, k));
    double fp = 0.0, fn = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += static_cast<double>(cm.at(j, k));
      fn += static_cast<double>(cm.at(k, j));
    }
    if (tp + fp + fn > 0.0) {
      s.iou[k] = tp / (tp + fp + fn);
      iou_sum += *s.iou[k];
      ++iou_n;
    }
    if (tp + fp > 0.0) {
      s.acc[k] = tp / (tp + fp);
      acc_sum += *s.acc[k];
      ++acc_n;
    }
  }
  s.miou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
  s.macc = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
  return s;
}

inline double miou_of(std::span<const Label> pred, std::span<const Label> gt, int num_classes, Label ignore) {
  ConfusionMatrix cm(num_classes, ignore);
  cm.accumulate(pred, gt);
  return iou_acc(cm).miou;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

// Aligned table followed by a `key = value` dump (percentages, 2 decimals).
inline std::string format_scores(const ClassScores& s) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-8s %10s %10s\n", "class", "IoU(%)", "Acc(%)");
  os << line;
  auto cell = [](const std::optional<double>& v) { return v ? detail::fixed(100.0 * *v, 2) : std::string("-"); };
  for (std::size_t k = 0; k < s.iou.size(); ++k) {
    std::snprintf(line, sizeof line, "%-8zu %10s %10s\n", k, cell(s.iou[k]).c_str(), cell(s.acc[k]).c_str());
    os << line;
  }
  std::snprintf(line, sizeof line, "%-8s %10s %10s\n", "mean", detail::fixed(100.0 * s.miou, 2).c_str(),
                detail::fixed(100.0 * s.macc, 2).c_str());
  os << line << "\n";
  os << "miou = " << detail::fixed(100.0 * s.miou, 2) << "\n";
  os << "macc = " << detail::fixed(100.0 * s.macc, 2) << "\n";
  for (std::size_t k = 0; k < s.iou.size(); ++k) {
    if (s.iou[k]) os << "iou." << k << " = " << detail::fixed(100.0 * *s.iou[k], 2) << "\n";
    if (s.acc[k]) os << "acc." << k << " = " << detail::fixed(100.0 * *s.acc[k], 2) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Corruption robustness

struct CorruptionEntry {
  std::array<double, 3> model{};
  std::array<double, 3> baseline{};
};

struct CorruptionTable {
  std::map<std::string, CorruptionEntry> corruptions;
  double clean = 0.0;

  void validate() const {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(clean)) throw DataError("clean IoU outside [0,1]");
    for (const auto& [name, e] : corruptions) {
      for (int l = 0; l < 3; ++l) {
        if (!in_unit(e.model[l]) || !in_unit(e.baseline[l])) throw DataError("IoU outside [0,1] for " + name);
      }
    }
  }
};

// Keys: `<corruption>.level<1|2|3>`, `<corruption>.base.level<1|2|3>`, `clean`.
inline CorruptionTable parse_corruption_table(std::string_view text) {
  CorruptionTable table;
  std::map<std::string, std::array<int, 2>> seen;  // level bitmasks (model, base)
  bool have_clean = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("line " + std::to_string(line_no) + ": expected key = value");
    std::string key(detail::trim(line.substr(0, eq)));
    double value = detail::parse_double(key, detail::trim(line.substr(eq + 1)));
    if (key == "clean") {
      table.clean = value;
      have_clean = true;
      continue;
    }
    auto dot = key.rfind('.');
    if (dot == std::string::npos || key.size() != dot + 7 || key.compare(dot + 1, 5, "level") != 0) {
      throw FormatError("line " + std::to_string(line_no) + ": unrecognized key '" + key + "'");
    }
    const int level = key[dot + 6] - '1';
    if (level < 0 || level > 2) throw FormatError("line " + std::to_string(line_no) + ": level must be 1, 2 or 3");
    std::string head = key.substr(0, dot);
    bool base = false;
    if (head.size() > 5 && head.compare(head.size() - 5, 5, ".base") == 0) {
      base = true;
      head.resize(head.size() - 5);
    }
    if (head.empty()) throw FormatError("line " + std::to_string(line_no) + ": empty corruption name");
    auto& entry = table.corruptions[head];
    (base ? entry.baseline : entry.model)[static_cast<std::size_t>(level)] = value;
    seen[head][base ? 1 : 0] |= 1 << level;
  }
  if (!have_clean) throw FormatError("corruption table lacks 'clean'");
  for (const auto& [name, masks] : seen) {
    if (masks[0] != 7 || masks[1] != 7) throw FormatError("corruption '" + name + "' needs all three levels for model and base");
  }
  table.validate();
  return table;
}

struct CorruptionScores {
  std::map<std::string, double> ce;  // percent
  std::map<std::string, double> rr;  // percent
  double mce = 0.0;
  double mrr = 0.0;
};

// CE = sum_l (1 - IoU_l) / sum_l (1 - IoU_l^base), RR = sum_l IoU_l / (3 IoU_clean),
// both in percent; mCE / mRR average over corruption types.
inline CorruptionScores corruption_scores(const CorruptionTable& table) {
  table.validate();
  if (table.corruptions.empty()) throw DataError("corruption table is empty");
  if (table.clean <= 0.0) throw DataError("clean IoU must be positive for resilience rate");
  CorruptionScores s;
  for (const auto& [name, e] : table.corruptions) {
    double num = 0.0, den = 0.0, kept = 0.0;
    for (int l = 0; l < 3; ++l) {
      num += 1.0 - e.model[l];
      den += 1.0 - e.baseline[l];
      kept += e.model[l];
    }
    if (den == 0.0) throw DataError("corruption error undefined for '" + name + "': baseline is perfect");
    s.ce[name] = 100.0 * num / den;
    s.rr[name] = 100.0 * kept / (3.0 * table.clean);
    s.mce += s.ce[name];
    s.mrr += s.rr[name];
  }
  s.mce /= static_cast<double>(table.corruptions.size());
  s.mrr /= static_cast<double>(table.corruptions.size());
  return s;
}

inline std::string format_corruption(const CorruptionScores& s) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %10s %10s\n", "corruption", "CE(%)", "RR(%)");
  os << line;
  for (const auto& [name, ce] : s.ce) {
    std::snprintf(line, sizeof line, "%-20s %10.1f %10.1f\n", name.c_str(), ce, s.rr.at(name));
    os << line;
  }
  std::snprintf(line, sizeof line, "%-20s %10.1f %10.1f\n", "mean", s.mce, s.mrr);
  os << line << "\n";
  os << "mce = " << detail::fixed(s.mce, 1) << "\n";
  os << "mrr = " << detail::fixed(s.mrr, 1) << "\n";
  for (const auto& [name, ce] : s.ce) {
    os << "ce." << name << " = " << detail::fixed(ce, 1) << "\n";
    os << "rr." << name << " = " << detail::fixed(s.rr.at(name), 1) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// KNN post-processing

struct KnnParams {
  int k = 5;
  int window = 5;       // odd side length of the search window
  double cutoff = 1.0;  // metres of depth difference
};

struct KnnCandidate {
  double distance;
  std::size_t order;  // row-major position inside the window, for tie-breaks
  Label label;
};

// Votes among candidates: drop those beyond the cutoff (keeping the nearest if
// none survive), keep the K nearest, majority label; ties go to the label of
// the nearest tied candidate.
inline Label knn_vote(std::vector<KnnCandidate> cands, const KnnParams& params) {
  if (cands.empty()) throw DataError("knn_vote: no candidates");
  std::stable_sort(cands.begin(), cands.end(), [](const KnnCandidate& a, const KnnCandidate& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.order < b.order;
  });
  std::size_t keep = 0;
  while (keep < cands.size() && cands[keep].distance <= params.cutoff) ++keep;
  if (keep == 0) keep = 1;
  keep = std::min(keep, static_cast<std::size_t>(params.k));
  std::map<Label, std::size_t> votes;
  for (std::size_t i = 0; i < keep; ++i) ++votes[cands[i].label];
  std::size_t best = 0;
  for (const auto& [l, n] : votes) best = std::max(best, n);
  for (std::size_t i = 0; i < keep; ++i) {
    if (votes[cands[i].label] == best) return cands[i].label;
  }
  return cands.front().label;
}

// Labels every point from a per-pixel 2D prediction. Candidates are the
// occupied pixels of the window centred on the point's pixel (rows and columns
// clamped at the image border, no azimuth wrap), ranked by the absolute depth
// difference between the point and the pixel's nearest point.
inline std::vector<Label> knn_postprocess(std::span<const Label> range_pred, const PointCloud& cloud,
                                          const FrustumIndex& index, const SensorConfig& config,
                                          const KnnParams& params) {
  if (params.k < 1) throw RangeError("knn: K must be >= 1");
  if (params.window < 1 || params.window % 2 == 0) throw RangeError("knn: window must be odd and >= 1");
  if (range_pred.size() != index.num_pixels()) throw ShapeError("knn: prediction grid size mismatch");
  const RangeImage image = build_range_image(cloud, index, config);
  const int r = params.window / 2;
  const int h = index.height(), w = index.width();
  std::vector<Label> out(cloud.size());
  std::vector<KnnCandidate> cands;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double d = cloud.points[i].depth();
    cands.clear();
    std::size_t order = 0;
    for (int dv = -r; dv <= r; ++dv) {
      for (int du = -r; du <= r; ++du, ++order) {
        const int v = index.v(i) + dv, u = index.u(i) + du;
        if (v < 0 || v >= h || u < 0 || u >= w) continue;
        const std::size_t px = image.at(v, u);
        if (!image.valid[px]) continue;
        cands.push_back({std::abs(d - image.point[px].depth()), order, range_pred[px]});
      }
    }
    out[i] = knn_vote(cands, params);
  }
  return out;
}

}  // namespace frnet
