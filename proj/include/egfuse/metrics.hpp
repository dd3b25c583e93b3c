// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egfuse/labels.hpp"

namespace egfuse {

/// Per-class IoU with the backing confusion matrix. `valid[c]` is false when
/// class c never occurs in either prediction or truth; such classes are
/// excluded from the mean.
struct MetricsReport {
  int num_classes = 0;
  std::vector<double> per_class_iou;
  std::vector<char> valid;
  double miou = 0.0;
  std::vector<int64_t> confusion;  // row = truth class, col = predicted class

  int64_t confusion_at(int truth, int pred) const {
    return confusion[static_cast<size_t>(truth) * num_classes + pred];
  }
};

/// Wraps an externally supplied per-class IoU vector (every entry counts
/// toward the mean).
inline MetricsReport report_from_per_class(const std::vector<double>& per_class_iou) {
  MetricsReport r;
  r.num_classes = static_cast<int>(per_class_iou.size());
  r.per_class_iou = per_class_iou;
  r.valid.assign(per_class_iou.size(), 1);
  r.confusion.assign(static_cast<size_t>(r.num_classes) * r.num_classes, 0);
  double sum = 0.0;
  for (double v : per_class_iou) sum += v;
  r.miou = per_class_iou.empty() ? 0.0 : sum / static_cast<double>(per_class_iou.size());
  return r;
}

inline MetricsReport compute_miou(const LabelBatch& predictions, const LabelBatch& truth,
                                  int num_classes) {
  if (num_classes < 1) throw ConfigError("compute_miou: num_classes must be >= 1");
  if (predictions.size() != truth.size()) throw ShapeError("compute_miou: batch sizes differ");

  MetricsReport r;
  r.num_classes = num_classes;
  r.confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);

  for (size_t i = 0; i < predictions.size(); ++i) {
    const LabelMap& p = predictions[i];
    const LabelMap& t = truth[i];
    if (p.height != t.height || p.width != t.width) {
      throw ShapeError("compute_miou: prediction/truth extents differ");
    }
    for (int64_t j = 0; j < t.size(); ++j) {
      const int tv = t.ids[j];
      const int pv = p.ids[j];
      if (tv == kIgnoreLabel) continue;
      if (tv >= num_classes) {
        throw DataError("compute_miou: truth class id " + std::to_string(tv) + " out of range");
      }
      if (pv >= num_classes) {
        throw DataError("compute_miou: predicted class id " + std::to_string(pv) + " out of range");
      }
      ++r.confusion[static_cast<size_t>(tv) * num_classes + pv];
    }
  }

  r.per_class_iou.assign(num_classes, 0.0);
  r.valid.assign(num_classes, 0);
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    int64_t tp = r.confusion_at(c, c);
    int64_t fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += r.confusion_at(o, c);
      fn += r.confusion_at(c, o);
    }
    const int64_t denom = tp + fp + fn;
    if (denom > 0) {
      r.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
      r.valid[c] = 1;
      sum += r.per_class_iou[c];
      ++counted;
    }
  }
  r.miou = counted > 0 ? sum / counted : 0.0;
  return r;
}

struct DomainGapReport {
  std::vector<double> per_class_gap;
  double mean = 0.0;
};

/// gap_c = source IoU_c − target IoU_c, averaged over the shared class set.
inline DomainGapReport domain_gap(const MetricsReport& source, const MetricsReport& target) {
  if (source.num_classes != target.num_classes) {
    throw ShapeError("domain_gap: class counts differ");
  }
  DomainGapReport g;
  g.per_class_gap.resize(source.num_classes);
  double sum = 0.0;
  for (int c = 0; c < source.num_classes; ++c) {
    g.per_class_gap[c] = source.per_class_iou[c] - target.per_class_iou[c];
    sum += g.per_class_gap[c];
  }
  g.mean = source.num_classes > 0 ? sum / source.num_classes : 0.0;
  return g;
}

}  // namespace egfuse
