#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "f2f/common.hpp"
#include "f2f/image.hpp"

// Confusion-matrix bookkeeping and IoU metrics. Rows are ground truth, columns
// are predictions; classes whose union is zero are excluded from means.

namespace f2f::metric {

struct ConfusionMatrix {
  int classes = 0;
  std::vector<int64_t> counts;  // classes*classes, row-major [gt][pred]

  explicit ConfusionMatrix(int c = 0) : classes(c), counts(static_cast<size_t>(c) * c, 0) {}

  int64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * classes + pred]; }
  int64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * classes + pred]; }

  int64_t total() const {
    int64_t n = 0;
    for (int64_t c : counts) n += c;
    return n;
  }

  void merge(const ConfusionMatrix& o) {
    F2F_CHECK(o.classes == classes, "confusion matrix class counts differ");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  }
};

inline void accumulate(ConfusionMatrix& cm, const img::LabelMap& pred, const img::LabelMap& gt,
                       int ignore_id = -1) {
  F2F_CHECK(pred.h == gt.h && pred.w == gt.w, "prediction/ground-truth sizes differ");
  for (size_t i = 0; i < gt.ids.size(); ++i) {
    const int32_t g = gt.ids[i], p = pred.ids[i];
    if (g == ignore_id) continue;
    F2F_CHECK_DATA(g >= 0 && g < cm.classes, "ground-truth label out of range");
    F2F_CHECK_DATA(p >= 0 && p < cm.classes, "predicted label out of range");
    ++cm.at(g, p);
  }
}

inline ConfusionMatrix confusion(const img::LabelMap& pred, const img::LabelMap& gt, int classes,
                                 int ignore_id = -1) {
  ConfusionMatrix cm(classes);
  accumulate(cm, pred, gt, ignore_id);
  return cm;
}

// IoU_c = TP / (TP + FP + FN); valid[c] is false when the union is zero.
struct IouTable {
  std::vector<double> iou;
  std::vector<bool> valid;
};

inline IouTable per_class_iou(const ConfusionMatrix& cm) {
  IouTable t;
  t.iou.assign(static_cast<size_t>(cm.classes), 0.0);
  t.valid.assign(static_cast<size_t>(cm.classes), false);
  for (int c = 0; c < cm.classes; ++c) {
    const int64_t tp = cm.at(c, c);
    int64_t fp = 0, fn = 0;
    for (int o = 0; o < cm.classes; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const int64_t uni = tp + fp + fn;
    if (uni > 0) {
      t.iou[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
      t.valid[static_cast<size_t>(c)] = true;
    }
  }
  return t;
}

inline double miou(const ConfusionMatrix& cm) {
  const IouTable t = per_class_iou(cm);
  double sum = 0;
  int n = 0;
  for (int c = 0; c < cm.classes; ++c)
    if (t.valid[static_cast<size_t>(c)]) {
      sum += t.iou[static_cast<size_t>(c)];
      ++n;
    }
  F2F_CHECK_DATA(n > 0, "mIoU undefined: every class has zero union");
  return sum / n;
}

inline double miou_mo(const ConfusionMatrix& cm, const std::vector<int>& moving_ids) {
  const IouTable t = per_class_iou(cm);
  double sum = 0;
  int n = 0;
  for (int c : moving_ids) {
    F2F_CHECK(c >= 0 && c < cm.classes, "moving class id out of range");
    if (t.valid[static_cast<size_t>(c)]) {
      sum += t.iou[static_cast<size_t>(c)];
      ++n;
    }
  }
  F2F_CHECK_DATA(n > 0, "mIoU-MO undefined: every moving class has zero union");
  return sum / n;
}

// One CSV row per labeled confusion matrix: per-class IoU columns (blank when
// the union is zero) plus the mean over valid classes.
inline void write_per_class_report(const std::string& path,
                                   const std::vector<std::string>& class_names,
                                   const std::vector<std::pair<std::string, ConfusionMatrix>>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  f << "row";
  for (const auto& n : class_names) f << "," << n;
  f << ",mean\n";
  for (const auto& [label, cm] : rows) {
    F2F_CHECK(static_cast<size_t>(cm.classes) == class_names.size(),
              "class name count does not match matrix");
    const IouTable t = per_class_iou(cm);
    f << label;
    for (int c = 0; c < cm.classes; ++c) {
      f << ",";
      if (t.valid[static_cast<size_t>(c)]) f << t.iou[static_cast<size_t>(c)];
    }
    f << "," << miou(cm) << "\n";
  }
  if (!f) throw DataError("short write: " + path);
}

}  // namespace f2f::metric
