#include "cmdf/metrics.hpp"

#include <cstdio>
#include <numeric>

#include "cmdf/errors.hpp"

namespace cmdf {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ValidationError("ConfusionMatrix: need at least one class");
}

ConfusionMatrix ConfusionMatrix::from_counts(std::size_t classes, std::span<const std::uint64_t> row_major) {
  ConfusionMatrix cm(classes);
  if (row_major.size() != classes * classes) throw ValidationError("ConfusionMatrix::from_counts: wrong size");
  cm.counts_.assign(row_major.begin(), row_major.end());
  return cm;
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::accumulate(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> gt) {
  if (pred.size() != gt.size()) {
    throw ValidationError("ConfusionMatrix::accumulate: " + std::to_string(pred.size()) + " predictions for " +
                          std::to_string(gt.size()) + " labels");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= classes_ || gt[i] >= classes_) {
      throw ValidationError("ConfusionMatrix::accumulate: class id out of range at index " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < pred.size(); ++i) ++counts_[gt[i] * classes_ + pred[i]];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ValidationError("ConfusionMatrix::merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::true_positives(std::size_t c) const { return (*this)(c, c); }

std::uint64_t ConfusionMatrix::false_positives(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t g = 0; g < classes_; ++g) {
    if (g != c) s += (*this)(g, c);
  }
  return s;
}

std::uint64_t ConfusionMatrix::false_negatives(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) {
    if (p != c) s += (*this)(c, p);
  }
  return s;
}

std::optional<double> ConfusionMatrix::iou(std::size_t c) const {
  const std::uint64_t tp = true_positives(c);
  const std::uint64_t denom = tp + false_positives(c) + false_negatives(c);
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

double miou(const ConfusionMatrix& cm, AbsentClassPolicy policy) {
  double sum = 0.0;
  std::size_t included = 0;
  bool any_present = false;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto v = cm.iou(c);
    if (v) {
      any_present = true;
      sum += *v;
      ++included;
    } else if (policy == AbsentClassPolicy::strict) {
      ++included;
    }
  }
  if (!any_present) throw ValidationError("miou: every class is empty");
  return sum / static_cast<double>(included);
}

double fwiou(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw ValidationError("fwiou: empty confusion matrix");
  double sum = 0.0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    std::uint64_t gt_count = 0;
    for (std::size_t p = 0; p < cm.classes(); ++p) gt_count += cm(c, p);
    if (gt_count == 0) continue;
    sum += static_cast<double>(gt_count) * *cm.iou(c);
  }
  return sum / static_cast<double>(total);
}

std::string format_report_csv(const ConfusionMatrix& cm) {
  std::string out = "class_id,iou\n";
  char buf[64];
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto v = cm.iou(c);
    if (v) {
      std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", c, *v);
    } else {
      std::snprintf(buf, sizeof(buf), "%zu,nan\n", c);
    }
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "miou,%.6f\n", miou(cm));
  out += buf;
  std::snprintf(buf, sizeof(buf), "fwiou,%.6f\n", fwiou(cm));
  out += buf;
  return out;
}

}  // namespace cmdf
