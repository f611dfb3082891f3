#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cmdf {

/// counts(g, p): points with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  std::size_t classes() const noexcept { return classes_; }
  std::uint64_t operator()(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
  std::uint64_t total() const noexcept;

  /// Throws ValidationError on length mismatch or out-of-range ids.
  void accumulate(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> gt);
  /// Elementwise sum of another matrix with the same class count.
  void merge(const ConfusionMatrix& other);

  std::uint64_t true_positives(std::size_t c) const;
  std::uint64_t false_positives(std::size_t c) const;
  std::uint64_t false_negatives(std::size_t c) const;

  /// TP / (TP + FP + FN); empty when the denominator is zero.
  std::optional<double> iou(std::size_t c) const;

  static ConfusionMatrix from_counts(std::size_t classes, std::span<const std::uint64_t> row_major);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

enum class AbsentClassPolicy {
  exclude,  // classes with TP + FP + FN = 0 are left out of the mean
  strict,   // ... or counted as IoU 0
};

/// Mean IoU over classes. Throws ValidationError when every class is empty.
double miou(const ConfusionMatrix& cm, AbsentClassPolicy policy = AbsentClassPolicy::exclude);

/// Sum over classes of (ground-truth frequency) * IoU. Throws on an empty matrix.
double fwiou(const ConfusionMatrix& cm);

/// `class_id,iou` rows, then `miou,<v>` and `fwiou,<v>`. Absent classes print "nan".
std::string format_report_csv(const ConfusionMatrix& cm);

}  // namespace cmdf
