#pragma once

#include <array>

#include "cmdf/autodiff.hpp"
#include "cmdf/backbones.hpp"
#include "cmdf/geometry.hpp"

namespace cmdf {

/// Student rows (2D knowledge branch, differentiable) and frozen teacher
/// rows for the in-view points, per scale.
struct CmdBatch {
  std::array<ad::Value, kNumScales> student;
  std::array<ad::Value, kNumScales> teacher;

  std::size_t rows() const { return student[0].rows(); }
};

/// In-view rows of every scale, in point order.
std::array<ad::Value, kNumScales> select_overlap_rows(const PointFeaturePyramid& pyramid,
                                                      const CorrespondenceTable& corr);

/// Pairs the selected student rows with constant teacher rows.
CmdBatch make_cmd_batch(const PointFeaturePyramid& student, const CorrespondenceTable& corr,
                        const TeacherFeatures& teacher);

/// Sum over scales of the mean per-point Euclidean distance between student
/// and teacher (squared distance when `squared`). An empty overlap yields a
/// constant zero and a warning.
ad::Value cmd_loss(const CmdBatch& batch, bool squared = false);

}  // namespace cmdf
