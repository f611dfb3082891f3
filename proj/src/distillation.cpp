#include "cmdf/distillation.hpp"

#include <string>

#include "cmdf/errors.hpp"
#include "cmdf/log.hpp"

namespace cmdf {

std::array<ad::Value, kNumScales> select_overlap_rows(const PointFeaturePyramid& pyramid,
                                                      const CorrespondenceTable& corr) {
  if (corr.n_points() != pyramid[0].rows()) {
    throw ValidationError("select_overlap_rows: correspondence covers " + std::to_string(corr.n_points()) +
                          " points, features have " + std::to_string(pyramid[0].rows()) + " rows");
  }
  std::array<ad::Value, kNumScales> out;
  for (std::size_t s = 0; s < kNumScales; ++s) out[s] = ad::gather_rows(pyramid[s], corr.indices);
  return out;
}

CmdBatch make_cmd_batch(const PointFeaturePyramid& student, const CorrespondenceTable& corr,
                        const TeacherFeatures& teacher) {
  CmdBatch batch;
  batch.student = select_overlap_rows(student, corr);
  for (std::size_t s = 0; s < kNumScales; ++s) {
    if (!teacher[s].same_shape(batch.student[s].data())) {
      throw ShapeError("make_cmd_batch: teacher " + teacher[s].shape_string() + " vs student " +
                       batch.student[s].data().shape_string() + " at scale " + std::to_string(s + 1));
    }
    batch.teacher[s] = ad::constant(teacher[s]);
  }
  return batch;
}

ad::Value cmd_loss(const CmdBatch& batch, bool squared) {
  for (std::size_t s = 0; s < kNumScales; ++s) {
    if (batch.teacher[s].requires_grad()) throw ValidationError("cmd_loss: teacher features must be frozen");
    if (batch.student[s].rows() != batch.rows() || batch.teacher[s].rows() != batch.rows()) {
      throw ShapeError("cmd_loss: row counts differ across scales");
    }
  }
  if (batch.rows() == 0) {
    log_warning("cmd_loss: scene has no camera overlap; distillation term is zero");
    return ad::constant(Tensor(1, 1, 0.0));
  }
  ad::Value total = ad::rowwise_l2_mean(batch.student[0], batch.teacher[0], squared);
  for (std::size_t s = 1; s < kNumScales; ++s) {
    total = ad::add(total, ad::rowwise_l2_mean(batch.student[s], batch.teacher[s], squared));
  }
  return total;
}

}  // namespace cmdf
