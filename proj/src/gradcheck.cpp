#include "cmdf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cmdf/errors.hpp"

namespace cmdf::ad {

GradCheckReport finite_difference_check(const LossBuilder& builder, std::span<const Value> leaves,
                                        double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ValidationError("finite_difference_check: eps must be in (0, 1e-2]");
  for (const auto& leaf : leaves) {
    if (leaf.op() != OpKind::leaf || !leaf.requires_grad()) {
      throw ValidationError("finite_difference_check: every checked input must be a parameter leaf");
    }
  }

  Value loss = builder(leaves);
  backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    analytic.push_back(leaf.grad().empty() ? Tensor(leaf.rows(), leaf.cols()) : leaf.grad());
  }

  GradCheckReport report;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Value leaf = leaves[l];
    Tensor& x = leaf.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + eps;
      forward(loss);
      const double up = loss.item();
      x[i] = saved - eps;
      forward(loss);
      const double down = loss.item();
      x[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[l][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : HUGE_VAL;
        report.worst_leaf = l;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  forward(loss);
  return report;
}

}  // namespace cmdf::ad
