#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "cmdf/autodiff.hpp"

namespace cmdf::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

using LossBuilder = std::function<Value(std::span<const Value>)>;

/// Compares reverse-mode gradients of builder(leaves) against central
/// differences (f(x+eps) - f(x-eps)) / (2 eps), one leaf coordinate at a time.
/// Relative error is |a - n| / max(|a|, |n|, 1e-3); the floor keeps
/// vanishing gradients from turning round-off into a large ratio.
/// Leaves must be parameters. Leaf data is restored on return.
GradCheckReport finite_difference_check(const LossBuilder& builder, std::span<const Value> leaves,
                                        double eps = 1e-5);

}  // namespace cmdf::ad
