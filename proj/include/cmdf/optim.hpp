#pragma once

#include <map>
#include <string>
#include <vector>

#include "cmdf/autodiff.hpp"
#include "cmdf/tensor.hpp"

namespace cmdf {

struct NamedParam {
  std::string name;
  ad::Value value;
};

using ParamList = std::vector<NamedParam>;

struct SgdOptions {
  double lr = 0.05;
  double momentum = 0.9;
};

/// Momentum buffers keyed by parameter name.
using MomentumBuffers = std::map<std::string, Tensor>;

/// One heavy-ball update of a single table:
///   v <- momentum * buffer + grad;  p <- p - lr * v;  buffer <- v.
void sgd_update(Tensor& param, const Tensor& grad, Tensor& buffer, const SgdOptions& opt);

/// Applies sgd_update to every parameter that holds a gradient, then clears
/// the gradients. Parameters without a gradient (not reached by the last
/// backward pass) are left untouched. Throws NumericError before modifying
/// anything when a gradient is non-finite.
void sgd_step(const ParamList& params, MomentumBuffers& buffers, const SgdOptions& opt);

}  // namespace cmdf
