#include "cmdf/optim.hpp"

#include "cmdf/errors.hpp"

namespace cmdf {

namespace {

void validate(const SgdOptions& opt) {
  if (!(opt.lr > 0.0)) throw ValidationError("sgd: lr must be > 0");
  if (!(opt.momentum >= 0.0 && opt.momentum < 1.0)) {
    throw ValidationError("sgd: momentum must be in [0, 1)");
  }
}

}  // namespace

void sgd_update(Tensor& param, const Tensor& grad, Tensor& buffer, const SgdOptions& opt) {
  validate(opt);
  if (!param.same_shape(grad)) {
    throw ShapeError("sgd_update: param " + param.shape_string() + " vs grad " + grad.shape_string());
  }
  if (!grad.all_finite()) throw NumericError("sgd_update: non-finite gradient");
  if (buffer.empty()) buffer = Tensor(param.rows(), param.cols());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double v = opt.momentum * buffer[i] + grad[i];
    param[i] -= opt.lr * v;
    buffer[i] = v;
  }
}

void sgd_step(const ParamList& params, MomentumBuffers& buffers, const SgdOptions& opt) {
  validate(opt);
  for (const auto& p : params) {
    if (!p.value.grad().empty() && !p.value.grad().all_finite()) {
      throw NumericError("sgd_step: non-finite gradient for '" + p.name + "'");
    }
  }
  for (const auto& p : params) {
    if (p.value.grad().empty()) continue;
    ad::Value v = p.value;
    sgd_update(v.mutable_data(), p.value.grad(), buffers[p.name], opt);
    ad::clear_grad(v);
  }
}

}  // namespace cmdf
