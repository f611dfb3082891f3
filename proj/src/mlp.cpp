#include "cmdf/mlp.hpp"

#include <cmath>

#include "cmdf/errors.hpp"

namespace cmdf {

ad::Value Linear::operator()(const ad::Value& x) const {
  return ad::add_bias(ad::matmul(x, weight), bias);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, double gain) {
  std::normal_distribution<double> normal(0.0, gain / std::sqrt(static_cast<double>(in)));
  Tensor w(in, out);
  for (double& v : w.values()) v = normal(rng);
  return {ad::parameter(std::move(w)), ad::parameter(Tensor(1, out))};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {ad::parameter(Tensor(in, out)), ad::parameter(Tensor(1, out))};
}

ad::Value activate(const ad::Value& x, Activation act, double leaky_slope) {
  return act == Activation::relu ? ad::relu(x) : ad::leaky_relu(x, leaky_slope);
}

ad::Value Mlp::operator()(const ad::Value& x) const {
  ad::Value h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size() || activate_output) h = activate(h, activation, leaky_slope);
  }
  return h;
}

Mlp Mlp::init(const std::vector<std::size_t>& dims, Activation act, Rng& rng, bool activate_output) {
  if (dims.size() < 2) throw ValidationError("Mlp::init: need at least input and output widths");
  Mlp m;
  m.activation = act;
  m.activate_output = activate_output;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool followed_by_activation = i + 2 < dims.size() || activate_output;
    m.layers.push_back(Linear::init(dims[i], dims[i + 1], rng, followed_by_activation ? std::sqrt(2.0) : 1.0));
  }
  return m;
}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i) + ".w", layers[i].weight});
    out.push_back({prefix + "." + std::to_string(i) + ".b", layers[i].bias});
  }
}

}  // namespace cmdf
