#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cmdf/autodiff.hpp"
#include "cmdf/optim.hpp"
#include "cmdf/rng.hpp"

namespace cmdf {

enum class Activation { relu, leaky_relu };

struct Linear {
  ad::Value weight;  // in x out
  ad::Value bias;    // 1 x out

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
  ad::Value operator()(const ad::Value& x) const;

  /// Gaussian weights with std gain / sqrt(in), zero bias.
  static Linear init(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);
  static Linear zeros(std::size_t in, std::size_t out);
};

/// Stack of linear layers with an activation between consecutive layers.
/// The last layer is linear unless activate_output is set.
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::relu;
  double leaky_slope = 0.01;
  bool activate_output = false;

  ad::Value operator()(const ad::Value& x) const;
  std::size_t in() const { return layers.front().in(); }
  std::size_t out() const { return layers.back().out(); }

  /// dims = {in, hidden..., out}; throws ValidationError on fewer than two.
  static Mlp init(const std::vector<std::size_t>& dims, Activation act, Rng& rng,
                  bool activate_output = false);

  void collect(const std::string& prefix, ParamList& out) const;
};

ad::Value activate(const ad::Value& x, Activation act, double leaky_slope);

}  // namespace cmdf
