#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "cmdf/tensor.hpp"

namespace cmdf::ad {

enum class OpKind {
  leaf,
  matmul,
  add_bias,
  relu,
  leaky_relu,
  sigmoid,
  concat_cols,
  concat_rows,
  elementwise_add,
  elementwise_mul,
  row_mean,
  broadcast_row,
  gather_rows,
  scatter_mean,
  softmax_cross_entropy,
  rowwise_l2_mean,
};

std::string_view op_name(OpKind op) noexcept;

/// All operator kinds that carry a forward and an adjoint rule.
std::span<const OpKind> all_op_kinds() noexcept;

/// Partition of rows into segments for scatter_mean. `members[k]` lists the
/// rows of segment k in the order they are summed.
struct Segments {
  std::vector<std::size_t> segment_of;
  std::vector<std::vector<std::size_t>> members;

  std::size_t count() const noexcept { return members.size(); }

  /// Dense ids in [0, K); members are listed in row order.
  static Segments from_ids(std::span<const std::size_t> ids);
};

namespace detail {
struct Node;
}

/// Handle to a node in a define-by-run computation graph. Copies share the
/// node. Data is evaluated eagerly when the node is created and can be
/// re-evaluated with forward().
class Value {
 public:
  Value() = default;

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& data() const;
  /// Leaves only: in-place access used by optimizers and finite differences.
  Tensor& mutable_data();
  /// Empty for nodes that do not require gradients.
  const Tensor& grad() const;
  OpKind op() const;
  bool requires_grad() const;
  /// Operands in call order; empty for leaves.
  std::vector<Value> inputs() const;
  std::size_t rows() const { return data().rows(); }
  std::size_t cols() const { return data().cols(); }
  /// Scalar value of a 1x1 node.
  double item() const;

  bool same_node(const Value& other) const noexcept { return node_ == other.node_; }

 private:
  explicit Value(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct ValueAccess;
};

Value constant(Tensor data);
Value parameter(Tensor data);

Value matmul(const Value& a, const Value& b);
/// x (N x C) plus a 1 x C bias row.
Value add_bias(const Value& x, const Value& bias);
Value relu(const Value& x);
Value leaky_relu(const Value& x, double slope);
Value sigmoid(const Value& x);
Value concat_cols(std::span<const Value> parts);
Value concat_rows(std::span<const Value> parts);
Value add(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
/// Mean over rows: N x C -> 1 x C.
Value row_mean(const Value& x);
/// Replicates a 1 x C row n times.
Value broadcast_row(const Value& x, std::size_t n);
Value gather_rows(const Value& x, std::vector<std::size_t> rows);
/// Per-segment mean: N x C -> K x C.
Value scatter_mean(const Value& x, std::shared_ptr<const Segments> segments);
/// Mean over rows of -log softmax(logits)[label]; result is 1 x 1.
Value softmax_cross_entropy(const Value& logits, std::vector<std::size_t> labels);
/// Mean over rows of ||a_i - b_i||_2 (or its square); result is 1 x 1.
/// The subgradient at a zero difference is 0.
Value rowwise_l2_mean(const Value& a, const Value& b, bool squared = false);

/// Re-evaluates every non-leaf node reachable from root in topological order.
void forward(const Value& root);

/// Reverse-mode accumulation from a 1x1 loss. Zeroes every gradient in the
/// graph first. A second call on the same root without zero_grad() throws.
void backward(const Value& loss);

/// Clears gradients reachable from root and re-arms backward().
void zero_grad(const Value& root);

/// Drops the gradient table of a single node (used between optimizer steps
/// for parameters shared by successive graphs).
void clear_grad(const Value& v);

/// Number of nodes reachable from root.
std::size_t graph_size(const Value& root);

}  // namespace cmdf::ad
