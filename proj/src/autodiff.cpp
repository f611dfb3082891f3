#include "cmdf/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "cmdf/errors.hpp"

namespace cmdf::ad {

namespace detail {

struct Node {
  OpKind op = OpKind::leaf;
  Tensor data;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  bool requires_grad = false;
  bool backward_done = false;

  // Operator attributes.
  std::vector<std::size_t> indices;  // gather_rows rows, cross-entropy labels
  std::shared_ptr<const Segments> segments;
  std::size_t count = 0;  // broadcast_row replication
  double slope = 0.0;     // leaky_relu
  bool squared = false;   // rowwise_l2_mean
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

struct ValueAccess {
  static const NodePtr& node(const Value& v) { return v.node_; }
  static Value wrap(NodePtr n) { return Value(std::move(n)); }
};

namespace {

const NodePtr& node_of(const Value& v) {
  if (!v.defined()) throw std::logic_error("autodiff: use of an undefined Value");
  return ValueAccess::node(v);
}

[[noreturn]] void shape_fail(OpKind op, const std::string& detail) {
  throw ShapeError(std::string(op_name(op)) + ": " + detail);
}

// ---------------------------------------------------------------- forward

void eval_matmul(Node& n) {
  const Tensor& a = n.parents[0]->data;
  const Tensor& b = n.parents[1]->data;
  Tensor out(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < orow.size(); ++j) orow[j] += aik * brow[j];
    }
  }
  n.data = std::move(out);
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void evaluate(Node& n) {
  switch (n.op) {
    case OpKind::leaf:
      return;
    case OpKind::matmul:
      eval_matmul(n);
      return;
    case OpKind::add_bias: {
      const Tensor& x = n.parents[0]->data;
      const Tensor& b = n.parents[1]->data;
      Tensor out = x;
      for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
      }
      n.data = std::move(out);
      return;
    }
    case OpKind::relu:
    case OpKind::leaky_relu: {
      const double slope = n.op == OpKind::relu ? 0.0 : n.slope;
      Tensor out = n.parents[0]->data;
      for (double& v : out.values()) v = v > 0 ? v : slope * v;
      n.data = std::move(out);
      return;
    }
    case OpKind::sigmoid: {
      Tensor out = n.parents[0]->data;
      for (double& v : out.values()) v = sigmoid_scalar(v);
      n.data = std::move(out);
      return;
    }
    case OpKind::concat_cols: {
      std::size_t cols = 0;
      for (const auto& p : n.parents) cols += p->data.cols();
      const std::size_t rows = n.parents.front()->data.rows();
      Tensor out(rows, cols);
      for (std::size_t i = 0; i < rows; ++i) {
        auto dst = out.row(i);
        std::size_t offset = 0;
        for (const auto& p : n.parents) {
          auto src = p->data.row(i);
          std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(offset));
          offset += src.size();
        }
      }
      n.data = std::move(out);
      return;
    }
    case OpKind::concat_rows: {
      std::size_t rows = 0;
      for (const auto& p : n.parents) rows += p->data.rows();
      Tensor out(rows, n.parents.front()->data.cols());
      std::size_t offset = 0;
      for (const auto& p : n.parents) {
        std::copy(p->data.values().begin(), p->data.values().end(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += p->data.size();
      }
      n.data = std::move(out);
      return;
    }
    case OpKind::elementwise_add:
    case OpKind::elementwise_mul: {
      const Tensor& a = n.parents[0]->data;
      const Tensor& b = n.parents[1]->data;
      Tensor out(a.rows(), a.cols());
      if (n.op == OpKind::elementwise_add) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
      } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
      }
      n.data = std::move(out);
      return;
    }
    case OpKind::row_mean: {
      const Tensor& x = n.parents[0]->data;
      Tensor out(1, x.cols());
      for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
      }
      const double inv = 1.0 / static_cast<double>(x.rows());
      for (double& v : out.values()) v *= inv;
      n.data = std::move(out);
      return;
    }
    case OpKind::broadcast_row: {
      const Tensor& x = n.parents[0]->data;
      Tensor out(n.count, x.cols());
      for (std::size_t i = 0; i < n.count; ++i) {
        std::copy(x.values().begin(), x.values().end(), out.row(i).begin());
      }
      n.data = std::move(out);
      return;
    }
    case OpKind::gather_rows: {
      const Tensor& x = n.parents[0]->data;
      Tensor out(n.indices.size(), x.cols());
      for (std::size_t i = 0; i < n.indices.size(); ++i) {
        auto src = x.row(n.indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
      }
      n.data = std::move(out);
      return;
    }
    case OpKind::scatter_mean: {
      const Tensor& x = n.parents[0]->data;
      const Segments& seg = *n.segments;
      Tensor out(seg.count(), x.cols());
      for (std::size_t k = 0; k < seg.count(); ++k) {
        auto dst = out.row(k);
        for (std::size_t r : seg.members[k]) {
          auto src = x.row(r);
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
        const double inv = 1.0 / static_cast<double>(seg.members[k].size());
        for (double& v : dst) v *= inv;
      }
      n.data = std::move(out);
      return;
    }
    case OpKind::softmax_cross_entropy: {
      const Tensor& z = n.parents[0]->data;
      double total = 0.0;
      for (std::size_t i = 0; i < z.rows(); ++i) {
        auto r = z.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double v : r) s += std::exp(v - mx);
        total += (mx + std::log(s)) - r[n.indices[i]];
      }
      n.data = Tensor(1, 1, total / static_cast<double>(z.rows()));
      return;
    }
    case OpKind::rowwise_l2_mean: {
      const Tensor& a = n.parents[0]->data;
      const Tensor& b = n.parents[1]->data;
      double total = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ra = a.row(i);
        auto rb = b.row(i);
        double sq = 0.0;
        for (std::size_t j = 0; j < ra.size(); ++j) {
          const double d = ra[j] - rb[j];
          sq += d * d;
        }
        total += n.squared ? sq : std::sqrt(sq);
      }
      n.data = Tensor(1, 1, total / static_cast<double>(a.rows()));
      return;
    }
  }
}

// ---------------------------------------------------------------- adjoints

void accumulate(Node& target, std::size_t i, double g) { target.grad[i] += g; }

void propagate(Node& n) {
  const Tensor& g = n.grad;
  switch (n.op) {
    case OpKind::leaf:
      return;
    case OpKind::matmul: {
      Node& a = *n.parents[0];
      Node& b = *n.parents[1];
      const std::size_t inner = a.data.cols();
      const std::size_t m = b.data.cols();
      if (a.requires_grad) {
        // dA = G * B^T
        for (std::size_t i = 0; i < a.data.rows(); ++i) {
          auto grow = g.row(i);
          auto arow = a.grad.row(i);
          for (std::size_t k = 0; k < inner; ++k) {
            auto brow = b.data.row(k);
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
            arow[k] += s;
          }
        }
      }
      if (b.requires_grad) {
        // dB = A^T * G
        for (std::size_t i = 0; i < a.data.rows(); ++i) {
          auto grow = g.row(i);
          for (std::size_t k = 0; k < inner; ++k) {
            const double aik = a.data(i, k);
            auto brow = b.grad.row(k);
            for (std::size_t j = 0; j < m; ++j) brow[j] += aik * grow[j];
          }
        }
      }
      return;
    }
    case OpKind::add_bias: {
      Node& x = *n.parents[0];
      Node& b = *n.parents[1];
      if (x.requires_grad) {
        for (std::size_t i = 0; i < g.size(); ++i) accumulate(x, i, g[i]);
      }
      if (b.requires_grad) {
        for (std::size_t i = 0; i < g.rows(); ++i) {
          auto r = g.row(i);
          for (std::size_t j = 0; j < r.size(); ++j) b.grad[j] += r[j];
        }
      }
      return;
    }
    case OpKind::relu:
    case OpKind::leaky_relu: {
      Node& x = *n.parents[0];
      if (!x.requires_grad) return;
      const double slope = n.op == OpKind::relu ? 0.0 : n.slope;
      for (std::size_t i = 0; i < g.size(); ++i) {
        accumulate(x, i, x.data[i] > 0 ? g[i] : slope * g[i]);
      }
      return;
    }
    case OpKind::sigmoid: {
      Node& x = *n.parents[0];
      if (!x.requires_grad) return;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = n.data[i];
        accumulate(x, i, g[i] * s * (1.0 - s));
      }
      return;
    }
    case OpKind::concat_cols: {
      std::size_t offset = 0;
      for (const auto& p : n.parents) {
        const std::size_t w = p->data.cols();
        if (p->requires_grad) {
          for (std::size_t i = 0; i < g.rows(); ++i) {
            auto src = g.row(i);
            auto dst = p->grad.row(i);
            for (std::size_t j = 0; j < w; ++j) dst[j] += src[offset + j];
          }
        }
        offset += w;
      }
      return;
    }
    case OpKind::concat_rows: {
      std::size_t offset = 0;
      for (const auto& p : n.parents) {
        if (p->requires_grad) {
          for (std::size_t i = 0; i < p->data.size(); ++i) p->grad[i] += g[offset + i];
        }
        offset += p->data.size();
      }
      return;
    }
    case OpKind::elementwise_add: {
      for (const auto& p : n.parents) {
        if (!p->requires_grad) continue;
        for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
      }
      return;
    }
    case OpKind::elementwise_mul: {
      Node& a = *n.parents[0];
      Node& b = *n.parents[1];
      if (a.requires_grad) {
        for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * b.data[i];
      }
      if (b.requires_grad) {
        for (std::size_t i = 0; i < g.size(); ++i) b.grad[i] += g[i] * a.data[i];
      }
      return;
    }
    case OpKind::row_mean: {
      Node& x = *n.parents[0];
      if (!x.requires_grad) return;
      const double inv = 1.0 / static_cast<double>(x.data.rows());
      for (std::size_t i = 0; i < x.data.rows(); ++i) {
        auto dst = x.grad.row(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j] * inv;
      }
      return;
    }
    case OpKind::broadcast_row: {
      Node& x = *n.parents[0];
      if (!x.requires_grad) return;
      for (std::size_t i = 0; i < g.rows(); ++i) {
        auto src = g.row(i);
        for (std::size_t j = 0; j < src.size(); ++j) x.grad[j] += src[j];
      }
      return;
    }
    case OpKind::gather_rows: {
      Node& x = *n.parents[0];
      if (!x.requires_grad) return;
      for (std::size_t i = 0; i < n.indices.size(); ++i) {
        auto src = g.row(i);
        auto dst = x.grad.row(n.indices[i]);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
      }
      return;
    }
    case OpKind::scatter_mean: {
      Node& x = *n.parents[0];
      if (!x.requires_grad) return;
      const Segments& seg = *n.segments;
      for (std::size_t k = 0; k < seg.count(); ++k) {
        auto src = g.row(k);
        const double inv = 1.0 / static_cast<double>(seg.members[k].size());
        for (std::size_t r : seg.members[k]) {
          auto dst = x.grad.row(r);
          for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j] * inv;
        }
      }
      return;
    }
    case OpKind::softmax_cross_entropy: {
      Node& z = *n.parents[0];
      if (!z.requires_grad) return;
      const double scale = g[0] / static_cast<double>(z.data.rows());
      for (std::size_t i = 0; i < z.data.rows(); ++i) {
        auto r = z.data.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double v : r) s += std::exp(v - mx);
        auto dst = z.grad.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
          const double p = std::exp(r[j] - mx) / s;
          dst[j] += scale * (p - (j == n.indices[i] ? 1.0 : 0.0));
        }
      }
      return;
    }
    case OpKind::rowwise_l2_mean: {
      Node& a = *n.parents[0];
      Node& b = *n.parents[1];
      const double scale = g[0] / static_cast<double>(a.data.rows());
      for (std::size_t i = 0; i < a.data.rows(); ++i) {
        auto ra = a.data.row(i);
        auto rb = b.data.row(i);
        double sq = 0.0;
        for (std::size_t j = 0; j < ra.size(); ++j) {
          const double d = ra[j] - rb[j];
          sq += d * d;
        }
        double factor;
        if (n.squared) {
          factor = 2.0 * scale;
        } else {
          if (sq == 0.0) continue;
          factor = scale / std::sqrt(sq);
        }
        for (std::size_t j = 0; j < ra.size(); ++j) {
          const double d = (ra[j] - rb[j]) * factor;
          if (a.requires_grad) a.grad(i, j) += d;
          if (b.requires_grad) b.grad(i, j) -= d;
        }
      }
      return;
    }
  }
}

NodePtr make_node(OpKind op, std::vector<NodePtr> parents) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->requires_grad = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  n->parents = std::move(parents);
  return n;
}

Value finish(NodePtr n) {
  evaluate(*n);
  return ValueAccess::wrap(std::move(n));
}

std::vector<Node*> topo_order(const NodePtr& root) {
  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

std::string shapes(std::span<const Value> parts) {
  std::string s;
  for (const auto& p : parts) {
    if (!s.empty()) s += ", ";
    s += p.data().shape_string();
  }
  return s;
}

}  // namespace

std::string_view op_name(OpKind op) noexcept {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add_bias: return "add_bias";
    case OpKind::relu: return "relu";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::elementwise_add: return "elementwise_add";
    case OpKind::elementwise_mul: return "elementwise_mul";
    case OpKind::row_mean: return "row_mean";
    case OpKind::broadcast_row: return "broadcast_row";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::scatter_mean: return "scatter_mean";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::rowwise_l2_mean: return "rowwise_l2_mean";
  }
  return "unknown";
}

std::span<const OpKind> all_op_kinds() noexcept {
  static constexpr std::array kinds{
      OpKind::leaf,           OpKind::matmul,          OpKind::add_bias,
      OpKind::relu,           OpKind::leaky_relu,      OpKind::sigmoid,
      OpKind::concat_cols,    OpKind::concat_rows,     OpKind::elementwise_add,
      OpKind::elementwise_mul, OpKind::row_mean,       OpKind::broadcast_row,
      OpKind::gather_rows,    OpKind::scatter_mean,    OpKind::softmax_cross_entropy,
      OpKind::rowwise_l2_mean,
  };
  return kinds;
}

Segments Segments::from_ids(std::span<const std::size_t> ids) {
  Segments seg;
  seg.segment_of.assign(ids.begin(), ids.end());
  const std::size_t k = ids.empty() ? 0 : *std::max_element(ids.begin(), ids.end()) + 1;
  seg.members.resize(k);
  for (std::size_t r = 0; r < ids.size(); ++r) seg.members[ids[r]].push_back(r);
  for (std::size_t s = 0; s < k; ++s) {
    if (seg.members[s].empty()) {
      throw ValidationError("Segments::from_ids: segment " + std::to_string(s) + " is empty");
    }
  }
  return seg;
}

// ---------------------------------------------------------------- Value

const Tensor& Value::data() const { return node_of(*this)->data; }

Tensor& Value::mutable_data() {
  const auto& n = node_of(*this);
  if (n->op != OpKind::leaf) throw std::logic_error("mutable_data: only leaves are writable");
  return n->data;
}

const Tensor& Value::grad() const { return node_of(*this)->grad; }
OpKind Value::op() const { return node_of(*this)->op; }
bool Value::requires_grad() const { return node_of(*this)->requires_grad; }

std::vector<Value> Value::inputs() const {
  std::vector<Value> out;
  for (const auto& p : node_of(*this)->parents) out.push_back(ValueAccess::wrap(p));
  return out;
}

double Value::item() const {
  const Tensor& d = data();
  if (d.rows() != 1 || d.cols() != 1) {
    throw ShapeError("item: expected 1x1, got " + d.shape_string());
  }
  return d[0];
}

// ---------------------------------------------------------------- builders

Value constant(Tensor data) {
  auto n = std::make_shared<Node>();
  n->data = std::move(data);
  return ValueAccess::wrap(std::move(n));
}

Value parameter(Tensor data) {
  auto n = std::make_shared<Node>();
  n->data = std::move(data);
  n->requires_grad = true;
  return ValueAccess::wrap(std::move(n));
}

Value matmul(const Value& a, const Value& b) {
  if (a.cols() != b.rows()) {
    shape_fail(OpKind::matmul, a.data().shape_string() + " * " + b.data().shape_string());
  }
  return finish(make_node(OpKind::matmul, {node_of(a), node_of(b)}));
}

Value add_bias(const Value& x, const Value& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    shape_fail(OpKind::add_bias, x.data().shape_string() + " + " + bias.data().shape_string());
  }
  return finish(make_node(OpKind::add_bias, {node_of(x), node_of(bias)}));
}

Value relu(const Value& x) { return finish(make_node(OpKind::relu, {node_of(x)})); }

Value leaky_relu(const Value& x, double slope) {
  auto n = make_node(OpKind::leaky_relu, {node_of(x)});
  n->slope = slope;
  return finish(std::move(n));
}

Value sigmoid(const Value& x) { return finish(make_node(OpKind::sigmoid, {node_of(x)})); }

Value concat_cols(std::span<const Value> parts) {
  if (parts.empty()) shape_fail(OpKind::concat_cols, "no inputs");
  std::vector<NodePtr> ps;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) shape_fail(OpKind::concat_cols, shapes(parts));
    ps.push_back(node_of(p));
  }
  return finish(make_node(OpKind::concat_cols, std::move(ps)));
}

Value concat_rows(std::span<const Value> parts) {
  if (parts.empty()) shape_fail(OpKind::concat_rows, "no inputs");
  std::vector<NodePtr> ps;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) shape_fail(OpKind::concat_rows, shapes(parts));
    ps.push_back(node_of(p));
  }
  return finish(make_node(OpKind::concat_rows, std::move(ps)));
}

Value add(const Value& a, const Value& b) {
  if (!a.data().same_shape(b.data())) {
    shape_fail(OpKind::elementwise_add, a.data().shape_string() + " vs " + b.data().shape_string());
  }
  return finish(make_node(OpKind::elementwise_add, {node_of(a), node_of(b)}));
}

Value mul(const Value& a, const Value& b) {
  if (!a.data().same_shape(b.data())) {
    shape_fail(OpKind::elementwise_mul, a.data().shape_string() + " vs " + b.data().shape_string());
  }
  return finish(make_node(OpKind::elementwise_mul, {node_of(a), node_of(b)}));
}

Value row_mean(const Value& x) {
  if (x.rows() == 0) shape_fail(OpKind::row_mean, "zero rows");
  return finish(make_node(OpKind::row_mean, {node_of(x)}));
}

Value broadcast_row(const Value& x, std::size_t n) {
  if (x.rows() != 1) shape_fail(OpKind::broadcast_row, "expected 1 row, got " + x.data().shape_string());
  auto node = make_node(OpKind::broadcast_row, {node_of(x)});
  node->count = n;
  return finish(std::move(node));
}

Value gather_rows(const Value& x, std::vector<std::size_t> rows) {
  for (std::size_t r : rows) {
    if (r >= x.rows()) {
      throw ValidationError("gather_rows: index " + std::to_string(r) + " out of range for " +
                            x.data().shape_string());
    }
  }
  auto n = make_node(OpKind::gather_rows, {node_of(x)});
  n->indices = std::move(rows);
  return finish(std::move(n));
}

Value scatter_mean(const Value& x, std::shared_ptr<const Segments> segments) {
  if (!segments || segments->segment_of.size() != x.rows()) {
    shape_fail(OpKind::scatter_mean, "segment table does not cover " + x.data().shape_string());
  }
  for (const auto& m : segments->members) {
    if (m.empty()) throw ValidationError("scatter_mean: empty segment");
    for (std::size_t r : m) {
      if (r >= x.rows()) throw ValidationError("scatter_mean: member row out of range");
    }
  }
  auto n = make_node(OpKind::scatter_mean, {node_of(x)});
  n->segments = std::move(segments);
  return finish(std::move(n));
}

Value softmax_cross_entropy(const Value& logits, std::vector<std::size_t> labels) {
  if (labels.size() != logits.rows() || labels.empty()) {
    shape_fail(OpKind::softmax_cross_entropy,
               std::to_string(labels.size()) + " labels for logits " + logits.data().shape_string());
  }
  for (std::size_t y : labels) {
    if (y >= logits.cols()) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(y) +
                            " out of range for " + std::to_string(logits.cols()) + " classes");
    }
  }
  auto n = make_node(OpKind::softmax_cross_entropy, {node_of(logits)});
  n->indices = std::move(labels);
  return finish(std::move(n));
}

Value rowwise_l2_mean(const Value& a, const Value& b, bool squared) {
  if (!a.data().same_shape(b.data()) || a.rows() == 0) {
    shape_fail(OpKind::rowwise_l2_mean, a.data().shape_string() + " vs " + b.data().shape_string());
  }
  auto n = make_node(OpKind::rowwise_l2_mean, {node_of(a), node_of(b)});
  n->squared = squared;
  return finish(std::move(n));
}

// ---------------------------------------------------------------- passes

void forward(const Value& root) {
  for (Node* n : topo_order(node_of(root))) evaluate(*n);
}

void backward(const Value& loss) {
  const NodePtr& root = node_of(loss);
  if (root->data.rows() != 1 || root->data.cols() != 1) {
    throw ValidationError("backward: loss must be 1x1, got " + root->data.shape_string());
  }
  if (root->backward_done) {
    throw std::logic_error("backward: called twice on the same graph without zero_grad");
  }
  const auto order = topo_order(root);
  for (Node* n : order) {
    if (n->requires_grad) {
      n->grad = Tensor(n->data.rows(), n->data.cols());
    } else {
      n->grad = Tensor();
    }
  }
  root->backward_done = true;
  if (!root->requires_grad) return;
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->requires_grad) propagate(**it);
  }
}

void zero_grad(const Value& root) {
  const NodePtr& r = node_of(root);
  for (Node* n : topo_order(r)) {
    if (n->requires_grad) n->grad.fill(0.0);
  }
  r->backward_done = false;
}

void clear_grad(const Value& v) { node_of(v)->grad = Tensor(); }

std::size_t graph_size(const Value& root) { return topo_order(node_of(root)).size(); }

}  // namespace cmdf::ad
