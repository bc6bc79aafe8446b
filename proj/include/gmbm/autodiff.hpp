// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense Tensors.
//
// A Node is a cheap shared handle to a vertex of a computation graph. Leaves
// are either constants (no gradient) or parameters (accumulate gradients).
// Every op returns a new Node whose parents are its inputs; backward() from a
// scalar root sweeps the graph in reverse topological order. Gradients of
// parameters accumulate across backward() calls until zero_grad().
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "gmbm/tensor.hpp"

namespace gmbm::ad {

struct NodeImpl;

class Node {
 public:
  Node() = default;

  /// Leaf that never receives gradient.
  static Node constant(Tensor value);
  /// Leaf that accumulates gradient on backward().
  static Node parameter(Tensor value);

  bool valid() const noexcept { return impl_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Accumulated gradient; zeros for nodes that do not require one.
  const Tensor& grad() const;
  bool requires_grad() const;
  bool is_leaf() const;
  std::string_view op_name() const;

  /// In-place update of a parameter value (optimizer use only).
  Tensor& mutable_value();
  void zero_grad();

  const std::shared_ptr<NodeImpl>& impl() const noexcept { return impl_; }

  friend bool operator==(const Node& a, const Node& b) noexcept { return a.impl_ == b.impl_; }

 private:
  explicit Node(std::shared_ptr<NodeImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<NodeImpl> impl_;

  friend Node make_op(std::string_view, Tensor, std::vector<Node>,
                      std::function<void(NodeImpl&)>);
};

/// Internal graph vertex. Exposed so ops can be written outside autodiff.cpp.
struct NodeImpl {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool leaf = true;
  std::string_view op = "leaf";
  std::vector<Node> parents;
  /// Adds this node's grad, chained through the op, into each parent's grad.
  std::function<void(NodeImpl&)> backward;
};

/// Creates an op node. The backward callback is skipped if no parent requires grad.
Node make_op(std::string_view op, Tensor value, std::vector<Node> parents,
             std::function<void(NodeImpl&)> backward);

// --- primitive ops ---------------------------------------------------------

Node matmul(const Node& a, const Node& b);         // [m x n] . [n x p]
Node transpose(const Node& a);                     // 2-D only
Node add(const Node& a, const Node& b);            // same shape
Node sub(const Node& a, const Node& b);            // same shape
Node mul(const Node& a, const Node& b);            // elementwise, same shape
Node div(const Node& a, const Node& b);            // elementwise, same shape
Node scale(const Node& a, double factor);
Node square(const Node& a);
Node add_row_vector(const Node& a, const Node& v);  // [B x n] + [n]
Node relu(const Node& a);
Node sum(const Node& a);                            // -> [1]
Node mean(const Node& a);                           // -> [1]
Node reshape(const Node& a, Shape shape);
Node detach(const Node& a);

// Row-wise helpers on [B x n] matrices; vectors of per-row values have shape [B].
Node row_dot(const Node& a, const Node& b);        // -> [B]
Node row_scale(const Node& a, const Node& s);      // row i of a times s[i]
Node column(const Node& a, std::size_t j);         // [B x k] -> [B]
Node stack_columns(std::span<const Node> columns);  // k x [B] -> [B x k]
Node softmax_rows(const Node& a);
/// Per-row cosine similarity. Throws DegenerateInputError if any row norm is below 1e-12.
Node row_cosine(const Node& a, const Node& b);

/// cos(u, v) for two vectors of equal length; returns shape [1].
Node cosine_similarity(const Node& u, const Node& v);
Node dot(const Node& a, const Node& b);  // full inner product -> [1]

/// Mean over rows of -log softmax(logits)[label]. Throws IndexError for labels >= N.
Node softmax_cross_entropy_mean(const Node& logits, std::span<const std::size_t> labels);

/// Constant [B x N] one-hot matrix.
Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

/// Reverse sweep from a scalar root. Throws ContractError for non-scalar roots.
void backward(const Node& root);

void zero_grad(std::span<const Node> params);

}  // namespace gmbm::ad
