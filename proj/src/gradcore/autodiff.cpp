// SPDX-License-Identifier: Apache-2.0
#include "gmbm/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>

#include "gmbm/errors.hpp"

namespace gmbm::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

constexpr double kMinNorm = 1e-12;

MatrixMap as_matrix(Tensor& t) {
  return MatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

ConstMatrixMap as_matrix(const Tensor& t) {
  return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

NodeImpl& impl_of(const Node& n) {
  if (!n.valid()) throw ContractError("use of an empty Node handle");
  return *n.impl();
}

void require_same_shape(const Node& a, const Node& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

void require_matrix(const Node& a, const char* op) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(a.shape()));
  }
}

// Accumulates `scale * src` into the parent's gradient if it wants one.
void accumulate(const Node& parent, std::span<const double> src, double factor = 1.0) {
  auto& p = *parent.impl();
  if (!p.requires_grad) return;
  auto dst = p.grad.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

template <typename F>
Tensor map_values(const Tensor& in, F&& f) {
  Tensor out(in.shape());
  auto src = in.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

// --- Node -------------------------------------------------------------------

Node Node::constant(Tensor value) {
  auto impl = std::make_shared<NodeImpl>();
  impl->grad = Tensor(value.shape());
  impl->value = std::move(value);
  impl->op = "constant";
  return Node(std::move(impl));
}

Node Node::parameter(Tensor value) {
  auto impl = std::make_shared<NodeImpl>();
  impl->grad = Tensor(value.shape());
  impl->value = std::move(value);
  impl->requires_grad = true;
  impl->op = "parameter";
  return Node(std::move(impl));
}

const Tensor& Node::value() const { return impl_of(*this).value; }
const Tensor& Node::grad() const { return impl_of(*this).grad; }
bool Node::requires_grad() const { return impl_of(*this).requires_grad; }
bool Node::is_leaf() const { return impl_of(*this).leaf; }
std::string_view Node::op_name() const { return impl_of(*this).op; }

Tensor& Node::mutable_value() {
  auto& impl = impl_of(*this);
  if (!impl.leaf) throw ContractError("only leaf values may be modified in place");
  return impl.value;
}

void Node::zero_grad() { impl_of(*this).grad.fill(0.0); }

Node make_op(std::string_view op, Tensor value, std::vector<Node> parents,
             std::function<void(NodeImpl&)> backward_fn) {
  auto impl = std::make_shared<NodeImpl>();
  impl->grad = Tensor(value.shape());
  impl->value = std::move(value);
  impl->leaf = false;
  impl->op = op;
  impl->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const Node& p) { return p.requires_grad(); });
  impl->parents = std::move(parents);
  if (impl->requires_grad) impl->backward = std::move(backward_fn);
  return Node(std::move(impl));
}

// --- ops --------------------------------------------------------------------

Node matmul(const Node& a, const Node& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.value().cols() != b.value().rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  Tensor out({a.value().rows(), b.value().cols()});
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  return make_op("matmul", std::move(out), {a, b}, [](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    auto& pb = *self.parents[1].impl();
    auto g = as_matrix(std::as_const(self.grad));
    if (pa.requires_grad) as_matrix(pa.grad).noalias() += g * as_matrix(std::as_const(pb.value)).transpose();
    if (pb.requires_grad) as_matrix(pb.grad).noalias() += as_matrix(std::as_const(pa.value)).transpose() * g;
  });
}

Node transpose(const Node& a) {
  require_matrix(a, "transpose");
  Tensor out({a.value().cols(), a.value().rows()});
  as_matrix(out) = as_matrix(a.value()).transpose();
  return make_op("transpose", std::move(out), {a}, [](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    if (pa.requires_grad) as_matrix(pa.grad) += as_matrix(std::as_const(self.grad)).transpose();
  });
}

Node add(const Node& a, const Node& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op("add", std::move(out), {a, b}, [](NodeImpl& self) {
    accumulate(self.parents[0], self.grad.data());
    accumulate(self.parents[1], self.grad.data());
  });
}

Node sub(const Node& a, const Node& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op("sub", std::move(out), {a, b}, [](NodeImpl& self) {
    accumulate(self.parents[0], self.grad.data());
    accumulate(self.parents[1], self.grad.data(), -1.0);
  });
}

Node mul(const Node& a, const Node& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op("mul", std::move(out), {a, b}, [](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    auto& pb = *self.parents[1].impl();
    const auto g = self.grad.data();
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < g.size(); ++i) pa.grad[i] += g[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < g.size(); ++i) pb.grad[i] += g[i] * pa.value[i];
    }
  });
}

Node div(const Node& a, const Node& b) {
  require_same_shape(a, b, "div");
  Tensor out = a.value();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (bv[i] == 0.0) throw DegenerateInputError("div: division by zero");
    out[i] /= bv[i];
  }
  return make_op("div", std::move(out), {a, b}, [](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    auto& pb = *self.parents[1].impl();
    const auto g = self.grad.data();
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < g.size(); ++i) pa.grad[i] += g[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < g.size(); ++i) pb.grad[i] -= g[i] * self.value[i] / pb.value[i];
    }
  });
}

Node scale(const Node& a, double factor) {
  Tensor out = map_values(a.value(), [factor](double v) { return factor * v; });
  return make_op("scale", std::move(out), {a},
                 [factor](NodeImpl& self) { accumulate(self.parents[0], self.grad.data(), factor); });
}

Node square(const Node& a) {
  Tensor out = map_values(a.value(), [](double v) { return v * v; });
  return make_op("square", std::move(out), {a}, [](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += 2.0 * pa.value[i] * self.grad[i];
  });
}

Node add_row_vector(const Node& a, const Node& v) {
  require_matrix(a, "add_row_vector");
  if (v.value().rank() != 1 || v.value().size() != a.value().cols()) {
    throw DimensionError("add_row_vector: cannot add " + shape_to_string(v.shape()) + " to rows of " +
                         shape_to_string(a.shape()));
  }
  Tensor out = a.value();
  const auto rows = out.rows();
  const auto cols = out.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += v.value()[c];
  }
  return make_op("add_row_vector", std::move(out), {a, v}, [](NodeImpl& self) {
    accumulate(self.parents[0], self.grad.data());
    auto& pv = *self.parents[1].impl();
    if (!pv.requires_grad) return;
    const auto rows = self.grad.rows();
    const auto cols = self.grad.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) pv.grad[c] += self.grad.at(r, c);
    }
  });
}

Node relu(const Node& a) {
  Tensor out = map_values(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return make_op("relu", std::move(out), {a}, [](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    for (std::size_t i = 0; i < pa.grad.size(); ++i) {
      if (pa.value[i] > 0.0) pa.grad[i] += self.grad[i];
    }
  });
}

Node sum(const Node& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_op("sum", Tensor::scalar(total), {a}, [](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    const double g = self.grad[0];
    for (auto& x : pa.grad.data()) x += g;
  });
}

Node mean(const Node& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Node reshape(const Node& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op("reshape", std::move(out), {a},
                 [](NodeImpl& self) { accumulate(self.parents[0], self.grad.data()); });
}

Node detach(const Node& a) { return Node::constant(a.value()); }

Node row_dot(const Node& a, const Node& b) {
  require_matrix(a, "row_dot");
  require_same_shape(a, b, "row_dot");
  const auto rows = a.value().rows();
  const auto cols = a.value().cols();
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += a.value().at(r, c) * b.value().at(r, c);
    out[r] = acc;
  }
  return make_op("row_dot", std::move(out), {a, b}, [](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    auto& pb = *self.parents[1].impl();
    const auto rows = pa.value.rows();
    const auto cols = pa.value.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = self.grad[r];
      for (std::size_t c = 0; c < cols; ++c) {
        if (pa.requires_grad) pa.grad.at(r, c) += g * pb.value.at(r, c);
        if (pb.requires_grad) pb.grad.at(r, c) += g * pa.value.at(r, c);
      }
    }
  });
}

Node row_scale(const Node& a, const Node& s) {
  require_matrix(a, "row_scale");
  if (s.value().rank() != 1 || s.value().size() != a.value().rows()) {
    throw DimensionError("row_scale: scale " + shape_to_string(s.shape()) + " does not match rows of " +
                         shape_to_string(a.shape()));
  }
  Tensor out = a.value();
  const auto rows = out.rows();
  const auto cols = out.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) *= s.value()[r];
  }
  return make_op("row_scale", std::move(out), {a, s}, [](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    auto& ps = *self.parents[1].impl();
    const auto rows = pa.value.rows();
    const auto cols = pa.value.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double g = self.grad.at(r, c);
        if (pa.requires_grad) pa.grad.at(r, c) += g * ps.value[r];
        acc += g * pa.value.at(r, c);
      }
      if (ps.requires_grad) ps.grad[r] += acc;
    }
  });
}

Node column(const Node& a, std::size_t j) {
  require_matrix(a, "column");
  if (j >= a.value().cols()) {
    throw IndexError("column " + std::to_string(j) + " out of range for " + shape_to_string(a.shape()));
  }
  const auto rows = a.value().rows();
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = a.value().at(r, j);
  return make_op("column", std::move(out), {a}, [j](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    for (std::size_t r = 0; r < pa.value.rows(); ++r) pa.grad.at(r, j) += self.grad[r];
  });
}

Node stack_columns(std::span<const Node> columns) {
  if (columns.empty()) throw DimensionError("stack_columns: no columns");
  const auto rows = columns.front().value().size();
  for (const auto& c : columns) {
    if (c.value().rank() != 1 || c.value().size() != rows) {
      throw DimensionError("stack_columns: column shape " + shape_to_string(c.shape()) + " differs from [" +
                           std::to_string(rows) + "]");
    }
  }
  const auto k = columns.size();
  Tensor out({rows, k});
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t r = 0; r < rows; ++r) out.at(r, j) = columns[j].value()[r];
  }
  return make_op("stack_columns", std::move(out), {columns.begin(), columns.end()}, [](NodeImpl& self) {
    const auto rows = self.value.rows();
    for (std::size_t j = 0; j < self.parents.size(); ++j) {
      auto& pj = *self.parents[j].impl();
      if (!pj.requires_grad) continue;
      for (std::size_t r = 0; r < rows; ++r) pj.grad[r] += self.grad.at(r, j);
    }
  });
}

Node softmax_rows(const Node& a) {
  require_matrix(a, "softmax_rows");
  const auto rows = a.value().rows();
  const auto cols = a.value().cols();
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = a.value().at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, a.value().at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) = std::exp(a.value().at(r, c) - mx);
      z += out.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= z;
  }
  return make_op("softmax_rows", std::move(out), {a}, [](NodeImpl& self) {
    auto& pa = *self.parents[0].impl();
    const auto rows = self.value.rows();
    const auto cols = self.value.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < cols; ++c) inner += self.grad.at(r, c) * self.value.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) {
        pa.grad.at(r, c) += self.value.at(r, c) * (self.grad.at(r, c) - inner);
      }
    }
  });
}

Node row_cosine(const Node& a, const Node& b) {
  require_matrix(a, "row_cosine");
  require_same_shape(a, b, "row_cosine");
  const auto rows = a.value().rows();
  const auto cols = a.value().cols();
  Tensor out({rows});
  std::vector<double> norm_a(rows);
  std::vector<double> norm_b(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double aa = 0.0, bb = 0.0, ab = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = a.value().at(r, c);
      const double y = b.value().at(r, c);
      aa += x * x;
      bb += y * y;
      ab += x * y;
    }
    norm_a[r] = std::sqrt(aa);
    norm_b[r] = std::sqrt(bb);
    if (norm_a[r] < kMinNorm || norm_b[r] < kMinNorm) {
      throw DegenerateInputError("cosine similarity of a zero-norm vector (row " + std::to_string(r) + ")");
    }
    out[r] = ab / (norm_a[r] * norm_b[r]);
  }
  return make_op("row_cosine", std::move(out), {a, b},
                 [norm_a = std::move(norm_a), norm_b = std::move(norm_b)](NodeImpl& self) {
                   auto& pa = *self.parents[0].impl();
                   auto& pb = *self.parents[1].impl();
                   const auto rows = pa.value.rows();
                   const auto cols = pa.value.cols();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double g = self.grad[r];
                     const double cosv = self.value[r];
                     const double inv_ab = 1.0 / (norm_a[r] * norm_b[r]);
                     const double inv_aa = 1.0 / (norm_a[r] * norm_a[r]);
                     const double inv_bb = 1.0 / (norm_b[r] * norm_b[r]);
                     for (std::size_t c = 0; c < cols; ++c) {
                       const double x = pa.value.at(r, c);
                       const double y = pb.value.at(r, c);
                       if (pa.requires_grad) pa.grad.at(r, c) += g * (y * inv_ab - cosv * x * inv_aa);
                       if (pb.requires_grad) pb.grad.at(r, c) += g * (x * inv_ab - cosv * y * inv_bb);
                     }
                   }
                 });
}

Node cosine_similarity(const Node& u, const Node& v) {
  if (u.value().rank() != 1 || u.shape() != v.shape()) {
    throw DimensionError("cosine_similarity: expected two equal-length vectors, got " +
                         shape_to_string(u.shape()) + " and " + shape_to_string(v.shape()));
  }
  const auto d = u.value().size();
  return reshape(row_cosine(reshape(u, {1, d}), reshape(v, {1, d})), {1});
}

Node dot(const Node& a, const Node& b) { return sum(mul(a, b)); }

Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  Tensor out({labels.size(), num_classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= num_classes) {
      throw IndexError("label " + std::to_string(labels[r]) + " out of range for " +
                       std::to_string(num_classes) + " classes");
    }
    out.at(r, labels[r]) = 1.0;
  }
  return out;
}

Node softmax_cross_entropy_mean(const Node& logits, std::span<const std::size_t> labels) {
  require_matrix(logits, "softmax_cross_entropy_mean");
  const auto rows = logits.value().rows();
  const auto cols = logits.value().cols();
  if (labels.size() != rows) {
    throw DimensionError("softmax_cross_entropy_mean: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  Tensor probs({rows, cols});
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= cols) {
      throw IndexError("label " + std::to_string(labels[r]) + " out of range for " + std::to_string(cols) +
                       " classes");
    }
    double mx = logits.value().at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, logits.value().at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      probs.at(r, c) = std::exp(logits.value().at(r, c) - mx);
      z += probs.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) probs.at(r, c) /= z;
    total += mx + std::log(z) - logits.value().at(r, labels[r]);
  }
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  return make_op("softmax_cross_entropy_mean", Tensor::scalar(total / static_cast<double>(rows)), {logits},
                 [probs = std::move(probs), targets = std::move(targets)](NodeImpl& self) {
                   auto& pl = *self.parents[0].impl();
                   const auto rows = probs.rows();
                   const auto cols = probs.cols();
                   const double g = self.grad[0] / static_cast<double>(rows);
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t c = 0; c < cols; ++c) {
                       const double target = c == targets[r] ? 1.0 : 0.0;
                       pl.grad.at(r, c) += g * (probs.at(r, c) - target);
                     }
                   }
                 });
}

// --- backward ---------------------------------------------------------------

void backward(const Node& root) {
  auto& root_impl = impl_of(root);
  if (root_impl.value.size() != 1) {
    throw ContractError("backward() needs a scalar root, got " + shape_to_string(root_impl.value.shape()));
  }
  if (!root_impl.requires_grad) return;

  // Iterative post-order DFS restricted to nodes that carry gradient.
  std::vector<NodeImpl*> order;
  std::unordered_set<NodeImpl*> visited;
  std::vector<std::pair<NodeImpl*, std::size_t>> stack{{&root_impl, 0}};
  visited.insert(&root_impl);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeImpl* parent = node->parents[next++].impl().get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-sweep scratch; only leaves accumulate across calls.
  for (auto* node : order) {
    if (!node->leaf) node->grad.fill(0.0);
  }
  root_impl.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

void zero_grad(std::span<const Node> params) {
  for (auto node : params) node.zero_grad();
}

}  // namespace gmbm::ad
