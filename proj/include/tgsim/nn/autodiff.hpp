#pragma once

// Taped reverse-mode differentiation over Tensor values. Every op evaluates
// eagerly; the graph is only retained when some input requires a gradient.

#include "tgsim/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace tgsim::nn {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;

  Tensor& grad_ref() {
    if (!grad.same_shape(value)) grad = Tensor(value.rows(), value.cols());
    return grad;
  }
  bool has_grad() const { return grad.same_shape(value); }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

inline Var parameter(Tensor value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

namespace detail {

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// While alive, new ops record no parents or backward closures.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

inline Var make_op(const char* name, Tensor value, std::vector<Var> parents,
                   std::function<void(const Node&)> backward) {
  if (!value.all_finite()) {
    throw std::domain_error(std::string("non-finite value produced by ") + name);
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = grad_enabled() && std::any_of(parents.begin(), parents.end(),
                                                   [](const Var& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return n;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                                b.shape_string());
  }
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

/// Runs reverse accumulation from a scalar (1x1) output.
inline void backward(const Var& root) {
  if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_ref()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
  // Interior gradients are transient; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward) n->grad = Tensor();
  }
}

// ---------------------------------------------------------------------------
// Arithmetic

/// y = x * W^T + b^T, with x (batch x in), W (out x in), b (out x 1) or null.
inline Var linear(const Var& x, const Var& w, const Var& b) {
  if (x->value.cols() != w->value.cols()) {
    throw std::invalid_argument("linear: input width " + std::to_string(x->value.cols()) +
                                " does not match weight " + w->value.shape_string());
  }
  if (b && (b->value.rows() != w->value.rows() || b->value.cols() != 1)) {
    throw std::invalid_argument("linear: bias shape " + b->value.shape_string());
  }
  Tensor y(x->value.rows(), w->value.rows());
  y.map().noalias() = x->value.map() * w->value.map().transpose();
  if (b) y.map().rowwise() += b->value.map().col(0).transpose();
  Node* px = x.get();
  Node* pw = w.get();
  Node* pb = b.get();
  std::vector<Var> parents{x, w};
  if (b) parents.push_back(b);
  return detail::make_op("linear", std::move(y), std::move(parents), [px, pw, pb](const Node& self) {
    const auto g = self.grad.map();
    if (px->requires_grad) px->grad_ref().map().noalias() += g * pw->value.map();
    if (pw->requires_grad) pw->grad_ref().map().noalias() += g.transpose() * px->value.map();
    if (pb && pb->requires_grad) pb->grad_ref().map().col(0) += g.colwise().sum().transpose();
  });
}

inline Var matmul(const Var& a, const Var& b) {
  if (a->value.cols() != b->value.rows()) {
    throw std::invalid_argument("matmul: " + a->value.shape_string() + " * " +
                                b->value.shape_string());
  }
  Tensor y(a->value.rows(), b->value.cols());
  y.map().noalias() = a->value.map() * b->value.map();
  Node* pa = a.get();
  Node* pb = b.get();
  return detail::make_op("matmul", std::move(y), {a, b}, [pa, pb](const Node& self) {
    const auto g = self.grad.map();
    if (pa->requires_grad) pa->grad_ref().map().noalias() += g * pb->value.map().transpose();
    if (pb->requires_grad) pb->grad_ref().map().noalias() += pa->value.map().transpose() * g;
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape("add", a->value, b->value);
  Tensor y = a->value;
  y.map() += b->value.map();
  Node* pa = a.get();
  Node* pb = b.get();
  return detail::make_op("add", std::move(y), {a, b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->grad_ref().map() += self.grad.map();
    if (pb->requires_grad) pb->grad_ref().map() += self.grad.map();
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a->value, b->value);
  Tensor y = a->value;
  y.map() -= b->value.map();
  Node* pa = a.get();
  Node* pb = b.get();
  return detail::make_op("sub", std::move(y), {a, b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->grad_ref().map() += self.grad.map();
    if (pb->requires_grad) pb->grad_ref().map() -= self.grad.map();
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("mul", a->value, b->value);
  Tensor y = a->value;
  y.map().array() *= b->value.map().array();
  Node* pa = a.get();
  Node* pb = b.get();
  return detail::make_op("mul", std::move(y), {a, b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) {
      pa->grad_ref().map().array() += self.grad.map().array() * pb->value.map().array();
    }
    if (pb->requires_grad) {
      pb->grad_ref().map().array() += self.grad.map().array() * pa->value.map().array();
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor y = a->value;
  y.map() *= s;
  Node* pa = a.get();
  return detail::make_op("scale", std::move(y), {a}, [pa, s](const Node& self) {
    pa->grad_ref().map() += s * self.grad.map();
  });
}

/// a + column broadcast: a (n x k), c (n x 1).
inline Var add_col_broadcast(const Var& a, const Var& c) {
  if (c->value.rows() != a->value.rows() || c->value.cols() != 1) {
    throw std::invalid_argument("add_col_broadcast: " + a->value.shape_string() + " + " +
                                c->value.shape_string());
  }
  Tensor y = a->value;
  y.map().colwise() += c->value.map().col(0);
  Node* pa = a.get();
  Node* pc = c.get();
  return detail::make_op("add_col_broadcast", std::move(y), {a, c}, [pa, pc](const Node& self) {
    if (pa->requires_grad) pa->grad_ref().map() += self.grad.map();
    if (pc->requires_grad) pc->grad_ref().map().col(0) += self.grad.map().rowwise().sum();
  });
}

/// Per-row mean, (n x k) -> (n x 1).
inline Var row_mean(const Var& a) {
  const auto k = static_cast<double>(a->value.cols());
  Tensor y(a->value.rows(), 1);
  y.map().col(0) = a->value.map().rowwise().sum() / k;
  Node* pa = a.get();
  return detail::make_op("row_mean", std::move(y), {a}, [pa, k](const Node& self) {
    pa->grad_ref().map().colwise() += self.grad.map().col(0) / k;
  });
}

/// Per-row sum, (n x k) -> (n x 1).
inline Var row_sum(const Var& a) {
  Tensor y(a->value.rows(), 1);
  y.map().col(0) = a->value.map().rowwise().sum();
  Node* pa = a.get();
  return detail::make_op("row_sum", std::move(y), {a}, [pa](const Node& self) {
    pa->grad_ref().map().colwise() += self.grad.map().col(0);
  });
}

inline Var sum(const Var& a) {
  Tensor y(1, 1, a->value.map().sum());
  Node* pa = a.get();
  return detail::make_op("sum", std::move(y), {a}, [pa](const Node& self) {
    pa->grad_ref().map().array() += self.grad[0];
  });
}

inline Var mean(const Var& a) {
  if (a->value.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a->value.size()));
}

/// Elementwise product with a constant tensor (weights, masks).
inline Var mul_const(const Var& a, const Tensor& c) {
  detail::require_same_shape("mul_const", a->value, c);
  Tensor y = a->value;
  y.map().array() *= c.map().array();
  Node* pa = a.get();
  return detail::make_op("mul_const", std::move(y), {a}, [pa, c](const Node& self) {
    pa->grad_ref().map().array() += self.grad.map().array() * c.map().array();
  });
}

inline Var square(const Var& a) { return mul(a, a); }

// ---------------------------------------------------------------------------
// Activations

inline Var relu(const Var& a) {
  Tensor y = a->value;
  for (double& v : y.data()) v = v > 0 ? v : 0.0;
  Node* pa = a.get();
  return detail::make_op("relu", std::move(y), {a}, [pa](const Node& self) {
    auto& g = pa->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (pa->value[i] > 0) g[i] += self.grad[i];
    }
  });
}

inline Var sigmoid(const Var& a) {
  Tensor y = a->value;
  for (double& v : y.data()) v = detail::sigmoid(v);
  Node* pa = a.get();
  return detail::make_op("sigmoid", std::move(y), {a}, [pa](const Node& self) {
    auto& g = pa->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

inline Var tanh(const Var& a) {
  Tensor y = a->value;
  for (double& v : y.data()) v = std::tanh(v);
  Node* pa = a.get();
  return detail::make_op("tanh", std::move(y), {a}, [pa](const Node& self) {
    auto& g = pa->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = self.value[i];
      g[i] += self.grad[i] * (1.0 - t * t);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts.front()->value.rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p->value.cols();
  }
  Tensor y(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    y.map().middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(p->value.cols())) =
        p->value.map();
    offset += p->value.cols();
  }
  std::vector<Node*> raw;
  for (const auto& p : parts) raw.push_back(p.get());
  return detail::make_op("concat_cols", std::move(y), parts, [raw](const Node& self) {
    std::size_t off = 0;
    for (Node* p : raw) {
      const auto c = static_cast<Eigen::Index>(p->value.cols());
      if (p->requires_grad) {
        p->grad_ref().map() += self.grad.map().middleCols(static_cast<Eigen::Index>(off), c);
      }
      off += p->value.cols();
    }
  });
}

/// Columns [begin, end).
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a->value.cols()) throw std::invalid_argument("slice_cols: bad range");
  Tensor y(a->value.rows(), end - begin);
  y.map() = a->value.map().middleCols(static_cast<Eigen::Index>(begin),
                                      static_cast<Eigen::Index>(end - begin));
  Node* pa = a.get();
  return detail::make_op("slice_cols", std::move(y), {a}, [pa, begin](const Node& self) {
    pa->grad_ref().map().middleCols(static_cast<Eigen::Index>(begin),
                                    static_cast<Eigen::Index>(self.value.cols())) += self.grad.map();
  });
}

inline Var gather_rows(const Var& a, const std::vector<std::size_t>& index) {
  const std::size_t cols = a->value.cols();
  Tensor y(index.size(), cols);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= a->value.rows()) throw std::out_of_range("gather_rows: index out of range");
    y.map().row(static_cast<Eigen::Index>(r)) = a->value.map().row(static_cast<Eigen::Index>(index[r]));
  }
  Node* pa = a.get();
  return detail::make_op("gather_rows", std::move(y), {a}, [pa, index](const Node& self) {
    auto g = pa->grad_ref().map();
    for (std::size_t r = 0; r < index.size(); ++r) {
      g.row(static_cast<Eigen::Index>(index[r])) += self.grad.map().row(static_cast<Eigen::Index>(r));
    }
  });
}

/// One entry per row: y[r] = a[r, index[r]], shape (n x 1).
inline Var pick_cols(const Var& a, const std::vector<std::size_t>& index) {
  if (index.size() != a->value.rows()) throw std::invalid_argument("pick_cols: index length");
  Tensor y(index.size(), 1);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= a->value.cols()) throw std::out_of_range("pick_cols: index out of range");
    y[r] = a->value(r, index[r]);
  }
  Node* pa = a.get();
  return detail::make_op("pick_cols", std::move(y), {a}, [pa, index](const Node& self) {
    auto& g = pa->grad_ref();
    for (std::size_t r = 0; r < index.size(); ++r) g(r, index[r]) += self.grad[r];
  });
}

/// Elementwise max of the rows of `a` sharing a segment id. Segments with no
/// rows take the single-row `fallback`. Output is (segment_count x cols).
inline Var segment_max(const Var& a, const std::vector<std::size_t>& segment,
                       std::size_t segment_count, const Var& fallback) {
  const std::size_t cols = a->value.cols();
  if (segment.size() != a->value.rows()) throw std::invalid_argument("segment_max: segment ids");
  if (fallback->value.rows() != 1 || fallback->value.cols() != cols) {
    throw std::invalid_argument("segment_max: fallback must be 1x" + std::to_string(cols));
  }
  constexpr std::size_t kFallback = std::numeric_limits<std::size_t>::max();
  Tensor y(segment_count, cols, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> argmax(segment_count * cols, kFallback);
  for (std::size_t r = 0; r < segment.size(); ++r) {
    const std::size_t s = segment[r];
    if (s >= segment_count) throw std::out_of_range("segment_max: segment id out of range");
    for (std::size_t c = 0; c < cols; ++c) {
      if (a->value(r, c) > y(s, c)) {
        y(s, c) = a->value(r, c);
        argmax[s * cols + c] = r;
      }
    }
  }
  for (std::size_t s = 0; s < segment_count; ++s) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (argmax[s * cols + c] == kFallback) y(s, c) = fallback->value(0, c);
    }
  }
  Node* pa = a.get();
  Node* pf = fallback.get();
  return detail::make_op("segment_max", std::move(y), {a, fallback},
                         [pa, pf, argmax = std::move(argmax), cols](const Node& self) {
                           for (std::size_t i = 0; i < argmax.size(); ++i) {
                             const std::size_t c = i % cols;
                             if (argmax[i] == kFallback) {
                               if (pf->requires_grad) pf->grad_ref()(0, c) += self.grad[i];
                             } else if (pa->requires_grad) {
                               pa->grad_ref()(argmax[i], c) += self.grad[i];
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// Losses

/// Elementwise Huber penalty with threshold delta.
inline Var huber(const Var& a, double delta = 1.0) {
  Tensor y = a->value;
  for (double& v : y.data()) {
    const double m = std::abs(v);
    v = m <= delta ? 0.5 * v * v : delta * (m - 0.5 * delta);
  }
  Node* pa = a.get();
  return detail::make_op("huber", std::move(y), {a}, [pa, delta](const Node& self) {
    auto& g = pa->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = pa->value[i];
      g[i] += self.grad[i] * std::clamp(v, -delta, delta);
    }
  });
}

/// Mean binary cross-entropy of sigmoid(logits) against a constant label.
inline Var bce_with_logits(const Var& logits, double label) {
  const auto n = static_cast<double>(logits->value.size());
  if (n == 0) throw std::invalid_argument("bce_with_logits: empty input");
  double total = 0.0;
  for (double z : logits->value.data()) {
    total += label * detail::softplus(-z) + (1.0 - label) * detail::softplus(z);
  }
  Node* pl = logits.get();
  return detail::make_op("bce_with_logits", Tensor(1, 1, total / n), {logits},
                         [pl, label, n](const Node& self) {
                           auto& g = pl->grad_ref();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             g[i] += self.grad[0] * (detail::sigmoid(pl->value[i]) - label) / n;
                           }
                         });
}

}  // namespace tgsim::nn
