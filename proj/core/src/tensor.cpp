#include "cadlab/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "cadlab/error.hpp"

namespace cadlab::nd {

namespace {

thread_local bool g_grad_enabled = true;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

std::vector<double>& grad_of(detail::Node& node) {
  if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined tensor");
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                            " vs " + shape_string(b.shape()));
  }
}

void check_rank2(const Tensor& a, const char* op) {
  require(a.defined() && a.rank() == 2, std::string(op) + ": expected a rank-2 tensor");
}

// Elementwise unary op with derivative expressed through input and output values.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  require(a.defined(), "unary op on undefined tensor");
  const auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [deriv](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  for (auto d : shape) require(d > 0, "tensor dimensions must be positive, got " + shape_string(shape));
  require(element_count(shape) == values.size(),
          "tensor data length " + std::to_string(values.size()) + " does not match shape " +
              shape_string(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = element_count(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  require(defined(), "shape() on undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::size_t Tensor::rows() const {
  require(rank() == 2, "rows() requires rank 2");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require(rank() == 2, "cols() requires rank 2");
  return node_->shape[1];
}

std::span<const double> Tensor::data() const {
  require(defined(), "data() on undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  require(defined(), "mutable_data() on undefined tensor");
  require(node_->leaf, "mutable_data() is only available on leaf tensors");
  return node_->value;
}

double Tensor::item() const {
  require(size() == 1, "item() requires a single-element tensor");
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return node_->value[row * cols() + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }

Tensor Tensor::detach() const { return from(shape(), node_->value); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->leaf = false;
  const bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const Tensor& p) { return p.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = grad_of(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = grad_of(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = grad_of(pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  check_rank2(a, "add_row");
  require(bias.defined() && bias.rank() == 1 && bias.shape()[0] == a.cols(),
          "add_row: bias must have shape [" + std::to_string(a.cols()) + "]");
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  const auto x = a.data();
  const auto b = bias.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + b[c];
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, bias},
                             [rows, cols](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               if (pa.requires_grad) {
                                 auto& g = grad_of(pa);
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                               }
                               if (pb.requires_grad) {
                                 auto& g = grad_of(pb);
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t c = 0; c < cols; ++c) {
                                     g[c] += self.grad[r * cols + c];
                                   }
                                 }
                               }
                             });
}

Tensor mul_rows(const Tensor& a, const Tensor& weights) {
  check_rank2(a, "mul_rows");
  require(weights.defined() && weights.rank() == 1 && weights.shape()[0] == a.rows(),
          "mul_rows: weights must have shape [" + std::to_string(a.rows()) + "]");
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  const auto x = a.data();
  const auto w = weights.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] * w[r];
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, weights},
                             [rows, cols](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pw = *self.parents[1];
                               if (pa.requires_grad) {
                                 auto& g = grad_of(pa);
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t c = 0; c < cols; ++c) {
                                     g[r * cols + c] += self.grad[r * cols + c] * pw.value[r];
                                   }
                                 }
                               }
                               if (pw.requires_grad) {
                                 auto& g = grad_of(pw);
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t c = 0; c < cols; ++c) {
                                     g[r] += self.grad[r * cols + c] * pa.value[r * cols + c];
                                   }
                                 }
                               }
                             });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  require(a.cols() == b.rows(), "matmul: inner dimensions differ " + shape_string(a.shape()) +
                                    " x " + shape_string(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.rows());
  const auto k = static_cast<Eigen::Index>(a.cols());
  const auto n = static_cast<Eigen::Index>(b.cols());
  std::vector<double> out(static_cast<std::size_t>(m * n));
  Map(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return Tensor::make_result({a.rows(), b.cols()}, std::move(out), {a, b},
                             [m, k, n](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               ConstMap dc(self.grad.data(), m, n);
                               if (pa.requires_grad) {
                                 auto& g = grad_of(pa);
                                 Map(g.data(), m, k).noalias() +=
                                     dc * ConstMap(pb.value.data(), k, n).transpose();
                               }
                               if (pb.requires_grad) {
                                 auto& g = grad_of(pb);
                                 Map(g.data(), k, n).noalias() +=
                                     ConstMap(pa.value.data(), m, k).transpose() * dc;
                               }
                             });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    check_rank2(p, "concat_cols");
    require(p.rows() == rows, "concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += widths[k];
  }
  return Tensor::make_result({rows, total}, std::move(out), parts,
                             [rows, total, widths](detail::Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 auto& p = *self.parents[k];
                                 if (p.requires_grad) {
                                   auto& g = grad_of(p);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                     for (std::size_t c = 0; c < widths[k]; ++c) {
                                       g[r * widths[k] + c] += self.grad[r * total + off + c];
                                     }
                                   }
                                 }
                                 off += widths[k];
                               }
                             });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  check_rank2(table, "gather_rows");
  require(!indices.empty(), "gather_rows: no indices");
  const std::size_t vocab = table.rows();
  const std::size_t width = table.cols();
  const auto src = table.data();
  std::vector<double> out(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] < vocab, "gather_rows: index " + std::to_string(indices[r]) +
                                    " out of range for table with " + std::to_string(vocab) +
                                    " rows");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return Tensor::make_result({indices.size(), width}, std::move(out), {table},
                             [idx = std::move(idx), width](detail::Node& self) {
                               auto& g = grad_of(*self.parents[0]);
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                 for (std::size_t c = 0; c < width; ++c) {
                                   g[idx[r] * width + c] += self.grad[r * width + c];
                                 }
                               }
                             });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sin(const Tensor& a) {
  return unary(
      a, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& a) {
  return unary(
      a, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor sum(const Tensor& a) {
  require(a.defined(), "sum of undefined tensor");
  const auto x = a.data();
  const double total = std::accumulate(x.begin(), x.end(), 0.0);
  return Tensor::make_result({}, {total}, {a}, [](detail::Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require(a.defined() && a.size() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor row_sums(const Tensor& a) {
  check_rank2(a, "row_sums");
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  const auto x = a.data();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r] += x[r * cols + c];
  }
  return Tensor::make_result({rows}, std::move(out), {a}, [rows, cols](detail::Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r];
    }
  });
}

GradResult grad(const Tensor& loss, std::span<const Tensor> params) {
  require(loss.defined(), "grad: undefined loss");
  require(loss.size() == 1, "grad: loss must be a scalar, got shape " + shape_string(loss.shape()));
  auto root = loss.node();
  require(!root->consumed, "grad: this graph was already consumed by a previous backward pass");

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  if (root->requires_grad) {
    std::unordered_map<detail::Node*, bool> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
    visited[root.get()] = true;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* parent = node->parents[next++].get();
        if (parent->requires_grad && !visited[parent]) {
          visited[parent] = true;
          stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  for (auto* node : order) node->grad.assign(node->value.size(), 0.0);
  if (!order.empty()) {
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* node = *it;
      if (node->backward) node->backward(*node);
    }
  }

  GradResult result;
  result.grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& node = params[i].node();
    require(node != nullptr, "grad: undefined parameter");
    const bool reached = std::find(order.begin(), order.end(), node.get()) != order.end();
    if (reached) {
      result.grads.push_back(Tensor::from(node->shape, node->grad));
    } else {
      result.unreached.push_back(i);
      result.grads.push_back(Tensor::zeros(node->shape));
    }
  }
  if (!result.unreached.empty()) {
    spdlog::warn("grad: {} parameter(s) not on the tape; returning zero gradients",
                 result.unreached.size());
  }

  for (auto* node : order) {
    node->grad.clear();
    node->grad.shrink_to_fit();
    if (!node->leaf) {
      node->backward = nullptr;
      node->parents.clear();
      node->consumed = true;
    }
  }
  if (!root->leaf) root->consumed = true;
  return result;
}

}  // namespace cadlab::nd
