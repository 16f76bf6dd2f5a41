#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a node. Every operation on tensors that
// require gradients records a backward closure on the new node; grad() walks
// the recorded graph once and then releases it. Parameters are leaf tensors
// created with Tensor::parameter(); they are the only nodes whose storage may
// be mutated in place (by optimizers and checkpoint loading).

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cadlab::nd {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  /// Leaf that participates in differentiation.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Writable storage; only legal on leaf tensors.
  std::span<double> mutable_data();

  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Same values, no history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Internal constructor used by operations.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Elementwise, equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

// Rank-2 broadcasting.
/// a[B,n] + bias[n] on every row.
Tensor add_row(const Tensor& a, const Tensor& bias);
/// a[B,n] * w[B] row-wise.
Tensor mul_rows(const Tensor& a, const Tensor& weights);
Tensor matmul(const Tensor& a, const Tensor& b);
/// Column-wise concatenation of rank-2 tensors with equal row counts.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Rows of table[V,d] selected by index.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

// Nonlinearities.
Tensor silu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
/// Square root; the derivative at 0 is taken as 0.
Tensor sqrt(const Tensor& a);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// a[B,n] -> [B], summing each row.
Tensor row_sums(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

struct GradResult {
  /// One gradient per requested parameter, in request order.
  std::vector<Tensor> grads;
  /// Indices of parameters that the loss does not depend on.
  std::vector<std::size_t> unreached;
};

/// Reverse-mode gradients of a scalar loss. Releases the recorded graph.
GradResult grad(const Tensor& loss, std::span<const Tensor> params);

}  // namespace cadlab::nd
