#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cadlab/tensor.hpp"

namespace cadlab::nd {

/// Ordered collection of named leaf parameters.
class ParamStore {
 public:
  Tensor& add(std::string name, Tensor tensor);

  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  std::span<const Tensor> tensors() const { return tensors_; }
  std::size_t parameter_count() const;

  /// Deep copy with fresh leaf nodes.
  ParamStore clone() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

enum class OptimizerKind { adam, lamb };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::lamb;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  // LAMB trust ratio bounds.
  double trust_min = 0.01;
  double trust_max = 10.0;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;

  static OptimizerState init(const ParamStore& params, OptimizerConfig config);
};

/// One Adam (decoupled weight decay) or LAMB update with learning rate `lr`.
/// Gradients are validated before anything is modified; a non-finite entry
/// throws NumericalError naming the parameter and leaves params and state
/// untouched.
void optimizer_step(ParamStore& params, std::span<const Tensor> grads, OptimizerState& state,
                    double lr);

/// LAMB trust ratio ||param|| / ||update||, clamped; 1 when either norm is 0.
double trust_ratio(double param_norm, double update_norm, const OptimizerConfig& config);

/// ema <- decay * ema + (1 - decay) * params, elementwise.
void ema_update(ParamStore& ema, const ParamStore& params, double decay);

struct LrSchedule {
  double peak = 3e-3;
  std::int64_t warmup = 0;
  std::int64_t total = 1;

  void validate() const;
};

/// Linear warmup to the peak, then cosine decay to zero at `total`.
double lr_at(std::int64_t step, const LrSchedule& schedule);

}  // namespace cadlab::nd
