#include "cadlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cadlab/error.hpp"

namespace cadlab::nd {

Tensor& ParamStore::add(std::string name, Tensor tensor) {
  require(!contains(name), "duplicate parameter name: " + name);
  require(tensor.defined() && tensor.is_leaf(), "parameter " + name + " must be a leaf tensor");
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(tensor));
  return tensors_.back();
}

bool ParamStore::contains(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  require(it != names_.end(), "unknown parameter: " + std::string(name));
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

Tensor& ParamStore::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& t = tensors_[i];
    auto values = std::vector<double>(t.data().begin(), t.data().end());
    out.add(names_[i], t.requires_grad() ? Tensor::parameter(t.shape(), std::move(values))
                                         : Tensor::from(t.shape(), std::move(values)));
  }
  return out;
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "lamb";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "adam") return OptimizerKind::adam;
  if (text == "lamb") return OptimizerKind::lamb;
  throw ContractViolation("unknown optimizer '" + std::string(text) + "' (expected adam|lamb)");
}

OptimizerState OptimizerState::init(const ParamStore& params, OptimizerConfig config) {
  OptimizerState state;
  state.config = config;
  for (const auto& t : params.tensors()) {
    state.first_moment.emplace_back(t.size(), 0.0);
    state.second_moment.emplace_back(t.size(), 0.0);
  }
  return state;
}

double trust_ratio(double param_norm, double update_norm, const OptimizerConfig& config) {
  if (param_norm == 0.0 || update_norm == 0.0) return 1.0;
  return std::clamp(param_norm / update_norm, config.trust_min, config.trust_max);
}

void optimizer_step(ParamStore& params, std::span<const Tensor> grads, OptimizerState& state,
                    double lr) {
  require(grads.size() == params.size(), "optimizer_step: expected one gradient per parameter");
  require(state.first_moment.size() == params.size(),
          "optimizer_step: state was initialized for a different parameter set");
  for (std::size_t p = 0; p < params.size(); ++p) {
    require(grads[p].shape() == params[p].shape(),
            "optimizer_step: gradient shape mismatch for " + params.name(p));
    require(state.first_moment[p].size() == params[p].size(),
            "optimizer_step: accumulator shape mismatch for " + params.name(p));
    for (double g : grads[p].data()) {
      if (!std::isfinite(g)) {
        throw NumericalError("optimizer_step rejected: non-finite gradient in parameter '" +
                             params.name(p) + "'");
      }
    }
  }

  const auto& cfg = state.config;
  const std::int64_t step = state.step + 1;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));

  std::vector<double> update;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_data();
    const auto g = grads[p].data();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    update.assign(values.size(), 0.0);
    double update_sq = 0.0;
    double param_sq = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      update[i] = m_hat / (std::sqrt(v_hat) + cfg.epsilon) + cfg.weight_decay * values[i];
      update_sq += update[i] * update[i];
      param_sq += values[i] * values[i];
    }
    double ratio = 1.0;
    if (cfg.kind == OptimizerKind::lamb) {
      ratio = trust_ratio(std::sqrt(param_sq), std::sqrt(update_sq), cfg);
    }
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * ratio * update[i];
  }
  state.step = step;
}

void ema_update(ParamStore& ema, const ParamStore& params, double decay) {
  require(decay >= 0.0 && decay <= 1.0, "ema_update: decay must lie in [0, 1]");
  require(ema.size() == params.size(), "ema_update: parameter sets differ");
  for (std::size_t p = 0; p < params.size(); ++p) {
    require(ema[p].shape() == params[p].shape(),
            "ema_update: shape mismatch for " + params.name(p));
    auto target = ema[p].mutable_data();
    const auto source = params[p].data();
    for (std::size_t i = 0; i < target.size(); ++i) {
      target[i] = decay * target[i] + (1.0 - decay) * source[i];
    }
  }
}

void LrSchedule::validate() const {
  require(peak > 0.0, "lr schedule: peak learning rate must be positive");
  require(warmup >= 0, "lr schedule: warmup must be non-negative");
  require(total > warmup, "lr schedule: total steps must exceed warmup steps");
}

double lr_at(std::int64_t step, const LrSchedule& schedule) {
  schedule.validate();
  require(step >= 0, "lr_at: step must be non-negative");
  step = std::min(step, schedule.total);
  if (step < schedule.warmup) {
    return schedule.peak * static_cast<double>(step) / static_cast<double>(schedule.warmup);
  }
  const double progress = static_cast<double>(step - schedule.warmup) /
                          static_cast<double>(schedule.total - schedule.warmup);
  return schedule.peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace cadlab::nd
