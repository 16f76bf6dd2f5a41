#pragma once

#include <span>

#include "cadlab/tensor.hpp"

namespace cadlab {

/// Anything that predicts the injected noise from (x_t, t, y, c).
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;

  virtual nd::Tensor predict(const nd::Tensor& x_t, std::span<const double> t,
                             std::span<const std::size_t> y, std::span<const double> c) const = 0;
  /// True when coherence is a conditioning input (CAD-trained).
  virtual bool uses_coherence() const = 0;
  /// True when the null-condition row was trained (label dropout).
  virtual bool has_null_condition() const = 0;
  virtual std::size_t null_class() const = 0;
  virtual std::size_t data_dim() const = 0;
};

}  // namespace cadlab
