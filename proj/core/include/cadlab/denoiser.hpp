#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cadlab/checkpoint.hpp"
#include "cadlab/optim.hpp"
#include "cadlab/predictor.hpp"
#include "cadlab/regime.hpp"
#include "cadlab/tensor.hpp"

namespace cadlab::denoiser {

using nd::Tensor;

/// How class and coherence embeddings reach the trunk.
enum class ConditionLayout {
  merged,    // h(y,c) = MLP(concat(class, coherence)), one vector
  separate,  // class and coherence embeddings side by side
};

inline std::string_view to_string(ConditionLayout layout) {
  return layout == ConditionLayout::merged ? "merged" : "separate";
}

inline ConditionLayout parse_condition_layout(std::string_view text) {
  if (text == "merged") return ConditionLayout::merged;
  if (text == "separate") return ConditionLayout::separate;
  throw ContractViolation("unknown condition layout '" + std::string(text) + "' (expected merged|separate)");
}

struct DenoiserConfig {
  std::size_t data_dim = 2;
  std::size_t n_classes = 8;
  std::size_t embed_dim = 64;
  std::size_t width = 256;
  std::size_t depth = 4;
  ConditionLayout layout = ConditionLayout::merged;
  Regime regime = Regime::cad;
  /// Probability of replacing the label with the null row during training.
  double cond_dropout = 0.0;
  /// Highest frequency of the coherence features (geometric from 1).
  double coherence_frequency = 10.0;

  void validate() const;
};

/// Coherence fed to models that were not trained with coherence input.
inline constexpr double kSentinelCoherence = 1.0;

/// Interleaved (sin, cos) features at geometric frequencies 1 .. 1e4.
std::vector<double> embed_time(double t, std::size_t dim);
/// Batch version, [B, dim].
Tensor embed_time_batch(std::span<const double> t, std::size_t dim);

class Denoiser : public NoisePredictor {
 public:
  Denoiser(DenoiserConfig config, std::uint64_t init_seed);
  // Copies are deep: parameters never alias between models.
  Denoiser(const Denoiser& other) : config_(other.config_), params_(other.params_.clone()) {}
  Denoiser& operator=(const Denoiser& other) {
    if (this != &other) {
      config_ = other.config_;
      params_ = other.params_.clone();
    }
    return *this;
  }
  Denoiser(Denoiser&&) noexcept = default;
  Denoiser& operator=(Denoiser&&) noexcept = default;

  static Denoiser from_arrays(const std::vector<nd::NamedArray>& arrays);
  std::vector<nd::NamedArray> to_arrays() const;

  const DenoiserConfig& config() const { return config_; }
  nd::ParamStore& params() { return params_; }
  const nd::ParamStore& params() const { return params_; }
  std::size_t null_class() const override { return config_.n_classes; }
  bool uses_coherence() const override { return config_.regime == Regime::cad; }
  bool has_null_condition() const override { return config_.cond_dropout > 0.0; }
  std::size_t data_dim() const override { return config_.data_dim; }
  std::size_t condition_dim() const;

  /// Learned map of sinusoidal coherence features, [B, embed_dim].
  /// Values outside [0,1] are clamped with a warning.
  Tensor embed_coherence(std::span<const double> c) const;
  /// h(y, c), [B, condition_dim()].
  Tensor cond_embedding(std::span<const std::size_t> y, std::span<const double> c) const;
  /// Noise prediction for x_t [B, data_dim].
  Tensor predict_eps(const Tensor& x_t, std::span<const double> t, std::span<const std::size_t> y,
                     std::span<const double> c) const;
  Tensor predict(const Tensor& x_t, std::span<const double> t, std::span<const std::size_t> y,
                 std::span<const double> c) const override {
    return predict_eps(x_t, t, y, c);
  }
  /// Trunk evaluated on a precomputed condition embedding.
  Tensor predict_eps_from_condition(const Tensor& x_t, std::span<const double> t,
                                    const Tensor& condition) const;

  /// Replaces this model's parameters with `other`'s values (same architecture).
  void load_values(const nd::ParamStore& other);

 private:
  Tensor linear(const Tensor& x, const char* name) const;

  DenoiserConfig config_;
  nd::ParamStore params_;
};

struct CollapseRow {
  double coherence = 0.0;
  double mean_distance = 0.0;
  double max_distance = 0.0;
};

/// Mean (and max) pairwise distance of h(y, c) over all class pairs, per grid value.
std::vector<CollapseRow> collapse_probe(const Denoiser& model, std::span<const double> grid);

struct ConsistencyReport {
  double lipschitz_estimate = 0.0;
  double max_embedding_gap = 0.0;   // max pair ||h(y1,c) - h(y2,c)||
  double max_prediction_gap = 0.0;  // max pair ||eps(x,t,y1,c) - eps(x,t,y2,c)||
  bool bound_holds = false;         // prediction gap <= L * embedding gap
};

/// Empirical check that prediction spread across labels is controlled by the
/// embedding spread at coherence `c`, with a local Lipschitz constant of the
/// trunk estimated from condition-embedding pairs on the same probe points.
ConsistencyReport coherence_consistency(const Denoiser& model, double c, std::size_t probe_points,
                                        std::uint64_t seed);

}  // namespace cadlab::denoiser
