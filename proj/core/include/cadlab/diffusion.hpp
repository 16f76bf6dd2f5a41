#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "cadlab/denoiser.hpp"
#include "cadlab/error.hpp"
#include "cadlab/noisesim.hpp"
#include "cadlab/optim.hpp"
#include "cadlab/points.hpp"
#include "cadlab/predictor.hpp"
#include "cadlab/regime.hpp"
#include "cadlab/rng.hpp"
#include "cadlab/tensor.hpp"

namespace cadlab::diffusion {

using nd::Tensor;

// ---------------------------------------------------------------------------
// Noise schedule and forward process

enum class ScheduleKind { cosine, linear };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view text);

/// Offset keeping gamma away from 0 and 1.
inline constexpr double kGammaOffset = 1e-5;

struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::cosine;
};

/// Signal-retention coefficient; strictly decreasing from 1-1e-5 at t=0 to 1e-5 at t=1.
double gamma(double t, const NoiseSchedule& schedule);

/// sqrt(gamma(t_i)) * x_i + sqrt(1 - gamma(t_i)) * eps_i for every row i.
Tensor corrupt(const Tensor& x, std::span<const double> t, const Tensor& eps,
               const NoiseSchedule& schedule);
Tensor corrupt(const Tensor& x, double t, const Tensor& eps, const NoiseSchedule& schedule);

// ---------------------------------------------------------------------------
// Training objective

enum class LossNorm { squared, unsquared };

std::string_view to_string(LossNorm norm);
LossNorm parse_loss_norm(std::string_view text);

/// Mean over the batch of w_i * ||eps_i - pred_i|| (squared by default).
/// Empty `weights` means all ones.
Tensor noise_prediction_loss(const Tensor& prediction, const Tensor& eps,
                             std::span<const double> weights, LossNorm norm);

struct TrainingBatch {
  Tensor x0;  // [B, d], standardized data
  std::vector<std::size_t> labels;
  std::vector<double> coherence;  // required for cad
  std::vector<double> weights;    // required for weighted
};

/// Corrupts the batch at times `t` with noise `eps` and scores the model's prediction.
Tensor diffusion_loss(const denoiser::Denoiser& model, const TrainingBatch& batch,
                      std::span<const double> t, const Tensor& eps, Regime regime,
                      const NoiseSchedule& schedule, LossNorm norm);

// ---------------------------------------------------------------------------
// Guidance

enum class GuidanceMode { none, cfg, ca_cfg };

std::string_view to_string(GuidanceMode mode);
GuidanceMode parse_guidance_mode(std::string_view text);

struct GuidanceSpec {
  GuidanceMode mode = GuidanceMode::none;
  double omega = 0.0;
};

/// cond + omega * (cond - other).
Tensor combine_guidance(const Tensor& cond, const Tensor& other, double omega);

/// Guided noise estimate. `c` is the prompted coherence used by mode none;
/// ca-cfg always contrasts coherence 1 against coherence 0.
Tensor guided_eps(const NoisePredictor& model, const Tensor& x_t, std::span<const double> t,
                  std::span<const std::size_t> y, std::span<const double> c,
                  const GuidanceSpec& spec);

// ---------------------------------------------------------------------------
// Sampling

struct SamplerOptions {
  std::size_t steps = 250;
  /// 0 = DDIM (deterministic), 1 = DDPM-ancestral.
  double eta = 0.0;
  NoiseSchedule schedule{};
  /// Clamp |x0_hat| to this bound in standardized units; 0 disables.
  double clip_x0 = 0.0;
};

/// Deterministic part of the update: given eps_hat, returns x_next and x0_hat.
/// `noise` supplies one N(0,1) draw per element when sigma > 0.
struct UpdateResult {
  std::vector<double> x_next;
  std::vector<double> x0_hat;
};
UpdateResult ddim_update(std::span<const double> x_t, std::span<const double> eps_hat, double gamma_t,
                         double gamma_next, double eta, std::span<const double> noise,
                         double clip_x0 = 0.0);

/// sigma^2 = eta^2 (1-g_next)/(1-g_t) (1 - g_t/g_next).
double ancestral_variance(double gamma_t, double gamma_next, double eta);

/// One reverse step from t to t_next. `chain_rngs` has one stream per row.
Tensor sampler_step(const NoisePredictor& model, const Tensor& x_t, double t, double t_next,
                    std::span<const std::size_t> y, std::span<const double> c,
                    const GuidanceSpec& spec, const SamplerOptions& options,
                    std::span<Rng> chain_rngs);

/// Generates one point per (label, coherence) pair over a uniform grid from 1 to 0.
/// Chain i uses the random stream derived from (seed, i), so the initial noise
/// of a chain does not depend on its condition or on the batch size.
PointSet sample(const NoisePredictor& model, std::span<const std::size_t> labels,
                std::span<const double> coherence, const GuidanceSpec& spec,
                const SamplerOptions& options, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  std::int64_t steps = 5000;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  Regime regime = Regime::cad;
  NoiseSchedule schedule{};
  LossNorm norm = LossNorm::squared;
  double ema_decay = 0.9999;
  nd::LrSchedule lr{3e-3, 500, 5000};
  nd::OptimizerConfig optimizer{};
  std::int64_t log_every = 50;
  /// Smoothing factor of the running loss reported as ema_loss.
  double loss_smoothing = 0.98;

  void validate() const;
};

struct LossRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double ema_loss = 0.0;
};

struct TrainResult {
  denoiser::Denoiser model;
  denoiser::Denoiser ema;
  std::vector<LossRecord> history;
  std::size_t train_size = 0;
};

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& message, std::int64_t step, std::vector<LossRecord> history)
      : NumericalError(message), step_(step), history_(std::move(history)) {}
  std::int64_t step() const { return step_; }
  const std::vector<LossRecord>& history() const { return history_; }

 private:
  std::int64_t step_;
  std::vector<LossRecord> history_;
};

/// Progress callback, invoked for every logged record.
using TrainObserver = std::function<void(const LossRecord&)>;

/// Runs the optimizer loop on a dataset view whose points are already standardized.
TrainResult train(denoiser::Denoiser init, const noisesim::DatasetView& view, const TrainConfig& config,
                  const TrainObserver& observer = {});

}  // namespace cadlab::diffusion
