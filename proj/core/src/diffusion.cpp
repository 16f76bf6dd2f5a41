#include "cadlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace cadlab::diffusion {

std::string_view to_string(ScheduleKind kind) { return kind == ScheduleKind::cosine ? "cosine" : "linear"; }

ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "cosine") return ScheduleKind::cosine;
  if (text == "linear") return ScheduleKind::linear;
  throw ContractViolation("unknown schedule '" + std::string(text) + "' (expected cosine|linear)");
}

std::string_view to_string(LossNorm norm) { return norm == LossNorm::squared ? "squared" : "unsquared"; }

LossNorm parse_loss_norm(std::string_view text) {
  if (text == "squared") return LossNorm::squared;
  if (text == "unsquared") return LossNorm::unsquared;
  throw ContractViolation("unknown loss norm '" + std::string(text) + "' (expected squared|unsquared)");
}

std::string_view to_string(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::none: return "none";
    case GuidanceMode::cfg: return "cfg";
    case GuidanceMode::ca_cfg: return "ca-cfg";
  }
  return "?";
}

GuidanceMode parse_guidance_mode(std::string_view text) {
  if (text == "none") return GuidanceMode::none;
  if (text == "cfg") return GuidanceMode::cfg;
  if (text == "ca-cfg" || text == "ca_cfg") return GuidanceMode::ca_cfg;
  throw ContractViolation("unknown guidance mode '" + std::string(text) + "' (expected none|cfg|ca-cfg)");
}

double gamma(double t, const NoiseSchedule& schedule) {
  require(t >= 0.0 && t <= 1.0, "gamma: t must lie in [0, 1], got " + std::to_string(t));
  double raw = 0.0;
  if (schedule.kind == ScheduleKind::cosine) {
    const double c = std::cos(0.5 * std::numbers::pi * t);
    raw = c * c;
  } else {
    raw = 1.0 - t;
  }
  // Affine squeeze into [offset, 1 - offset] keeps the map strictly decreasing.
  return kGammaOffset + (1.0 - 2.0 * kGammaOffset) * raw;
}

Tensor corrupt(const Tensor& x, std::span<const double> t, const Tensor& eps,
               const NoiseSchedule& schedule) {
  require(x.defined() && eps.defined() && x.shape() == eps.shape(),
          "corrupt: eps must have the same shape as x");
  require(x.rank() == 2, "corrupt: x must be [B, d]");
  require(t.size() == x.rows(), "corrupt: need one time per row");
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  std::vector<double> out(rows * cols);
  const auto xv = x.data();
  const auto ev = eps.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = gamma(t[r], schedule);
    const double a = std::sqrt(g);
    const double b = std::sqrt(1.0 - g);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a * xv[r * cols + c] + b * ev[r * cols + c];
  }
  return Tensor::from(x.shape(), std::move(out));
}

Tensor corrupt(const Tensor& x, double t, const Tensor& eps, const NoiseSchedule& schedule) {
  require(x.rank() == 2, "corrupt: x must be [B, d]");
  const std::vector<double> times(x.rows(), t);
  return corrupt(x, times, eps, schedule);
}

Tensor noise_prediction_loss(const Tensor& prediction, const Tensor& eps, std::span<const double> weights,
                             LossNorm norm) {
  require(prediction.defined() && eps.defined() && prediction.shape() == eps.shape(),
          "diffusion loss: prediction and target shapes differ");
  require(prediction.rank() == 2, "diffusion loss: expected [B, d] tensors");
  auto per_sample = nd::row_sums(nd::square(nd::sub(eps, prediction)));
  if (norm == LossNorm::unsquared) per_sample = nd::sqrt(per_sample);
  if (!weights.empty()) {
    require(weights.size() == prediction.rows(), "diffusion loss: need one weight per sample");
    per_sample = nd::mul(per_sample, Tensor::from({weights.size()}, {weights.begin(), weights.end()}));
  }
  return nd::mean(per_sample);
}

Tensor diffusion_loss(const denoiser::Denoiser& model, const TrainingBatch& batch, std::span<const double> t,
                      const Tensor& eps, Regime regime, const NoiseSchedule& schedule, LossNorm norm) {
  const std::size_t rows = batch.x0.rows();
  require(batch.labels.size() == rows, "diffusion loss: need one label per sample");
  std::vector<double> coherence;
  if (regime == Regime::cad) {
    require(batch.coherence.size() == rows, "diffusion loss: cad regime requires coherence on every sample");
    coherence = batch.coherence;
  } else {
    coherence.assign(rows, denoiser::kSentinelCoherence);
  }
  std::span<const double> weights;
  if (regime == Regime::weighted) {
    require(batch.weights.size() == rows, "diffusion loss: weighted regime requires loss weights");
    weights = batch.weights;
  }
  const auto x_t = corrupt(batch.x0, t, eps, schedule);
  const auto prediction = model.predict_eps(x_t, t, batch.labels, coherence);
  return noise_prediction_loss(prediction, eps, weights, norm);
}

Tensor combine_guidance(const Tensor& cond, const Tensor& other, double omega) {
  require(cond.shape() == other.shape(), "guidance: prediction shapes differ");
  const auto a = cond.data();
  const auto b = other.data();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + omega * (a[i] - b[i]);
  return Tensor::from(cond.shape(), std::move(out));
}

Tensor guided_eps(const NoisePredictor& model, const Tensor& x_t, std::span<const double> t,
                  std::span<const std::size_t> y, std::span<const double> c, const GuidanceSpec& spec) {
  require(spec.omega >= 0.0, "guidance rate must be non-negative");
  const std::size_t rows = x_t.rows();
  switch (spec.mode) {
    case GuidanceMode::none:
      return model.predict(x_t, t, y, c);
    case GuidanceMode::cfg: {
      require(model.has_null_condition(), "cfg guidance requires a model trained with a null condition");
      const auto cond = model.predict(x_t, t, y, c);
      if (spec.omega == 0.0) return cond;
      const std::vector<std::size_t> null_labels(rows, model.null_class());
      return combine_guidance(cond, model.predict(x_t, t, null_labels, c), spec.omega);
    }
    case GuidanceMode::ca_cfg: {
      require(model.uses_coherence(), "ca-cfg guidance requires a coherence-conditioned (cad) model");
      const auto cond = model.predict(x_t, t, y, std::vector<double>(rows, 1.0));
      if (spec.omega == 0.0) return cond;
      return combine_guidance(cond, model.predict(x_t, t, y, std::vector<double>(rows, 0.0)), spec.omega);
    }
  }
  throw ContractViolation("unknown guidance mode");
}

double ancestral_variance(double gamma_t, double gamma_next, double eta) {
  require(eta >= 0.0 && eta <= 1.0, "sampler: eta must lie in [0, 1]");
  if (eta == 0.0) return 0.0;
  const double v = eta * eta * (1.0 - gamma_next) / (1.0 - gamma_t) * (1.0 - gamma_t / gamma_next);
  return std::max(v, 0.0);
}

UpdateResult ddim_update(std::span<const double> x_t, std::span<const double> eps_hat, double gamma_t,
                         double gamma_next, double eta, std::span<const double> noise, double clip_x0) {
  require(x_t.size() == eps_hat.size(), "ddim_update: size mismatch");
  require(gamma_t > 0.0 && gamma_t < 1.0 && gamma_next > 0.0 && gamma_next < 1.0,
          "ddim_update: gamma values must lie in (0, 1)");
  const double var = ancestral_variance(gamma_t, gamma_next, eta);
  const double sigma = std::sqrt(var);
  require(sigma == 0.0 || noise.size() == x_t.size(), "ddim_update: noise required when sigma > 0");
  const double sqrt_gt = std::sqrt(gamma_t);
  const double sqrt_1mgt = std::sqrt(1.0 - gamma_t);
  const double dir_scale = std::sqrt(std::max(0.0, 1.0 - gamma_next - var));
  const double sqrt_gn = std::sqrt(gamma_next);
  UpdateResult out;
  out.x_next.resize(x_t.size());
  out.x0_hat.resize(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    double x0 = (x_t[i] - sqrt_1mgt * eps_hat[i]) / sqrt_gt;
    double e = eps_hat[i];
    if (clip_x0 > 0.0 && std::abs(x0) > clip_x0) {
      x0 = std::clamp(x0, -clip_x0, clip_x0);
      e = (x_t[i] - sqrt_gt * x0) / sqrt_1mgt;
    }
    out.x0_hat[i] = x0;
    out.x_next[i] = sqrt_gn * x0 + dir_scale * e + (sigma > 0.0 ? sigma * noise[i] : 0.0);
  }
  return out;
}

namespace {

UpdateResult step_impl(const NoisePredictor& model, const Tensor& x_t, double t, double t_next,
                       std::span<const std::size_t> y, std::span<const double> c, const GuidanceSpec& spec,
                       const SamplerOptions& options, std::span<Rng> chain_rngs) {
  require(t_next >= 0.0 && t_next <= t && t <= 1.0, "sampler_step: need 0 <= t_next <= t <= 1");
  const std::size_t rows = x_t.rows();
  const std::size_t cols = x_t.cols();
  require(y.size() == rows && c.size() == rows, "sampler_step: one condition per row required");
  if (t_next == t) {
    return {{x_t.data().begin(), x_t.data().end()}, {x_t.data().begin(), x_t.data().end()}};
  }
  const double g_t = gamma(t, options.schedule);
  const double g_next = gamma(t_next, options.schedule);
  const std::vector<double> times(rows, t);
  const auto eps_hat = guided_eps(model, x_t, times, y, c, spec);
  std::vector<double> noise;
  if (ancestral_variance(g_t, g_next, options.eta) > 0.0) {
    require(chain_rngs.size() == rows, "sampler_step: one random stream per row required");
    noise.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < cols; ++k) noise[r * cols + k] = standard_normal(chain_rngs[r]);
    }
  }
  return ddim_update(x_t.data(), eps_hat.data(), g_t, g_next, options.eta, noise, options.clip_x0);
}

}  // namespace

Tensor sampler_step(const NoisePredictor& model, const Tensor& x_t, double t, double t_next,
                    std::span<const std::size_t> y, std::span<const double> c, const GuidanceSpec& spec,
                    const SamplerOptions& options, std::span<Rng> chain_rngs) {
  nd::NoGradGuard no_grad;
  auto result = step_impl(model, x_t, t, t_next, y, c, spec, options, chain_rngs);
  return Tensor::from(x_t.shape(), std::move(result.x_next));
}

PointSet sample(const NoisePredictor& model, std::span<const std::size_t> labels, std::span<const double> coherence,
                const GuidanceSpec& spec, const SamplerOptions& options, std::uint64_t seed) {
  require(options.steps >= 1, "sample: steps must be at least 1");
  require(labels.size() == coherence.size(), "sample: one coherence per label required");
  const std::size_t dim = model.data_dim();
  PointSet out(dim);
  const std::size_t n = labels.size();
  if (n == 0) return out;
  nd::NoGradGuard no_grad;

  constexpr std::size_t kChunk = 512;
  out.coords.reserve(n * dim);
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t rows = std::min(kChunk, n - begin);
    std::vector<Rng> rngs;
    rngs.reserve(rows);
    std::vector<double> x(rows * dim);
    for (std::size_t r = 0; r < rows; ++r) {
      rngs.push_back(derive_rng(seed, static_cast<std::uint64_t>(begin + r)));
      for (std::size_t k = 0; k < dim; ++k) x[r * dim + k] = standard_normal(rngs.back());
    }
    const auto y = labels.subspan(begin, rows);
    const auto c = coherence.subspan(begin, rows);
    std::vector<double> x0;
    for (std::size_t i = 0; i < options.steps; ++i) {
      const double t = 1.0 - static_cast<double>(i) / static_cast<double>(options.steps);
      const double t_next = i + 1 == options.steps
                                ? 0.0
                                : 1.0 - static_cast<double>(i + 1) / static_cast<double>(options.steps);
      auto result = step_impl(model, Tensor::from({rows, dim}, x), t, t_next, y, c, spec, options, rngs);
      x = std::move(result.x_next);
      x0 = std::move(result.x0_hat);
    }
    for (double v : x0) {
      if (!std::isfinite(v)) throw NumericalError("sample: non-finite output");
    }
    out.coords.insert(out.coords.end(), x0.begin(), x0.end());
  }
  return out;
}

void TrainConfig::validate() const {
  require(steps >= 0, "train: steps must be non-negative");
  require(batch_size >= 1, "train: batch size must be positive");
  require(ema_decay >= 0.0 && ema_decay <= 1.0, "train: ema decay must lie in [0, 1]");
  require(log_every >= 1, "train: log interval must be positive");
  require(loss_smoothing >= 0.0 && loss_smoothing < 1.0, "train: loss smoothing must lie in [0, 1)");
  if (steps > 0) {
    require(lr.peak > 0.0, "train: peak learning rate must be positive");
    require(lr.warmup >= 0 && lr.warmup < steps, "train: warmup must be shorter than the run");
  }
}

TrainResult train(denoiser::Denoiser init, const noisesim::DatasetView& view, const TrainConfig& config,
                  const TrainObserver& observer) {
  config.validate();
  require(view.regime == config.regime, "train: dataset view was built for regime '" +
                                            std::string(to_string(view.regime)) + "' but training uses '" +
                                            std::string(to_string(config.regime)) + "'");
  require(init.config().regime == config.regime, "train: model was configured for a different regime");
  for (std::size_t i = 0; i < view.samples.size(); ++i) {
    const auto& s = view.samples[i];
    require(s.y < init.config().n_classes, "train: label out of range at sample " + std::to_string(i));
    require(s.x.size() == init.config().data_dim, "train: sample dimension mismatch");
    if (config.regime == Regime::cad) {
      require(s.coherence.has_value(), "train: cad regime requires coherence on every sample");
    }
    if (config.regime == Regime::weighted) {
      require(s.weight.has_value(), "train: weighted regime requires a loss weight on every sample");
    }
  }

  TrainResult result{init, init, {}, view.samples.size()};
  if (config.steps == 0) return result;
  require(!view.samples.empty(), "train: empty dataset view");

  auto& model = result.model;
  auto& params = model.params();
  nd::LrSchedule schedule = config.lr;
  schedule.total = config.steps;
  auto state = nd::OptimizerState::init(params, config.optimizer);

  Rng batch_rng = derive_rng(config.seed, "train-batch");
  Rng time_rng = derive_rng(config.seed, "train-time");
  Rng noise_rng = derive_rng(config.seed, "train-noise");
  Rng dropout_rng = derive_rng(config.seed, "train-dropout");
  std::uniform_int_distribution<std::size_t> pick(0, view.samples.size() - 1);

  const std::size_t dim = init.config().data_dim;
  const std::size_t rows = config.batch_size;
  double smoothed = 0.0;
  for (std::int64_t step = 0; step < config.steps; ++step) {
    const double lr = nd::lr_at(step, schedule);
    TrainingBatch batch;
    std::vector<double> x0(rows * dim);
    batch.labels.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& s = view.samples[pick(batch_rng)];
      std::copy(s.x.begin(), s.x.end(), x0.begin() + static_cast<std::ptrdiff_t>(r * dim));
      batch.labels[r] = s.y;
      if (config.regime == Regime::cad) batch.coherence.push_back(*s.coherence);
      if (config.regime == Regime::weighted) batch.weights.push_back(*s.weight);
      if (model.has_null_condition() && uniform01(dropout_rng) < model.config().cond_dropout) {
        batch.labels[r] = model.null_class();
      }
    }
    batch.x0 = Tensor::from({rows, dim}, std::move(x0));
    std::vector<double> t(rows);
    for (auto& v : t) v = uniform01(time_rng);
    std::vector<double> eps(rows * dim);
    for (auto& v : eps) v = standard_normal(noise_rng);

    const auto loss = diffusion_loss(model, batch, t, Tensor::from({rows, dim}, std::move(eps)), config.regime,
                                     config.schedule, config.norm);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw TrainingDiverged("training diverged: loss is " + std::to_string(value) + " at step " +
                                 std::to_string(step),
                             step, result.history);
    }
    const auto grads = nd::grad(loss, params.tensors());
    try {
      nd::optimizer_step(params, grads.grads, state, lr);
    } catch (const NumericalError& e) {
      throw TrainingDiverged(std::string("training diverged at step ") + std::to_string(step) + ": " + e.what(),
                             step, result.history);
    }
    nd::ema_update(result.ema.params(), params, config.ema_decay);

    smoothed = step == 0 ? value : config.loss_smoothing * smoothed + (1.0 - config.loss_smoothing) * value;
    if (step % config.log_every == 0 || step + 1 == config.steps) {
      result.history.push_back({step, lr, value, smoothed});
      if (observer) observer(result.history.back());
    }
  }
  return result;
}

}  // namespace cadlab::diffusion
