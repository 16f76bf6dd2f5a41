#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cadlab/denoiser.hpp"
#include "cadlab/diffusion.hpp"
#include "cadlab/noisesim.hpp"
#include "cadlab/toydata.hpp"

namespace cadlab::cli {

/// Bad or unknown configuration entry; the message names the field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::size_t n_classes = 8;
  double radius = 4.0;
  double sigma = 0.4;
  std::size_t n_train = 200000;
  std::size_t n_reference = 2000;
};

struct NoiseConfig {
  bool enabled = true;
  double beta = 0.5;
  double kappa = 0.5;
  std::size_t n_bins = 8;
  bool binned = false;
};

struct ModelConfig {
  std::size_t embed_dim = 64;
  std::size_t width = 256;
  std::size_t depth = 4;
  denoiser::ConditionLayout layout = denoiser::ConditionLayout::merged;
  double cond_dropout = 0.0;
  double coherence_frequency = 10.0;
};

struct TrainSection {
  Regime regime = Regime::cad;
  std::string tag;  // empty: regime name
  std::string dataset = "corrupted";  // corrupted | clean
  std::int64_t steps = 5000;
  std::size_t batch_size = 128;
  nd::OptimizerKind optimizer = nd::OptimizerKind::lamb;
  double lr = 3e-3;
  std::int64_t warmup = 500;
  double weight_decay = 0.01;
  double ema_decay = 0.999;
  diffusion::ScheduleKind schedule = diffusion::ScheduleKind::cosine;
  diffusion::LossNorm loss_norm = diffusion::LossNorm::squared;
  std::int64_t log_every = 50;

  std::string effective_tag() const;
};

struct SampleSection {
  std::string tag;  // model tag; empty: train tag
  std::string checkpoint = "ema";
  std::size_t n = 2000;
  std::size_t steps = 250;
  double eta = 0.0;
  diffusion::GuidanceMode guidance = diffusion::GuidanceMode::none;
  double omega = 0.0;
  double coherence = 1.0;
  std::string labels = "balanced";
  double clip_x0 = 0.0;
};

struct EvalSection {
  std::size_t k = 5;
};

struct SweepSection {
  std::string axis = "coherence";
  std::vector<double> grid;  // empty: axis default
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  DataConfig data;
  NoiseConfig noise;
  ModelConfig model;
  TrainSection train;
  SampleSection sample;
  EvalSection eval;
  SweepSection sweep;

  toydata::RingMixtureSpec ring(std::uint64_t seed) const;
  denoiser::DenoiserConfig denoiser_config() const;
  diffusion::TrainConfig train_config() const;
  diffusion::SamplerOptions sampler_options() const;
  void validate() const;
};

/// Parses INI text. Unknown sections or keys and malformed values raise ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every field with its effective value, in schema order. parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& config);

/// Flat "section.key" -> value view of to_ini, used for the manifest snapshot.
std::map<std::string, std::string> flatten(const ExperimentConfig& config);

std::vector<double> parse_grid(const std::string& text);
std::vector<double> default_grid(const std::string& axis);

}  // namespace cadlab::cli
