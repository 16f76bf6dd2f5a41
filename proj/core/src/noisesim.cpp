#include "cadlab/noisesim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <spdlog/spdlog.h>

#include "cadlab/error.hpp"
#include "cadlab/rng.hpp"

namespace cadlab::noisesim {

void NoiseSimConfig::validate() const {
  require(n_classes >= 2, "noise config: N must be at least 2");
  require(beta > 0.0 && beta < 1.0, "noise config: beta must lie in (0, 1)");
  require(kappa > 0.0 && kappa < 1.0, "noise config: kappa must lie in (0, 1)");
}

double max_alpha(std::size_t n_classes) {
  return static_cast<double>(n_classes - 1) / static_cast<double>(n_classes);
}

namespace {

void check_alpha(double alpha, std::size_t n_classes) {
  require(n_classes >= 2, "need at least 2 classes");
  require(alpha >= 0.0 && alpha <= max_alpha(n_classes),
          "alpha " + std::to_string(alpha) + " outside [0, (N-1)/N]");
}

}  // namespace

std::vector<double> flip_distribution(std::size_t y, double alpha, std::size_t n_classes) {
  check_alpha(alpha, n_classes);
  require(y < n_classes, "flip_distribution: label out of range");
  std::vector<double> p(n_classes, alpha / static_cast<double>(n_classes - 1));
  p[y] = 1.0 - alpha;
  return p;
}

double entropy_of_alpha(double alpha, std::size_t n_classes) {
  check_alpha(alpha, n_classes);
  if (alpha == 0.0) return 0.0;
  if (alpha == max_alpha(n_classes)) return 1.0;
  const double n = static_cast<double>(n_classes);
  const double keep = 1.0 - alpha;
  const double h = keep * std::log(keep) + alpha * std::log(alpha / (n - 1.0));
  return std::clamp(-h / std::log(n), 0.0, 1.0);
}

double invert_entropy(double u, std::size_t n_classes, double tol) {
  require(u >= 0.0 && u <= 1.0, "invert_entropy: u must lie in [0, 1]");
  require(tol > 0.0, "invert_entropy: tolerance must be positive");
  require(n_classes >= 2, "invert_entropy: need at least 2 classes");
  if (u == 0.0) return 0.0;
  if (u == 1.0) return max_alpha(n_classes);
  double lo = 0.0;
  double hi = max_alpha(n_classes);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double e = entropy_of_alpha(mid, n_classes);
    if (std::abs(e - u) <= tol) return mid;
    if (e < u) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw NumericalError("invert_entropy: bisection did not reach tolerance " + std::to_string(tol) +
                       " for u=" + std::to_string(u));
}

double target_entropy_cdf(double t, double beta, double kappa) {
  require(kappa > 0.0 && kappa < 1.0, "target_entropy_cdf: kappa must lie in (0, 1)");
  require(t >= 0.0 && t <= 1.0, "target_entropy_cdf: t must lie in [0, 1]");
  if (t < kappa) return t * beta / kappa;
  return 1.0 + (t - 1.0) * (1.0 - beta) / (1.0 - kappa);
}

double expected_flip_rate(std::size_t n_classes, double beta, double kappa) {
  require(kappa > 0.0 && kappa < 1.0, "expected_flip_rate: kappa must lie in (0, 1)");
  const auto alpha_at = [&](double t) {
    return invert_entropy(target_entropy_cdf(t, beta, kappa), n_classes, 1e-14);
  };
  // alpha(u) has unbounded slope at u = 0 and u = 1, which tanh-sinh tolerates.
  // Each linear piece is integrated on its own because of the kink at kappa.
  boost::math::quadrature::tanh_sinh<double> integrator;
  return integrator.integrate(alpha_at, 0.0, kappa) + integrator.integrate(alpha_at, kappa, 1.0);
}

double coherence_cdf(double x, double beta, double kappa) {
  require(kappa > 0.0 && kappa < 1.0, "coherence_cdf: kappa must lie in (0, 1)");
  if (x < 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // coherence <= x  <=>  E(t) >= 1 - x  <=>  t >= E^{-1}(1 - x)
  const double v = 1.0 - x;
  const double t = v < beta ? v * kappa / beta : 1.0 + (v - 1.0) * (1.0 - kappa) / (1.0 - beta);
  return 1.0 - t;
}

double coherence_ks_statistic(std::span<const double> coherence, double beta, double kappa) {
  require(!coherence.empty(), "coherence_ks_statistic: no values");
  std::vector<double> sorted(coherence.begin(), coherence.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = coherence_cdf(sorted[i], beta, kappa);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

std::vector<CorruptionRecord> corrupt_labels(std::span<const std::size_t> clean_labels,
                                             const NoiseSimConfig& config) {
  config.validate();
  const std::uint64_t stream_seed = derive_seed(config.seed, "label-noise");
  std::vector<CorruptionRecord> out;
  out.reserve(clean_labels.size());
  for (std::size_t i = 0; i < clean_labels.size(); ++i) {
    const std::size_t y = clean_labels[i];
    require(y < config.n_classes, "corrupt_dataset: label out of range at index " + std::to_string(i));
    Rng rng = derive_rng(stream_seed, static_cast<std::uint64_t>(i));
    CorruptionRecord rec;
    rec.clean_label = y;
    rec.target_entropy = target_entropy_cdf(uniform01(rng), config.beta, config.kappa);
    rec.alpha = invert_entropy(rec.target_entropy, config.n_classes);
    rec.coherence = 1.0 - rec.target_entropy;
    // Keep with probability 1-alpha, otherwise one of the other N-1 labels uniformly.
    if (uniform01(rng) < rec.alpha) {
      std::uniform_int_distribution<std::size_t> other(0, config.n_classes - 2);
      const std::size_t k = other(rng);
      rec.noisy_label = k < y ? k : k + 1;
    } else {
      rec.noisy_label = y;
    }
    out.push_back(rec);
  }
  return out;
}

CorruptedDataset corrupt_dataset(const toydata::Dataset& clean, const NoiseSimConfig& config) {
  std::vector<std::size_t> labels;
  labels.reserve(clean.size());
  for (const auto& s : clean) labels.push_back(s.y);
  CorruptedDataset out;
  out.records = corrupt_labels(labels, config);
  out.samples = clean;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    out.samples[i].y = out.records[i].noisy_label;
    out.samples[i].coherence = out.records[i].coherence;
  }
  return out;
}

Binning bin_coherence(std::span<const double> scores, std::size_t n_bins) {
  require(n_bins >= 2, "bin_coherence: need at least 2 bins");
  require(!scores.empty(), "bin_coherence: no scores");
  const std::size_t count = scores.size();
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  Binning out;
  out.bin.resize(count);
  out.coherence.resize(count);
  for (std::size_t rank = 0; rank < count; ++rank) {
    const std::size_t b = std::min(rank * n_bins / count, n_bins - 1);
    out.bin[order[rank]] = b;
    out.coherence[order[rank]] = static_cast<double>(b) / static_cast<double>(n_bins - 1);
    if (rank > 0 && scores[order[rank]] == scores[order[rank - 1]]) out.has_ties = true;
  }
  out.degenerate = count > 1 && scores[order.front()] == scores[order.back()];
  return out;
}

std::size_t filtered_bin_cutoff(std::size_t n_bins) { return (3 * n_bins + 7) / 8; }

DatasetView apply_strategy(const toydata::Dataset& annotated, Regime strategy, std::size_t n_bins, bool binned) {
  for (std::size_t i = 0; i < annotated.size(); ++i) {
    require(annotated[i].coherence.has_value(),
            "apply_strategy: sample " + std::to_string(i) + " has no coherence score");
  }
  DatasetView view;
  view.regime = strategy;
  view.source_size = annotated.size();
  view.n_bins = n_bins;
  view.binned = binned;
  if (annotated.empty()) return view;

  std::vector<double> scores;
  scores.reserve(annotated.size());
  for (const auto& s : annotated) scores.push_back(*s.coherence);
  const auto bins = bin_coherence(scores, n_bins);
  view.has_ties = bins.has_ties;
  if (bins.degenerate) spdlog::warn("apply_strategy: all coherence scores are equal, bins are arbitrary");
  const auto score = [&](std::size_t i) { return binned ? bins.coherence[i] : scores[i]; };

  switch (strategy) {
    case Regime::baseline:
      view.samples = annotated;
      for (auto& s : view.samples) s.coherence.reset();
      break;
    case Regime::cad:
      view.samples = annotated;
      for (std::size_t i = 0; i < view.samples.size(); ++i) view.samples[i].coherence = score(i);
      break;
    case Regime::weighted:
      view.samples = annotated;
      for (std::size_t i = 0; i < view.samples.size(); ++i) {
        view.samples[i].weight = score(i);
        view.samples[i].coherence.reset();
      }
      break;
    case Regime::filtered: {
      const std::size_t cutoff = filtered_bin_cutoff(n_bins);
      for (std::size_t i = 0; i < annotated.size(); ++i) {
        if (bins.bin[i] < cutoff) continue;
        auto s = annotated[i];
        s.coherence.reset();
        view.samples.push_back(std::move(s));
      }
      break;
    }
  }
  return view;
}

}  // namespace cadlab::noisesim
