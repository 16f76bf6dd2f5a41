#pragma once

// Annotation-noise simulation.
//
// Each clean sample draws t ~ U[0,1], maps it to a target normalized entropy
// u = E_{beta,kappa}(t), recovers the matching error probability alpha = E^-1(u)
// and resamples its label from the uniform-misclassification model p_{y,alpha}.
// The resulting coherence is 1 - u.

#include <cstdint>
#include <span>
#include <vector>

#include "cadlab/regime.hpp"
#include "cadlab/toydata.hpp"

namespace cadlab::noisesim {

struct NoiseSimConfig {
  std::size_t n_classes = 10;
  double beta = 0.5;
  double kappa = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CorruptionRecord {
  std::size_t clean_label = 0;
  std::size_t noisy_label = 0;
  double target_entropy = 0.0;  // u
  double alpha = 0.0;
  double coherence = 1.0;  // 1 - u
};

/// Largest admissible error probability, (N-1)/N.
double max_alpha(std::size_t n_classes);

/// p_{y,alpha}: 1-alpha on y, alpha/(N-1) on every other label.
std::vector<double> flip_distribution(std::size_t y, double alpha, std::size_t n_classes);

/// Normalized entropy of p_{y,alpha}, in [0,1].
double entropy_of_alpha(double alpha, std::size_t n_classes);

/// Bisection inverse of entropy_of_alpha; |E(alpha) - u| <= tol.
double invert_entropy(double u, std::size_t n_classes, double tol = 1e-10);

/// Piecewise-linear target entropy: t*beta/kappa below kappa, linear to 1 above.
double target_entropy_cdf(double t, double beta, double kappa);

/// Probability that a corrupted label differs from the clean one:
/// the integral of alpha(E_{beta,kappa}(t)) over t in [0,1], by tanh-sinh quadrature.
double expected_flip_rate(std::size_t n_classes, double beta, double kappa);

/// P(coherence <= x) when coherence = 1 - E_{beta,kappa}(t) with t uniform.
double coherence_cdf(double x, double beta, double kappa);

/// Kolmogorov-Smirnov distance between the empirical coherence distribution and coherence_cdf.
double coherence_ks_statistic(std::span<const double> coherence, double beta, double kappa);

/// Corrupts each sample independently with a per-index random stream.
std::vector<CorruptionRecord> corrupt_labels(std::span<const std::size_t> clean_labels,
                                             const NoiseSimConfig& config);

/// Dataset-level wrapper: returns samples relabelled with noisy labels and coherence.
struct CorruptedDataset {
  toydata::Dataset samples;
  std::vector<CorruptionRecord> records;
};
CorruptedDataset corrupt_dataset(const toydata::Dataset& clean, const NoiseSimConfig& config);

struct Binning {
  std::vector<std::size_t> bin;   // per input, in original order
  std::vector<double> coherence;  // bin / (n_bins - 1)
  bool has_ties = false;
  bool degenerate = false;  // all scores equal
};

/// Equal-population quantile bins over score rank; ties broken by input index.
Binning bin_coherence(std::span<const double> scores, std::size_t n_bins);

/// Number of lowest bins removed by the filtered strategy: ceil(3 * n_bins / 8).
std::size_t filtered_bin_cutoff(std::size_t n_bins);

struct DatasetView {
  Regime regime = Regime::cad;
  toydata::Dataset samples;
  std::size_t source_size = 0;
  std::size_t n_bins = 0;
  /// cad / weighted use the normalized bin index instead of the raw score.
  bool binned = false;
  bool has_ties = false;
};

/// Builds the training view for a regime; every sample must carry coherence.
/// With `binned`, cad conditions on (and weighted weighs by) bin / (n_bins - 1).
DatasetView apply_strategy(const toydata::Dataset& annotated, Regime strategy, std::size_t n_bins = 8,
                           bool binned = false);

}  // namespace cadlab::noisesim
