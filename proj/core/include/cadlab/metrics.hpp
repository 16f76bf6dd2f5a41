#pragma once

#include <span>
#include <string>
#include <vector>

#include "cadlab/points.hpp"
#include "cadlab/toydata.hpp"

namespace cadlab::metrics {

struct FrechetResult {
  double distance = 0.0;
  /// A covariance was singular and got 1e-10 * I added.
  bool regularized = false;
  /// Most negative eigenvalue clamped while taking the matrix square root.
  double clamped_eigenvalue = 0.0;
};

/// Frechet distance between Gaussians fitted to two point sets.
FrechetResult frechet_distance(const PointSet& real, const PointSet& fake);

struct Prdc {
  double precision = 0.0;
  double recall = 0.0;
  double density = 0.0;
  double coverage = 0.0;
};

/// k-nearest-neighbour manifold metrics with exact pairwise distances.
Prdc prdc(const PointSet& real, const PointSet& fake, std::size_t k = 5);

/// Fraction of points the Bayes classifier assigns to their prompted label.
double accuracy(const PointSet& points, std::span<const std::size_t> prompted,
                const toydata::RingMixtureSpec& oracle);

/// exp(mean KL(p(y|x) || p(y))) with Bayes posteriors; lies in [1, N].
double inception_score_analog(const PointSet& points, const toydata::RingMixtureSpec& oracle);

struct MetricsReport {
  double fd = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double density = 0.0;
  double coverage = 0.0;
  double accuracy = 0.0;
  double is_analog = 1.0;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
  std::size_t k = 5;
  bool fd_regularized = false;
};

/// Full battery: generated points with prompted labels against clean reference data.
MetricsReport evaluate(const PointSet& reference, const PointSet& generated,
                       std::span<const std::size_t> prompted, const toydata::RingMixtureSpec& oracle,
                       std::size_t k = 5);

/// Frozen column order of the metrics CSV.
std::string report_csv_header();
std::string report_csv_row(const MetricsReport& report);
std::string report_text(const MetricsReport& report);

}  // namespace cadlab::metrics
