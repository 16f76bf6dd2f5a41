#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace cadlab::toydata {

/// N isotropic Gaussians with equal priors, centered on a ring.
struct RingMixtureSpec {
  std::size_t n_classes = 8;
  double radius = 4.0;
  double sigma = 0.4;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<double> center(std::size_t k) const;
};

struct AnnotatedSample {
  std::vector<double> x;
  std::size_t y = 0;
  /// Present only when produced by the noise simulator.
  std::optional<double> coherence;
  std::optional<double> weight;
};

using Dataset = std::vector<AnnotatedSample>;

/// n draws with uniform labels; coherence 1.
Dataset generate(const RingMixtureSpec& spec, std::size_t n);

struct Classification {
  std::size_t label = 0;
  std::vector<double> posterior;
};

/// Exact Bayes classifier for the mixture (nearest center; ties to the smallest id).
Classification bayes_classify(std::span<const double> x, const RingMixtureSpec& spec);

/// Per-dimension affine map to zero mean and unit variance.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Dataset& data);
  std::vector<double> apply(std::span<const double> x) const;
  std::vector<double> invert(std::span<const double> z) const;
};

}  // namespace cadlab::toydata
