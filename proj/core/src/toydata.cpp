#include "cadlab/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cadlab/error.hpp"
#include "cadlab/rng.hpp"

namespace cadlab::toydata {

void RingMixtureSpec::validate() const {
  require(n_classes >= 2, "ring mixture: need at least 2 classes");
  require(radius > 0.0, "ring mixture: radius must be positive");
  require(sigma > 0.0, "ring mixture: sigma must be positive");
}

std::vector<double> RingMixtureSpec::center(std::size_t k) const {
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_classes);
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

Dataset generate(const RingMixtureSpec& spec, std::size_t n) {
  spec.validate();
  Rng rng = derive_rng(spec.seed, "ring-mixture");
  std::uniform_int_distribution<std::size_t> label(0, spec.n_classes - 1);
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    AnnotatedSample s;
    s.y = label(rng);
    s.x = spec.center(s.y);
    for (auto& v : s.x) v += spec.sigma * standard_normal(rng);
    s.coherence = 1.0;
    out.push_back(std::move(s));
  }
  return out;
}

Classification bayes_classify(std::span<const double> x, const RingMixtureSpec& spec) {
  spec.validate();
  require(x.size() == 2, "bayes_classify: expected a 2-D point");
  std::vector<double> log_lik(spec.n_classes);
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    const auto c = spec.center(k);
    const double d2 = (x[0] - c[0]) * (x[0] - c[0]) + (x[1] - c[1]) * (x[1] - c[1]);
    log_lik[k] = -d2 / (2.0 * spec.sigma * spec.sigma);
  }
  Classification out;
  // Near-equal scores (rounding in the centers) count as ties; ties go to the smallest id.
  for (std::size_t k = 1; k < spec.n_classes; ++k) {
    const double best = log_lik[out.label];
    if (log_lik[k] > best + 1e-12 * std::max(1.0, std::abs(best))) out.label = k;
  }
  const double top = log_lik[out.label];
  out.posterior.resize(spec.n_classes);
  double z = 0.0;
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    out.posterior[k] = std::exp(log_lik[k] - top);
    z += out.posterior[k];
  }
  for (auto& p : out.posterior) p /= z;
  return out;
}

Standardizer Standardizer::fit(const Dataset& data) {
  require(!data.empty(), "standardizer: cannot fit on an empty dataset");
  const std::size_t dim = data.front().x.size();
  Standardizer s;
  s.mean.assign(dim, 0.0);
  s.scale.assign(dim, 0.0);
  for (const auto& p : data) {
    for (std::size_t k = 0; k < dim; ++k) s.mean[k] += p.x[k];
  }
  for (auto& m : s.mean) m /= static_cast<double>(data.size());
  for (const auto& p : data) {
    for (std::size_t k = 0; k < dim; ++k) s.scale[k] += (p.x[k] - s.mean[k]) * (p.x[k] - s.mean[k]);
  }
  for (auto& v : s.scale) {
    v = std::sqrt(v / static_cast<double>(data.size()));
    if (!(v > 0.0)) v = 1.0;
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> x) const {
  std::vector<double> z(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) z[k] = (x[k] - mean[k]) / scale[k];
  return z;
}

std::vector<double> Standardizer::invert(std::span<const double> z) const {
  std::vector<double> x(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) x[k] = z[k] * scale[k] + mean[k];
  return x;
}

}  // namespace cadlab::toydata
