#include "cadlab/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cadlab/error.hpp"
#include "cadlab/format.hpp"

namespace cadlab::metrics {

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Gaussian {
  Vector mean;
  Matrix cov;
};

Gaussian fit_gaussian(const PointSet& points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto d = static_cast<Eigen::Index>(points.dim);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(points.coords.data(), n, d);
  Gaussian g;
  g.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return g;
}

// Symmetric PSD square root; negative eigenvalues are clamped to zero.
Matrix sqrt_psd(const Matrix& m, double& most_negative) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (m + m.transpose()));
  Vector ev = solver.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    most_negative = std::min(most_negative, ev[i]);
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return solver.eigenvectors() * ev.asDiagonal() * solver.eigenvectors().transpose();
}

bool regularize_if_singular(Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov, Eigen::EigenvaluesOnly);
  const double smallest = solver.eigenvalues().minCoeff();
  const double largest = std::max(solver.eigenvalues().maxCoeff(), 0.0);
  if (smallest > 1e-12 * std::max(largest, 1.0)) return false;
  cov += 1e-10 * Matrix::Identity(cov.rows(), cov.cols());
  return true;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Squared distance from every point to its k-th nearest neighbour (self excluded).
std::vector<double> knn_radii_sq(const PointSet& points, std::size_t k) {
  const std::size_t n = points.size();
  std::vector<double> radii(n);
  std::vector<double> dist;
  dist.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dist.push_back(squared_distance(points[i], points[j]));
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    radii[i] = dist[k - 1];
  }
  return radii;
}

}  // namespace

FrechetResult frechet_distance(const PointSet& real, const PointSet& fake) {
  require(real.dim == fake.dim, "frechet_distance: point sets have different dimensions");
  require(real.size() >= real.dim + 1 && fake.size() >= fake.dim + 1,
          "frechet_distance: each set needs at least d+1 points");
  auto a = fit_gaussian(real);
  auto b = fit_gaussian(fake);
  FrechetResult result;
  result.regularized = regularize_if_singular(a.cov);
  result.regularized = regularize_if_singular(b.cov) || result.regularized;

  double most_negative = 0.0;
  const Matrix root_a = sqrt_psd(a.cov, most_negative);
  const Matrix product = root_a * b.cov * root_a;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (product + product.transpose()), Eigen::EigenvaluesOnly);
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
    const double ev = solver.eigenvalues()[i];
    most_negative = std::min(most_negative, ev);
    trace_sqrt += std::sqrt(std::max(ev, 0.0));
  }
  result.clamped_eigenvalue = most_negative;
  if (most_negative < -1e-8) {
    spdlog::warn("frechet_distance: clamped eigenvalue {} while taking a matrix square root", most_negative);
  }
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
  result.distance = std::max(value, 0.0);
  return result;
}

Prdc prdc(const PointSet& real, const PointSet& fake, std::size_t k) {
  require(real.dim == fake.dim, "prdc: point sets have different dimensions");
  require(k >= 1, "prdc: k must be positive");
  require(k < real.size() && k < fake.size(), "prdc: k must be smaller than both set sizes");
  const auto real_radii = knn_radii_sq(real, k);
  const auto fake_radii = knn_radii_sq(fake, k);

  std::vector<char> real_covered(real.size(), 0);
  std::vector<char> real_recalled(real.size(), 0);
  std::size_t precise = 0;
  std::size_t density_hits = 0;
  for (std::size_t j = 0; j < fake.size(); ++j) {
    bool inside_any = false;
    for (std::size_t i = 0; i < real.size(); ++i) {
      const double d = squared_distance(real[i], fake[j]);
      if (d <= real_radii[i]) {
        inside_any = true;
        ++density_hits;
        real_covered[i] = 1;
      }
      if (d <= fake_radii[j]) real_recalled[i] = 1;
    }
    if (inside_any) ++precise;
  }
  Prdc out;
  const auto n_real = static_cast<double>(real.size());
  const auto n_fake = static_cast<double>(fake.size());
  out.precision = static_cast<double>(precise) / n_fake;
  out.recall = static_cast<double>(std::count(real_recalled.begin(), real_recalled.end(), 1)) / n_real;
  out.density = static_cast<double>(density_hits) / (static_cast<double>(k) * n_fake);
  out.coverage = static_cast<double>(std::count(real_covered.begin(), real_covered.end(), 1)) / n_real;
  return out;
}

double accuracy(const PointSet& points, std::span<const std::size_t> prompted, const toydata::RingMixtureSpec& oracle) {
  require(!points.empty(), "accuracy: no points");
  require(points.size() == prompted.size(), "accuracy: need one prompted label per point");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (toydata::bayes_classify(points[i], oracle).label == prompted[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(points.size());
}

double inception_score_analog(const PointSet& points, const toydata::RingMixtureSpec& oracle) {
  require(points.size() >= 2, "inception score: need at least 2 points");
  const std::size_t n = oracle.n_classes;
  std::vector<std::vector<double>> post;
  post.reserve(points.size());
  std::vector<double> marginal(n, 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    post.push_back(toydata::bayes_classify(points[i], oracle).posterior);
    for (std::size_t k = 0; k < n; ++k) marginal[k] += post.back()[k];
  }
  for (auto& m : marginal) m /= static_cast<double>(points.size());
  double mean_kl = 0.0;
  for (const auto& p : post) {
    double kl = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (p[k] > 0.0) kl += p[k] * std::log(p[k] / marginal[k]);
    }
    mean_kl += kl;
  }
  mean_kl /= static_cast<double>(points.size());
  return std::clamp(std::exp(mean_kl), 1.0, static_cast<double>(n));
}

MetricsReport evaluate(const PointSet& reference, const PointSet& generated, std::span<const std::size_t> prompted,
                       const toydata::RingMixtureSpec& oracle, std::size_t k) {
  MetricsReport r;
  const auto fd = frechet_distance(reference, generated);
  r.fd = fd.distance;
  r.fd_regularized = fd.regularized;
  const auto m = prdc(reference, generated, k);
  r.precision = m.precision;
  r.recall = m.recall;
  r.density = m.density;
  r.coverage = m.coverage;
  r.accuracy = accuracy(generated, prompted, oracle);
  r.is_analog = inception_score_analog(generated, oracle);
  r.n_real = reference.size();
  r.n_fake = generated.size();
  r.k = k;
  return r;
}

std::string report_csv_header() {
  return "fd,is_analog,accuracy,precision,recall,density,coverage,n_real,n_fake,k,fd_regularized";
}

std::string report_csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os << format_double(r.fd) << ',' << format_double(r.is_analog) << ',' << format_double(r.accuracy) << ','
     << format_double(r.precision) << ',' << format_double(r.recall) << ',' << format_double(r.density) << ','
     << format_double(r.coverage) << ',' << r.n_real << ',' << r.n_fake << ',' << r.k << ','
     << (r.fd_regularized ? 1 : 0);
  return os.str();
}

std::string report_text(const MetricsReport& r) {
  std::ostringstream os;
  os << "Frechet distance (raw features): " << format_double(r.fd) << (r.fd_regularized ? " (regularized)" : "")
     << '\n'
     << "Inception score analog:         " << format_double(r.is_analog) << '\n'
     << "Conditional accuracy:           " << format_double(r.accuracy) << '\n'
     << "Precision / Recall:             " << format_double(r.precision) << " / " << format_double(r.recall) << '\n'
     << "Density / Coverage:             " << format_double(r.density) << " / " << format_double(r.coverage) << '\n'
     << "Samples (real / generated), k:  " << r.n_real << " / " << r.n_fake << ", k=" << r.k << '\n';
  return os.str();
}

}  // namespace cadlab::metrics
