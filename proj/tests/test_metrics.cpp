#include <doctest.h>

#include <cmath>

#include "cadlab/error.hpp"
#include "cadlab/metrics.hpp"
#include "cadlab/rng.hpp"

using namespace cadlab;
using namespace cadlab::metrics;

namespace {

const toydata::RingMixtureSpec kRing{8, 4.0, 0.4, 0};

PointSet gaussian_cloud(std::size_t n, double sx, double sy, std::uint64_t seed) {
  Rng rng(seed);
  PointSet p(2);
  for (std::size_t i = 0; i < n; ++i) {
    const double v[2] = {sx * standard_normal(rng), sy * standard_normal(rng) + 0.3 * sx};
    p.push_back(v);
  }
  return p;
}

PointSet shifted(const PointSet& p, double dx, double dy) {
  PointSet out = p;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.coords[2 * i] += dx;
    out.coords[2 * i + 1] += dy;
  }
  return out;
}

PointSet at_centers(std::span<const std::size_t> labels) {
  PointSet p(2);
  for (auto y : labels) p.push_back(kRing.center(y));
  return p;
}

// Ten fixed points; density for fake == real at k = 3 is 4/3 by brute force.
const PointSet kTen(2, {0.0, 0.0, 1.0, 0.2, 0.3, 1.1, 2.0, 2.0, -1.0, 0.5,
                        0.7, -0.8, 1.5, 1.0, -0.4, -1.2, 2.5, 0.1, -1.5, -0.3});

}  // namespace

TEST_CASE("frechet distance closed forms") {
  const auto real = gaussian_cloud(500, 1.0, 2.0, 1);
  SUBCASE("identical sets") {
    const auto r = frechet_distance(real, real);
    CHECK(r.distance <= 1e-8);
    CHECK_FALSE(r.regularized);
  }
  SUBCASE("mean offset only") {
    const auto r = frechet_distance(real, shifted(real, 3.0, -4.0));
    CHECK(r.distance == doctest::Approx(25.0).epsilon(1e-10));
    CHECK(std::abs(r.distance - 25.0) <= 1e-8);
  }
  SUBCASE("one-dimensional scalar case") {
    // mean 0, variance 1 against mean 1, variance 4 (unbiased estimates).
    const PointSet a(1, {-1.0, 0.0, 1.0});
    const PointSet b(1, {-1.0, 1.0, 3.0});
    CHECK(std::abs(frechet_distance(a, b).distance - 2.0) <= 1e-8);
  }
  SUBCASE("symmetric") {
    const auto other = gaussian_cloud(400, 2.0, 0.5, 2);
    CHECK(frechet_distance(real, other).distance ==
          doctest::Approx(frechet_distance(other, real).distance).epsilon(1e-10));
  }
  SUBCASE("degenerate covariance is regularized and flagged") {
    PointSet line(2);
    for (int i = 0; i < 10; ++i) {
      const double v[2] = {static_cast<double>(i), 2.0 * i};
      line.push_back(v);
    }
    const auto r = frechet_distance(line, real);
    CHECK(r.regularized);
    CHECK(std::isfinite(r.distance));
  }
  CHECK_THROWS_AS(frechet_distance(PointSet(2, {0, 0, 1, 1}), real), ContractViolation);
}

TEST_CASE("prdc on identical and disjoint sets") {
  const auto same = prdc(kTen, kTen, 3);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.coverage == 1.0);
  CHECK(same.density == doctest::Approx(4.0 / 3.0).epsilon(1e-15));

  const auto far = prdc(kTen, shifted(kTen, 1e6, 1e6), 3);
  CHECK(far.precision == 0.0);
  CHECK(far.recall == 0.0);
  CHECK(far.density == 0.0);
  CHECK(far.coverage == 0.0);
}

TEST_CASE("prdc: fake points at a real location are precise") {
  // The smallest admissible fake set (k + 1 points), all on one real point.
  PointSet fake(2);
  for (int i = 0; i < 4; ++i) fake.push_back(kTen[6]);
  const auto r = prdc(kTen, fake, 3);
  CHECK(r.precision == 1.0);
  CHECK(r.coverage >= 0.1);
  CHECK(r.recall == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("prdc ranges and contract") {
  const auto a = gaussian_cloud(200, 1.0, 1.0, 5);
  const auto b = gaussian_cloud(150, 1.5, 0.7, 6);
  const auto r = prdc(a, b, 5);
  for (double v : {r.precision, r.recall, r.coverage}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(r.density >= 0.0);
  CHECK_THROWS_AS(prdc(kTen, kTen, 10), ContractViolation);
  CHECK_THROWS_AS(prdc(kTen, PointSet(2, {0, 0, 1, 1, 2, 2}), 3), ContractViolation);
  CHECK_THROWS_AS(prdc(kTen, kTen, 0), ContractViolation);
}

TEST_CASE("accuracy") {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 16; ++i) labels.push_back(i % 8);
  CHECK(accuracy(at_centers(labels), labels, kRing) == 1.0);

  // Half at the prompted center, half at the class-0 center.
  PointSet mixed(2);
  for (std::size_t i = 0; i < 8; ++i) mixed.push_back(kRing.center(i));
  for (std::size_t i = 0; i < 8; ++i) mixed.push_back(kRing.center(0));
  CHECK(accuracy(mixed, labels, kRing) == 0.5625);

  // Labels independent of the points.
  constexpr std::size_t n = 16000;
  const auto cloud = gaussian_cloud(n, 5.0, 5.0, 8);
  std::vector<std::size_t> prompted(n);
  Rng rng(9);
  std::uniform_int_distribution<std::size_t> pick(0, 7);
  for (auto& y : prompted) y = pick(rng);
  const double acc = accuracy(cloud, prompted, kRing);
  CHECK(std::abs(acc - 0.125) <= 5.0 * std::sqrt(0.125 * 0.875 / n));

  CHECK_THROWS_AS(accuracy(PointSet(2), {}, kRing), ContractViolation);
  CHECK_THROWS_AS(accuracy(mixed, std::span(labels).first(3), kRing), ContractViolation);
}

TEST_CASE("inception score analog") {
  std::vector<std::size_t> one(50, 3);
  CHECK(inception_score_analog(at_centers(one), kRing) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < 80; ++i) all.push_back(i % 8);
  // Independent oracle: near one-hot posteriors at the centers.
  CHECK(inception_score_analog(at_centers(all), kRing) == doctest::Approx(7.999999999907695).epsilon(1e-10));

  const auto origin = gaussian_cloud(500, 1e-3, 1e-3, 3);
  CHECK(inception_score_analog(origin, kRing) == doctest::Approx(1.0).epsilon(1e-3));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto cloud = gaussian_cloud(100, 0.5 + seed, 0.1 + 0.3 * seed, seed);
    const double is = inception_score_analog(cloud, kRing);
    CHECK(is >= 1.0);
    CHECK(is <= 8.0);
  }
}

TEST_CASE("evaluate fills every field and the csv row matches the header") {
  const auto ref = gaussian_cloud(100, 3.0, 3.0, 11);
  std::vector<std::size_t> labels(100);
  for (std::size_t i = 0; i < 100; ++i) labels[i] = i % 8;
  const auto r = evaluate(ref, ref, labels, kRing, 5);
  CHECK(r.fd <= 1e-8);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.coverage == 1.0);
  CHECK(r.n_real == 100);
  CHECK(r.n_fake == 100);
  const auto header = report_csv_header();
  const auto row = report_csv_row(r);
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
  CHECK(report_text(r).find("Frechet") != std::string::npos);
}
