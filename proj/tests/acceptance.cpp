// Acceptance run: one PASS/FAIL line per criterion. Thresholds are fixed here and
// never read from the environment. Exit status is non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "cadlab/checkpoint.hpp"
#include "cadlab/cli/commands.hpp"
#include "cadlab/cli/manifest.hpp"
#include "cadlab/denoiser.hpp"
#include "cadlab/diffusion.hpp"
#include "cadlab/metrics.hpp"
#include "cadlab/noisesim.hpp"
#include "cadlab/rng.hpp"
#include "cadlab/toydata.hpp"
#include "support/gradcheck.hpp"

using namespace cadlab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// ---------------------------------------------------------------------------
// Pinned settings and thresholds

constexpr std::size_t kClasses = 8;
constexpr double kRadius = 4.0;
constexpr double kSigma = 0.4;
constexpr double kBeta = 0.5;
constexpr double kKappa = 0.5;

constexpr std::size_t kTrainPoints = 200000;
constexpr std::int64_t kTrainSteps = 30000;   // main CAD model
constexpr std::int64_t kRegimeSteps = 5000;   // each of the 9 regime-comparison models
constexpr double kEmaDecay = 0.999;
constexpr std::size_t kSamplerSteps = 250;
constexpr double kSamplerEta = 1.0;

constexpr std::size_t kAccSamples = 2000;      // per coherence value (criterion 7)
constexpr std::size_t kFdSamples = 50000;      // per coherence value (criterion 8)
constexpr std::size_t kFdCleanReference = 200000;  // criterion 8; keeps the FD noise floor near 4e-4
constexpr std::size_t kFdReference = 20000;    // fresh clean points
constexpr std::size_t kRegimeSamples = 2000;   // per model (criterion 9)
constexpr std::size_t kGuidanceSamples = 4000; // per omega (criterion 10)

constexpr double kGradTolerance = 1e-4;
constexpr double kFlipRateBand = 0.01;
constexpr double kKsBound = 0.01;
constexpr double kAccAtOne = 0.80;
constexpr double kAccAtZeroBand = 0.10;
constexpr double kMonotoneBand = 0.05;
constexpr double kFdRatio = 2.0;
constexpr double kRegimeAccGap = 0.05;
constexpr double kSpearmanMin = 0.8;
constexpr double kCollapseRatio = 0.3;
constexpr double kClosedFormTol = 1e-8;
constexpr double kTrainBudgetSeconds = 600.0;
constexpr double kCliBudgetSeconds = 1200.0;

// ---------------------------------------------------------------------------
// Reporting

int g_failed = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failed;
}

void note(const std::string& text) {
  std::printf("       %s\n", text.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

// Runs one criterion; an escaping exception is a failure, not a crash.
void guarded(int id, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, false, std::string("threw: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Shared experiment

toydata::RingMixtureSpec ring(std::uint64_t seed) { return {kClasses, kRadius, kSigma, seed}; }

noisesim::NoiseSimConfig noise_config(std::uint64_t seed) {
  noisesim::NoiseSimConfig cfg;
  cfg.n_classes = kClasses;
  cfg.beta = kBeta;
  cfg.kappa = kKappa;
  cfg.seed = seed;
  return cfg;
}

struct Trained {
  denoiser::Denoiser model;
  toydata::Standardizer standardizer;
  double loss_first = 0.0;
  double loss_last = 0.0;
  double seconds = 0.0;
};

// Corrupted training set for one seed, standardized on itself.
struct Corpus {
  std::vector<toydata::AnnotatedSample> samples;
  toydata::Standardizer standardizer;
};

Corpus make_corpus(std::uint64_t seed) {
  const auto clean = toydata::generate(ring(derive_seed(seed, "data")), kTrainPoints);
  auto noisy = noisesim::corrupt_dataset(clean, noise_config(derive_seed(seed, "noise"))).samples;
  Corpus c{std::move(noisy), toydata::Standardizer::fit(clean)};
  for (auto& s : c.samples) s.x = c.standardizer.apply(s.x);
  return c;
}

Trained train_model(const Corpus& corpus, Regime regime, std::uint64_t seed, std::int64_t steps) {
  const auto view = noisesim::apply_strategy(corpus.samples, regime, 8);
  denoiser::DenoiserConfig dc;
  dc.n_classes = kClasses;
  dc.regime = regime;
  diffusion::TrainConfig tc;
  tc.steps = steps;
  tc.seed = derive_seed(seed, "train");
  tc.regime = regime;
  tc.ema_decay = kEmaDecay;
  tc.lr = {3e-3, 500, steps};
  tc.log_every = 100;
  const auto start = Clock::now();
  auto result = diffusion::train(denoiser::Denoiser(dc, derive_seed(seed, "init")), view, tc);
  Trained t{std::move(result.ema), corpus.standardizer, 0.0, 0.0, seconds_since(start)};
  t.loss_first = result.history.front().ema_loss;
  t.loss_last = result.history.back().ema_loss;
  return t;
}

diffusion::SamplerOptions sampler(double eta = kSamplerEta) {
  diffusion::SamplerOptions o;
  o.steps = kSamplerSteps;
  o.eta = eta;
  return o;
}

PointSet draw(const Trained& t, std::span<const std::size_t> labels, double c, const diffusion::GuidanceSpec& g,
              std::uint64_t seed) {
  const std::vector<double> coherence(labels.size(), c);
  const auto z = diffusion::sample(t.model, labels, coherence, g, sampler(), seed);
  PointSet out(2);
  for (std::size_t i = 0; i < z.size(); ++i) out.push_back(t.standardizer.invert(z[i]));
  return out;
}

std::vector<std::size_t> balanced_labels(std::size_t n) {
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i % kClasses;
  return y;
}

// Labels drawn from the uniform class prior, as the clean data draws them.
std::vector<std::size_t> prior_labels(std::size_t n, std::uint64_t seed) {
  Rng rng = derive_rng(seed, "prior-labels");
  std::uniform_int_distribution<std::size_t> pick(0, kClasses - 1);
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = pick(rng);
  return y;
}

PointSet clean_reference(std::size_t n, std::uint64_t seed) {
  PointSet p(2);
  for (const auto& s : toydata::generate(ring(seed), n)) p.push_back(s.x);
  return p;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return rank;
}

// Pearson correlation of average ranks; ties share their mean rank.
double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return (saa == 0.0 || sbb == 0.0) ? 0.0 : sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Criteria

void noise_model_math() {
  const auto start = Clock::now();
  bool increasing = true;
  double worst = 0.0;
  bool exact_ends = true;
  for (std::size_t n : {2u, 8u, 10u}) {
    double prev = -1.0;
    for (int i = 0; i <= 1000; ++i) {
      const double e = noisesim::entropy_of_alpha(noisesim::max_alpha(n) * i / 1000.0, n);
      increasing = increasing && e > prev;
      prev = e;
      const double u = i / 1000.0;
      worst = std::max(worst, std::abs(noisesim::entropy_of_alpha(noisesim::invert_entropy(u, n), n) - u));
    }
    exact_ends = exact_ends && noisesim::entropy_of_alpha(0.0, n) == 0.0 &&
                 noisesim::entropy_of_alpha(static_cast<double>(n - 1) / static_cast<double>(n), n) == 1.0;
  }
  const double secs = seconds_since(start);
  report(1, increasing && worst <= 1e-9 && exact_ends && secs < 1.0,
         "E increasing=" + std::string(increasing ? "yes" : "no") + ", max |E(E^-1(u))-u|=" + fmt(worst, 3) +
             " (<=1e-9), exact ends=" + (exact_ends ? "yes" : "no") + ", " + fmt(secs, 3) + " s (<1)");
}

void corruption_statistics() {
  std::vector<std::size_t> labels(100000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 10;
  auto cfg = noise_config(2024);
  cfg.n_classes = 10;
  const auto records = noisesim::corrupt_labels(labels, cfg);
  std::size_t flips = 0;
  std::vector<double> coherence;
  for (const auto& r : records) {
    flips += r.noisy_label != r.clean_label;
    coherence.push_back(r.coherence);
  }
  const double rate = static_cast<double>(flips) / static_cast<double>(records.size());
  const double oracle = noisesim::expected_flip_rate(10, kBeta, kKappa);
  const double ks = noisesim::coherence_ks_statistic(coherence, kBeta, kKappa);
  report(2, std::abs(rate - oracle) <= kFlipRateBand && ks < kKsBound,
         "flip rate " + fmt(rate, 5) + " vs oracle " + fmt(oracle, 5) + " (band " + fmt(kFlipRateBand) +
             "), KS " + fmt(ks, 3) + " (<" + fmt(kKsBound) + ")");
}

void autodiff() {
  double worst = 0.0;
  std::size_t entries = 0;
  for (std::uint64_t draw = 0; draw < 10; ++draw) {
    denoiser::DenoiserConfig cfg;
    cfg.embed_dim = 4;
    cfg.width = 8;
    cfg.depth = 2;
    cfg.layout = draw % 2 == 0 ? denoiser::ConditionLayout::merged : denoiser::ConditionLayout::separate;
    denoiser::Denoiser model(cfg, 100 + draw);
    Rng rng = derive_rng(draw, "gradcheck");
    std::vector<double> x(10), w(10);
    for (auto& v : x) v = standard_normal(rng);
    for (auto& v : w) v = standard_normal(rng);
    std::vector<double> t, c;
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < 5; ++i) {
      t.push_back(uniform01(rng));
      c.push_back(uniform01(rng));
      y.push_back((draw + i) % kClasses);
    }
    const auto xt = nd::Tensor::from({5, 2}, x);
    const auto weights = nd::Tensor::from({5, 2}, w);
    const auto r = testing::check_gradients(model.params(), [&] {
      return nd::sum(model.predict_eps(xt, t, y, c) * weights);
    });
    worst = std::max(worst, r.max_relative_error);
    entries += r.entries;
  }
  report(3, worst <= kGradTolerance,
         "max relative error " + fmt(worst, 3) + " over " + std::to_string(entries) +
             " entries, 10 draws (<=" + fmt(kGradTolerance) + ")");
}

void variance_preservation() {
  const auto data = toydata::generate(ring(77), 100000);
  const auto st = toydata::Standardizer::fit(data);
  std::vector<double> x;
  x.reserve(2 * data.size());
  for (const auto& s : data) {
    const auto z = st.apply(s.x);
    x.insert(x.end(), z.begin(), z.end());
  }
  const auto x0 = nd::Tensor::from({data.size(), 2}, x);
  bool ok = true;
  double worst_z = 0.0;
  for (int k = 1; k <= 9; ++k) {
    const double t = k / 10.0;
    Rng rng = derive_rng(static_cast<std::uint64_t>(k), "variance");
    std::vector<double> e(x.size());
    for (auto& v : e) v = standard_normal(rng);
    const auto xt = diffusion::corrupt(x0, t, nd::Tensor::from({data.size(), 2}, e), {});
    for (std::size_t col = 0; col < 2; ++col) {
      double m = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) m += xt.at(i, col);
      m /= static_cast<double>(data.size());
      double m2 = 0.0, m4 = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double d = xt.at(i, col) - m;
        m2 += d * d;
        m4 += d * d * d * d;
      }
      const double n = static_cast<double>(data.size());
      m2 /= n;
      m4 /= n;
      const double se = std::sqrt((m4 - m2 * m2) / n);
      const double z = std::abs(m2 - 1.0) / se;
      worst_z = std::max(worst_z, z);
      ok = ok && z <= 3.0;
    }
  }
  report(4, ok, "worst |Var(X_t)-1| = " + fmt(worst_z, 3) + " standard errors over t in {0.1..0.9}, 1e5 draws (<=3)");
}

void guidance_algebra() {
  const denoiser::Denoiser model(denoiser::DenoiserConfig{}, 31);
  Rng rng = derive_rng(5, "guidance");
  std::vector<double> x(32);
  for (auto& v : x) v = standard_normal(rng);
  const auto xt = nd::Tensor::from({16, 2}, x);
  std::vector<double> t, c0(16, 0.37), ones(16, 1.0);
  std::vector<std::size_t> y;
  for (std::size_t i = 0; i < 16; ++i) {
    t.push_back(uniform01(rng));
    y.push_back(i % kClasses);
  }
  const auto at_zero = diffusion::guided_eps(model, xt, t, y, c0, {diffusion::GuidanceMode::ca_cfg, 0.0});
  const auto cond = model.predict_eps(xt, t, y, ones);
  const bool bitwise = std::equal(at_zero.data().begin(), at_zero.data().end(), cond.data().begin());

  double worst = 0.0;
  const std::vector<double> omegas{0.0, 1.5, 4.0};
  std::vector<nd::Tensor> g;
  for (double w : omegas) g.push_back(diffusion::guided_eps(model, xt, t, y, c0, {diffusion::GuidanceMode::ca_cfg, w}));
  for (std::size_t i = 0; i < g[0].size(); ++i) {
    // Linear interpolation of the outer two points must hit the middle one.
    const double a = g[0].data()[i], b = g[1].data()[i], d = g[2].data()[i];
    const double lam = (omegas[1] - omegas[0]) / (omegas[2] - omegas[0]);
    const double scale = std::max({std::abs(a), std::abs(b), std::abs(d), 1.0});
    worst = std::max(worst, std::abs(a + lam * (d - a) - b) / scale);
  }
  report(5, bitwise && worst <= 1e-13,
         "ca-cfg(w=0) bitwise equal to c=1 prediction: " + std::string(bitwise ? "yes" : "no") +
             ", collinearity residual " + fmt(worst, 3) + " (<=1e-13)");
}

void determinism() {
  denoiser::DenoiserConfig dc;
  dc.embed_dim = 16;
  dc.width = 32;
  dc.depth = 2;
  const auto clean = toydata::generate(ring(3), 2000);
  auto noisy = noisesim::corrupt_dataset(clean, noise_config(4)).samples;
  const auto st = toydata::Standardizer::fit(clean);
  for (auto& s : noisy) s.x = st.apply(s.x);
  const auto view = noisesim::apply_strategy(noisy, Regime::cad, 8);
  diffusion::TrainConfig tc;
  tc.steps = 200;
  tc.lr = {3e-3, 20, 200};
  tc.seed = 9;
  const auto a = diffusion::train(denoiser::Denoiser(dc, 1), view, tc);
  const auto b = diffusion::train(denoiser::Denoiser(dc, 1), view, tc);
  const auto digest = [](const denoiser::Denoiser& m) {
    const auto bytes = nd::encode_checkpoint(m.to_arrays());
    return cli::sha256_hex(std::string(bytes.begin(), bytes.end()));
  };
  const bool same_ckpt = digest(a.model) == digest(b.model) && digest(a.ema) == digest(b.ema);

  const auto labels = balanced_labels(256);
  const std::vector<double> c(256, 0.6);
  const auto s1 = diffusion::sample(a.ema, labels, c, {}, sampler(0.0), 17);
  const auto s2 = diffusion::sample(a.ema, labels, c, {}, sampler(0.0), 17);
  const bool same_samples = s1.coords == s2.coords;
  report(6, same_ckpt && same_samples,
         "DDIM samples bit-identical: " + std::string(same_samples ? "yes" : "no") +
             ", checkpoint digests identical: " + (same_ckpt ? "yes" : "no") + " (" + digest(a.ema).substr(0, 12) +
             ")");
}

struct Behavior {
  Trained cad;
  Corpus corpus;
};

void coherence_sweep(const Trained& cad) {
  const auto labels = balanced_labels(kAccSamples);
  std::vector<double> acc;
  std::string row;
  for (int k = 0; k < 8; ++k) {
    const double c = k / 7.0;
    const auto pts = draw(cad, labels, c, {}, 701);
    acc.push_back(metrics::accuracy(pts, labels, ring(0)));
    row += (k ? " " : "") + fmt(acc.back(), 3);
  }
  bool monotone = true;
  for (std::size_t j = 0; j < acc.size(); ++j)
    for (std::size_t i = 0; i < j; ++i) monotone = monotone && acc[j] >= acc[i] - kMonotoneBand;
  const bool fast = cad.seconds < kTrainBudgetSeconds;
  report(7,
         acc.back() >= kAccAtOne && std::abs(acc.front() - 1.0 / kClasses) <= kAccAtZeroBand && monotone && fast,
         "Acc(c=1)=" + fmt(acc.back(), 3) + " (>=" + fmt(kAccAtOne) + "), |Acc(c=0)-1/8|=" +
             fmt(std::abs(acc.front() - 1.0 / kClasses), 3) + " (<=" + fmt(kAccAtZeroBand) +
             "), non-decreasing within " + fmt(kMonotoneBand) + ": " + (monotone ? "yes" : "no") + ", training " +
             fmt(cad.seconds, 3) + " s");
  note("Acc over c = 0, 1/7, ..., 1: " + row);
  note("training loss (smoothed) " + fmt(cad.loss_first) + " -> " + fmt(cad.loss_last));
}

void near_unconditional(const Trained& cad) {
  const auto reference = clean_reference(kFdCleanReference, 8008);
  const auto labels = prior_labels(kFdSamples, 808);
  const auto fd0 = metrics::frechet_distance(reference, draw(cad, labels, 0.0, {}, 809)).distance;
  const auto fd1 = metrics::frechet_distance(reference, draw(cad, labels, 1.0, {}, 809)).distance;
  report(8, fd0 <= kFdRatio * fd1,
         "FD(c=0)=" + fmt(fd0) + " vs FD(c=1)=" + fmt(fd1) + ", ratio " + fmt(fd0 / fd1, 3) + " (<=" +
             fmt(kFdRatio) + ")");
}

// Every regime gets the same, smaller step budget; the 30k-step model is not reused.
void regime_comparison(const Corpus& corpus_seed0) {
  const auto reference = clean_reference(kFdReference, 9009);
  double acc_cad = 0.0, acc_base = 0.0, fd_cad = 0.0, fd_filt = 0.0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Corpus corpus = seed == 0 ? corpus_seed0 : make_corpus(seed);
    const Trained cad = train_model(corpus, Regime::cad, seed, kRegimeSteps);
    const Trained base = train_model(corpus, Regime::baseline, seed, kRegimeSteps);
    const Trained filt = train_model(corpus, Regime::filtered, seed, kRegimeSteps);
    const auto labels = prior_labels(kRegimeSamples, 900 + seed);
    const std::uint64_t s = 910 + seed;
    const auto pc = draw(cad, labels, 1.0, {}, s);
    const auto pb = draw(base, labels, 1.0, {}, s);
    const auto pf = draw(filt, labels, 1.0, {}, s);
    const double ac = metrics::accuracy(pc, labels, ring(0));
    const double ab = metrics::accuracy(pb, labels, ring(0));
    const double fc = metrics::frechet_distance(reference, pc).distance;
    const double ff = metrics::frechet_distance(reference, pf).distance;
    acc_cad += ac / 3.0;
    acc_base += ab / 3.0;
    fd_cad += fc / 3.0;
    fd_filt += ff / 3.0;
    note("seed " + std::to_string(seed) + ": Acc cad " + fmt(ac, 3) + " baseline " + fmt(ab, 3) + "; FD cad " +
         fmt(fc) + " filtered " + fmt(ff));
  }
  report(9, acc_cad >= acc_base + kRegimeAccGap && fd_cad <= fd_filt,
         std::to_string(kRegimeSteps) + " steps each, mean Acc cad " + fmt(acc_cad, 3) + " vs baseline " + fmt(acc_base, 3) + " (gap >= " + fmt(kRegimeAccGap) +
             "), mean FD cad " + fmt(fd_cad) + " vs filtered " + fmt(fd_filt) + " (cad <= filtered)");
}

void guidance_sweep(const Trained& cad) {
  const std::vector<double> omegas{0, 1, 2, 5, 10, 20};
  const auto labels = balanced_labels(kGuidanceSamples);
  std::vector<double> acc;
  std::string row;
  for (double w : omegas) {
    const auto pts = draw(cad, labels, 1.0, {diffusion::GuidanceMode::ca_cfg, w}, 1001);
    acc.push_back(metrics::accuracy(pts, labels, ring(0)));
    row += (row.empty() ? "" : " ") + fmt(acc.back(), 5);
  }
  const double rho = spearman(omegas, acc);
  report(10, acc[1] >= acc[0] && rho >= kSpearmanMin,
         "Acc(w=1)=" + fmt(acc[1], 5) + " vs Acc(w=0)=" + fmt(acc[0], 5) + ", Spearman(w, Acc)=" + fmt(rho, 3) +
             " (>=" + fmt(kSpearmanMin) + ", ties share ranks)");
  note("Acc over w = 0 1 2 5 10 20: " + row);
}

void embedding_collapse(const Trained& cad) {
  const std::vector<double> grid{0.0, 1.0};
  const auto trained = denoiser::collapse_probe(cad.model, grid);
  const double ratio = trained[0].mean_distance / trained[1].mean_distance;
  double lo = 1e300, hi = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    denoiser::DenoiserConfig dc;
    dc.n_classes = kClasses;
    const auto rows = denoiser::collapse_probe(denoiser::Denoiser(dc, derive_seed(seed, "init")), grid);
    const double r = rows[0].mean_distance / rows[1].mean_distance;
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  report(11, ratio <= kCollapseRatio && lo > kCollapseRatio,
         "trained ratio D(0)/D(1)=" + fmt(ratio, 3) + " (<=" + fmt(kCollapseRatio) + "), init ratios over 10 seeds " +
             fmt(lo, 3) + " .. " + fmt(hi, 3) + " (all >" + fmt(kCollapseRatio) + ")");
}

void metrics_suite() {
  bool ok = true;
  std::string why;
  const auto check = [&](bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      why += " " + what;
    }
  };
  Rng rng = derive_rng(12, "metrics");
  PointSet cloud(2);
  for (int i = 0; i < 500; ++i) {
    const double v[2] = {standard_normal(rng), 2.0 * standard_normal(rng) + 0.5};
    cloud.push_back(v);
  }
  PointSet moved = cloud;
  for (std::size_t i = 0; i < moved.size(); ++i) {
    moved.coords[2 * i] += 3.0;
    moved.coords[2 * i + 1] -= 4.0;
  }
  check(metrics::frechet_distance(cloud, cloud).distance <= kClosedFormTol, "fd-identical");
  check(std::abs(metrics::frechet_distance(cloud, moved).distance - 25.0) <= kClosedFormTol, "fd-offset");
  check(std::abs(metrics::frechet_distance(PointSet(1, {-1, 0, 1}), PointSet(1, {-1, 1, 3})).distance - 2.0) <=
            kClosedFormTol,
        "fd-1d");

  const PointSet ten(2, {0.0, 0.0, 1.0, 0.2, 0.3, 1.1, 2.0, 2.0, -1.0, 0.5,
                         0.7, -0.8, 1.5, 1.0, -0.4, -1.2, 2.5, 0.1, -1.5, -0.3});
  const auto same = metrics::prdc(ten, ten, 3);
  check(same.precision == 1.0 && same.recall == 1.0 && same.coverage == 1.0, "prdc-identical");
  PointSet far = ten;
  for (auto& v : far.coords) v += 1e6;
  const auto apart = metrics::prdc(ten, far, 3);
  check(apart.precision == 0.0 && apart.recall == 0.0 && apart.density == 0.0 && apart.coverage == 0.0,
        "prdc-disjoint");

  double is_lo = 1e300, is_hi = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng r = derive_rng(s, "is");
    PointSet p(2);
    const double scale = 0.01 + 0.5 * static_cast<double>(s);
    for (int i = 0; i < 200; ++i) {
      const double v[2] = {scale * standard_normal(r), scale * standard_normal(r)};
      p.push_back(v);
    }
    const double is = metrics::inception_score_analog(p, ring(0));
    is_lo = std::min(is_lo, is);
    is_hi = std::max(is_hi, is);
  }
  check(is_lo >= 1.0 && is_hi <= static_cast<double>(kClasses), "is-bounds");
  report(12, ok,
         "Frechet closed forms within " + fmt(kClosedFormTol) + ", prdc identical/disjoint exact, IS analog in [" +
             fmt(is_lo, 4) + ", " + fmt(is_hi, 4) + "]" + (ok ? "" : ", failed:" + why));
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), {"cadlab", "--log-level", "warn"});
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

void end_to_end() {
  const fs::path root = fs::temp_directory_path() / ("cadlab_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path config = root / "experiment.ini";
  std::ofstream(config) << "[run]\nname = e2e\nseed = 5\n";
  const std::string out = (root / "runs").string();
  const auto start = Clock::now();
  std::vector<std::pair<std::string, int>> codes;
  const auto step = [&](const std::string& name, std::vector<std::string> args) {
    codes.emplace_back(name, cli(std::move(args)));
  };
  step("simulate", {"simulate", "--config", config.string(), "--out", out});
  step("train", {"train", "--run", "e2e", "--out", out});
  step("sample", {"sample", "--run", "e2e", "--out", out});
  step("eval", {"eval", "--run", "e2e", "--out", out});
  step("sweep", {"sweep", "--run", "e2e", "--out", out});
  step("verify", {"verify", "--run", "e2e", "--out", out});
  const double secs = seconds_since(start);

  bool all_zero = true;
  std::string code_text;
  for (const auto& [name, code] : codes) {
    all_zero = all_zero && code == 0;
    code_text += (code_text.empty() ? "" : " ") + name + "=" + std::to_string(code);
  }

  // Every regular file except the manifest itself must be inventoried with a matching digest.
  const fs::path run_dir = fs::path(out) / "e2e";
  std::size_t files = 0, missing = 0;
  bool complete = fs::exists(run_dir / cli::kManifestFile);
  if (complete) {
    const auto manifest = cli::Manifest::load(run_dir);
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
      if (!entry.is_regular_file() || entry.path().filename() == cli::kManifestFile) continue;
      ++files;
      const auto rel = fs::relative(entry.path(), run_dir).generic_string();
      const auto digest = manifest.digest_of(rel);
      if (!digest || *digest != cli::sha256_file(entry.path())) ++missing;
    }
    const auto& entries = manifest.json().at("entries");
    std::vector<std::string> commands;
    for (const auto& e : entries) commands.push_back(e.at("command").get<std::string>());
    for (const char* c : {"simulate", "train", "sample", "eval", "sweep"}) {
      complete = complete && std::find(commands.begin(), commands.end(), c) != commands.end();
    }
    complete = complete && missing == 0 && files > 0;
  }
  fs::remove_all(root);
  report(13, all_zero && complete && secs < kCliBudgetSeconds,
         "exit codes " + code_text + ", " + std::to_string(files) + " files, " + std::to_string(missing) +
             " outside the manifest, " + fmt(secs, 4) + " s (<" + fmt(kCliBudgetSeconds) + ")");
}

}  // namespace

int main() {
  const auto start = Clock::now();
  guarded(1, noise_model_math);
  guarded(2, corruption_statistics);
  guarded(3, autodiff);
  guarded(4, variance_preservation);
  guarded(5, guidance_algebra);
  guarded(6, determinism);

  // Criteria 7, 8, 10 and 11 share one trained CAD model.
  std::optional<Corpus> corpus;
  std::optional<Trained> cad;
  try {
    corpus = make_corpus(0);
    cad = train_model(*corpus, Regime::cad, 0, kTrainSteps);
  } catch (const std::exception& e) {
    for (int id : {7, 8, 9, 10, 11}) report(id, false, std::string("training threw: ") + e.what());
  }
  if (cad) {
    guarded(7, [&] { coherence_sweep(*cad); });
    guarded(8, [&] { near_unconditional(*cad); });
    guarded(10, [&] { guidance_sweep(*cad); });
    guarded(11, [&] { embedding_collapse(*cad); });
    guarded(9, [&] { regime_comparison(*corpus); });
  }
  guarded(12, metrics_suite);
  guarded(13, end_to_end);

  std::printf("%d of 13 criteria failed, %.0f s total\n", g_failed, seconds_since(start));
  return g_failed == 0 ? 0 : 1;
}
