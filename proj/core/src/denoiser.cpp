#include "cadlab/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

#include "cadlab/error.hpp"
#include "cadlab/rng.hpp"

namespace cadlab::denoiser {

namespace {

constexpr double kMaxFrequency = 1e4;

std::vector<double> sinusoidal(double t, std::size_t dim, double max_frequency) {
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double exponent = half > 1 ? static_cast<double>(k) / static_cast<double>(half - 1) : 0.0;
    const double freq = std::pow(max_frequency, exponent);
    out[2 * k] = std::sin(t * freq);
    out[2 * k + 1] = std::cos(t * freq);
  }
  return out;
}

nd::Tensor sinusoidal_batch(std::span<const double> t, std::size_t dim, double max_frequency) {
  std::vector<double> out;
  out.reserve(t.size() * dim);
  for (double v : t) {
    const auto row = sinusoidal(v, dim, max_frequency);
    out.insert(out.end(), row.begin(), row.end());
  }
  return nd::Tensor::from({t.size(), dim}, std::move(out));
}

nd::Tensor random_matrix(std::size_t rows, std::size_t cols, double std, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = std * standard_normal(rng);
  return nd::Tensor::parameter({rows, cols}, std::move(v));
}

nd::Tensor zero_vector(std::size_t n) { return nd::Tensor::parameter({n}, std::vector<double>(n, 0.0)); }

void add_linear(nd::ParamStore& params, const std::string& name, std::size_t in, std::size_t out,
                Rng& rng) {
  params.add(name + ".w", random_matrix(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  params.add(name + ".b", zero_vector(out));
}

// Metadata is stored alongside the weights as single-value arrays.
const std::vector<std::pair<std::string, double DenoiserConfig::*>> kDoubleMeta = {
    {"meta.cond_dropout", &DenoiserConfig::cond_dropout},
    {"meta.coherence_frequency", &DenoiserConfig::coherence_frequency},
};

double meta_value(const std::vector<nd::NamedArray>& arrays, const std::string& name) {
  const auto* a = nd::find_array(arrays, name);
  if (a == nullptr || a->values.size() != 1) throw FormatError("checkpoint lacks metadata '" + name + "'");
  return a->values[0];
}

}  // namespace

void DenoiserConfig::validate() const {
  require(data_dim >= 1, "denoiser: data_dim must be positive");
  require(n_classes >= 2, "denoiser: need at least 2 classes");
  require(embed_dim >= 2 && embed_dim % 2 == 0, "denoiser: embed_dim must be even and >= 2");
  require(width >= 1 && depth >= 1, "denoiser: width and depth must be positive");
  require(cond_dropout >= 0.0 && cond_dropout < 1.0, "denoiser: cond_dropout must lie in [0, 1)");
  require(coherence_frequency >= 1.0 && std::isfinite(coherence_frequency),
          "denoiser: coherence_frequency must be finite and >= 1");
}

std::vector<double> embed_time(double t, std::size_t dim) {
  require(dim >= 2 && dim % 2 == 0, "embed_time: dimension must be even and >= 2");
  return sinusoidal(t, dim, kMaxFrequency);
}

nd::Tensor embed_time_batch(std::span<const double> t, std::size_t dim) {
  require(!t.empty(), "embed_time_batch: empty batch");
  require(dim >= 2 && dim % 2 == 0, "embed_time: dimension must be even and >= 2");
  return sinusoidal_batch(t, dim, kMaxFrequency);
}

Denoiser::Denoiser(DenoiserConfig config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng rng = derive_rng(init_seed, "denoiser-init");
  const std::size_t d = config_.embed_dim;
  {
    std::vector<double> table((config_.n_classes + 1) * d);
    for (auto& v : table) v = standard_normal(rng);
    params_.add("class_table", nd::Tensor::parameter({config_.n_classes + 1, d}, std::move(table)));
  }
  add_linear(params_, "coh.0", d, d, rng);
  add_linear(params_, "coh.1", d, d, rng);
  if (config_.layout == ConditionLayout::merged) {
    add_linear(params_, "merge.0", 2 * d, d, rng);
    add_linear(params_, "merge.1", d, d, rng);
  }
  add_linear(params_, "x_in", config_.data_dim, d, rng);
  std::size_t in = d + d + condition_dim();
  for (std::size_t layer = 0; layer < config_.depth; ++layer) {
    add_linear(params_, "trunk." + std::to_string(layer), in, config_.width, rng);
    in = config_.width;
  }
  add_linear(params_, "head", in, config_.data_dim, rng);
}

std::size_t Denoiser::condition_dim() const {
  return config_.layout == ConditionLayout::merged ? config_.embed_dim : 2 * config_.embed_dim;
}

std::vector<nd::NamedArray> Denoiser::to_arrays() const {
  std::vector<nd::NamedArray> out;
  auto meta = [&](const std::string& name, double value) { out.push_back({name, {1}, {value}}); };
  meta("meta.data_dim", static_cast<double>(config_.data_dim));
  meta("meta.n_classes", static_cast<double>(config_.n_classes));
  meta("meta.embed_dim", static_cast<double>(config_.embed_dim));
  meta("meta.width", static_cast<double>(config_.width));
  meta("meta.depth", static_cast<double>(config_.depth));
  meta("meta.layout", config_.layout == ConditionLayout::merged ? 0.0 : 1.0);
  meta("meta.regime", static_cast<double>(config_.regime));
  for (const auto& [name, field] : kDoubleMeta) meta(name, config_.*field);
  auto weights = nd::to_arrays(params_);
  out.insert(out.end(), weights.begin(), weights.end());
  return out;
}

Denoiser Denoiser::from_arrays(const std::vector<nd::NamedArray>& arrays) {
  DenoiserConfig cfg;
  cfg.data_dim = static_cast<std::size_t>(meta_value(arrays, "meta.data_dim"));
  cfg.n_classes = static_cast<std::size_t>(meta_value(arrays, "meta.n_classes"));
  cfg.embed_dim = static_cast<std::size_t>(meta_value(arrays, "meta.embed_dim"));
  cfg.width = static_cast<std::size_t>(meta_value(arrays, "meta.width"));
  cfg.depth = static_cast<std::size_t>(meta_value(arrays, "meta.depth"));
  cfg.layout = meta_value(arrays, "meta.layout") == 0.0 ? ConditionLayout::merged : ConditionLayout::separate;
  const auto regime = static_cast<int>(meta_value(arrays, "meta.regime"));
  if (regime < 0 || regime > static_cast<int>(Regime::weighted)) throw FormatError("checkpoint has an unknown regime code");
  cfg.regime = static_cast<Regime>(regime);
  for (const auto& [name, field] : kDoubleMeta) cfg.*field = meta_value(arrays, name);
  Denoiser model(cfg, 0);
  nd::assign_from(model.params_, arrays);
  return model;
}

void Denoiser::load_values(const nd::ParamStore& other) {
  nd::assign_from(params_, nd::to_arrays(other));
}

nd::Tensor Denoiser::linear(const nd::Tensor& x, const char* name) const {
  const std::string base(name);
  return nd::add_row(nd::matmul(x, params_.get(base + ".w")), params_.get(base + ".b"));
}

nd::Tensor Denoiser::embed_coherence(std::span<const double> c) const {
  std::vector<double> clamped(c.begin(), c.end());
  for (auto& v : clamped) {
    if (!(v >= 0.0 && v <= 1.0)) {
      spdlog::warn("embed_coherence: coherence {} outside [0, 1], clamping", v);
      v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    }
  }
  require(!clamped.empty(), "embed_coherence: empty batch");
  const auto features = sinusoidal_batch(clamped, config_.embed_dim, config_.coherence_frequency);
  return linear(nd::silu(linear(features, "coh.0")), "coh.1");
}

nd::Tensor Denoiser::cond_embedding(std::span<const std::size_t> y, std::span<const double> c) const {
  require(y.size() == c.size(), "cond_embedding: label and coherence batches differ in size");
  for (auto label : y) {
    require(label <= null_class(), "cond_embedding: invalid class id " + std::to_string(label));
  }
  std::vector<double> coherence(c.begin(), c.end());
  if (!uses_coherence()) std::fill(coherence.begin(), coherence.end(), kSentinelCoherence);
  const auto cls = nd::gather_rows(params_.get("class_table"), y);
  const auto coh = embed_coherence(coherence);
  const auto joint = nd::concat_cols({cls, coh});
  if (config_.layout == ConditionLayout::separate) return joint;
  return linear(nd::silu(linear(joint, "merge.0")), "merge.1");
}

nd::Tensor Denoiser::predict_eps_from_condition(const nd::Tensor& x_t, std::span<const double> t,
                                                const nd::Tensor& condition) const {
  require(x_t.rank() == 2 && x_t.cols() == config_.data_dim,
          "predict_eps: x_t must have shape [B, " + std::to_string(config_.data_dim) + "]");
  require(t.size() == x_t.rows() && condition.rows() == x_t.rows(),
          "predict_eps: batch sizes differ");
  auto z = nd::concat_cols({linear(x_t, "x_in"), embed_time_batch(t, config_.embed_dim), condition});
  for (std::size_t layer = 0; layer < config_.depth; ++layer) {
    const auto name = "trunk." + std::to_string(layer);
    z = nd::silu(linear(z, name.c_str()));
  }
  return linear(z, "head");
}

nd::Tensor Denoiser::predict_eps(const nd::Tensor& x_t, std::span<const double> t,
                                 std::span<const std::size_t> y, std::span<const double> c) const {
  return predict_eps_from_condition(x_t, t, cond_embedding(y, c));
}

std::vector<CollapseRow> collapse_probe(const Denoiser& model, std::span<const double> grid) {
  const std::size_t n = model.config().n_classes;
  require(n >= 2, "collapse_probe: need at least 2 classes");
  nd::NoGradGuard no_grad;
  std::vector<std::size_t> labels(n);
  for (std::size_t k = 0; k < n; ++k) labels[k] = k;
  std::vector<CollapseRow> rows;
  for (double c : grid) {
    require(c >= 0.0 && c <= 1.0, "collapse_probe: grid values must lie in [0, 1]");
    const std::vector<double> coherence(n, c);
    const auto h = model.cond_embedding(labels, coherence);
    const std::size_t dim = h.cols();
    double total = 0.0;
    double worst = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double sq = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
          const double diff = h.at(i, k) - h.at(j, k);
          sq += diff * diff;
        }
        const double dist = std::sqrt(sq);
        total += dist;
        worst = std::max(worst, dist);
        ++pairs;
      }
    }
    rows.push_back({c, total / static_cast<double>(pairs), worst});
  }
  return rows;
}

namespace {

// Spectral norm of the per-row Jacobian d eps / d h for each probe row.
std::vector<double> jacobian_norms(const Denoiser& model, const nd::Tensor& x, std::span<const double> t,
                                   const std::vector<double>& h_values, std::size_t h_dim) {
  const std::size_t rows = x.rows();
  const std::size_t out_dim = model.config().data_dim;
  std::vector<std::vector<double>> jac(out_dim);
  for (std::size_t j = 0; j < out_dim; ++j) {
    auto h = nd::Tensor::parameter({rows, h_dim}, h_values);
    const auto eps = model.predict_eps_from_condition(x, t, h);
    std::vector<double> mask(rows * out_dim, 0.0);
    for (std::size_t r = 0; r < rows; ++r) mask[r * out_dim + j] = 1.0;
    const auto loss = nd::sum(nd::mul(eps, nd::Tensor::from({rows, out_dim}, mask)));
    const std::vector<nd::Tensor> wrt{h};
    const auto g = nd::grad(loss, wrt);
    jac[j].assign(g.grads[0].data().begin(), g.grads[0].data().end());
  }
  std::vector<double> norms(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    // Gram matrix J J^T is out_dim x out_dim; power iteration on it.
    std::vector<double> gram(out_dim * out_dim, 0.0);
    for (std::size_t a = 0; a < out_dim; ++a) {
      for (std::size_t b = 0; b < out_dim; ++b) {
        double s = 0.0;
        for (std::size_t k = 0; k < h_dim; ++k) s += jac[a][r * h_dim + k] * jac[b][r * h_dim + k];
        gram[a * out_dim + b] = s;
      }
    }
    std::vector<double> v(out_dim, 1.0);
    double lambda = 0.0;
    for (int it = 0; it < 100; ++it) {
      std::vector<double> w(out_dim, 0.0);
      for (std::size_t a = 0; a < out_dim; ++a) {
        for (std::size_t b = 0; b < out_dim; ++b) w[a] += gram[a * out_dim + b] * v[b];
      }
      double nrm = 0.0;
      for (double e : w) nrm += e * e;
      nrm = std::sqrt(nrm);
      if (nrm == 0.0) break;
      lambda = nrm;
      for (std::size_t a = 0; a < out_dim; ++a) v[a] = w[a] / nrm;
    }
    norms[r] = std::sqrt(lambda);
  }
  return norms;
}

}  // namespace

ConsistencyReport coherence_consistency(const Denoiser& model, double c, std::size_t probe_points,
                                        std::uint64_t seed) {
  require(probe_points >= 1, "coherence_consistency: need at least one probe point");
  const std::size_t n = model.config().n_classes;
  const std::size_t dim = model.config().data_dim;
  Rng rng = derive_rng(seed, "consistency-probe");

  std::vector<std::size_t> labels(n);
  for (std::size_t k = 0; k < n; ++k) labels[k] = k;
  nd::Tensor h;
  {
    nd::NoGradGuard no_grad;
    h = model.cond_embedding(labels, std::vector<double>(n, c));
  }
  const std::size_t h_dim = h.cols();

  ConsistencyReport report;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < h_dim; ++k) sq += std::pow(h.at(i, k) - h.at(j, k), 2);
      report.max_embedding_gap = std::max(report.max_embedding_gap, std::sqrt(sq));
    }
  }

  constexpr std::size_t kSegmentPoints = 5;
  for (std::size_t p = 0; p < probe_points; ++p) {
    std::vector<double> xv(dim);
    for (auto& v : xv) v = 2.0 * standard_normal(rng);
    const double t = uniform01(rng);

    // Predictions for every label at this probe point.
    std::vector<double> x_rep;
    for (std::size_t k = 0; k < n; ++k) x_rep.insert(x_rep.end(), xv.begin(), xv.end());
    const auto x_batch = nd::Tensor::from({n, dim}, x_rep);
    const std::vector<double> t_batch(n, t);
    nd::Tensor eps;
    {
      nd::NoGradGuard no_grad;
      eps = model.predict_eps_from_condition(x_batch, t_batch, h);
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double sq = 0.0;
        for (std::size_t k = 0; k < dim; ++k) sq += std::pow(eps.at(i, k) - eps.at(j, k), 2);
        report.max_prediction_gap = std::max(report.max_prediction_gap, std::sqrt(sq));
      }
    }

    // Jacobian norms at points along every pair segment between embeddings.
    std::vector<double> h_points;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        for (std::size_t s = 0; s < kSegmentPoints; ++s) {
          const double lambda = static_cast<double>(s) / static_cast<double>(kSegmentPoints - 1);
          for (std::size_t k = 0; k < h_dim; ++k) {
            h_points.push_back((1.0 - lambda) * h.at(i, k) + lambda * h.at(j, k));
          }
          ++rows;
        }
      }
    }
    std::vector<double> x_seg;
    for (std::size_t r = 0; r < rows; ++r) x_seg.insert(x_seg.end(), xv.begin(), xv.end());
    const auto norms = jacobian_norms(model, nd::Tensor::from({rows, dim}, x_seg),
                                      std::vector<double>(rows, t), h_points, h_dim);
    for (double v : norms) report.lipschitz_estimate = std::max(report.lipschitz_estimate, v);
  }
  report.bound_holds = report.max_prediction_gap <=
                       report.lipschitz_estimate * report.max_embedding_gap * (1.0 + 1e-6) + 1e-12;
  return report;
}

}  // namespace cadlab::denoiser
