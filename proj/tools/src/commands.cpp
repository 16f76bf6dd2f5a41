#include "cadlab/cli/commands.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cadlab/checkpoint.hpp"
#include "cadlab/cli/manifest.hpp"
#include "cadlab/cli/svg_plot.hpp"
#include "cadlab/diffusion.hpp"
#include "cadlab/error.hpp"
#include "cadlab/format.hpp"
#include "cadlab/metrics.hpp"
#include "cadlab/noisesim.hpp"
#include "cadlab/rng.hpp"

namespace cadlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kConfigFile = "config.ini";
const std::vector<std::string> kRunDirs = {"data", "checkpoints", "samples", "metrics", "plots"};

fs::path resolve_run_dir(const CommonOptions& common) {
  if (!common.run) throw ConfigError("--run is required");
  const fs::path as_path(*common.run);
  if (fs::is_directory(as_path) && fs::exists(as_path / kManifestFile)) return as_path;
  return common.out / *common.run;
}

json config_json(const ExperimentConfig& config) {
  json j = json::object();
  for (const auto& [key, value] : flatten(config)) j[key] = value;
  return j;
}

// Config for commands that follow simulate: the run's snapshot, or --config when given.
// Sections that shaped the stored data must agree with the snapshot.
ExperimentConfig run_config(const CommonOptions& common, const fs::path& run_dir) {
  const auto snapshot = load_config(run_dir / kConfigFile);
  if (!common.config) return snapshot;
  auto config = load_config(*common.config);
  const auto a = flatten(snapshot);
  const auto b = flatten(config);
  for (const auto& [key, value] : a) {
    const bool fixed = key.rfind("data.", 0) == 0 || key.rfind("noise.", 0) == 0 || key == "run.seed";
    if (fixed && b.at(key) != value) {
      throw ConfigError("config: " + key + " = " + b.at(key) + " differs from the run's value " + value +
                        "; data settings cannot change inside a run");
    }
  }
  config.name = snapshot.name;
  return config;
}

std::string file_tag(double v) {
  auto s = format_double(v);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

void require_name(const std::string& name, const char* what) {
  if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..") {
    throw ConfigError(std::string(what) + " must be a plain file name, got '" + name + "'");
  }
}

std::vector<double> sorted_copy(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

std::string simulate_stats(const ExperimentConfig& config, const std::vector<DatasetRow>& rows) {
  std::ostringstream os;
  os << "samples: " << rows.size() << '\n';
  if (rows.empty()) return os.str();
  std::size_t flips = 0;
  std::vector<double> coherence;
  coherence.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.clean_label != r.noisy_label) ++flips;
    coherence.push_back(r.coherence.value_or(1.0));
  }
  const double rate = static_cast<double>(flips) / static_cast<double>(rows.size());
  const double oracle = noisesim::expected_flip_rate(config.data.n_classes, config.noise.beta, config.noise.kappa);
  os << "flip_rate: " << format_double(rate) << '\n';
  os << "flip_rate_oracle: " << format_double(oracle) << '\n';
  os << "flip_rate_gap: " << format_double(std::abs(rate - oracle)) << '\n';
  os << "coherence_ks: "
     << format_double(noisesim::coherence_ks_statistic(coherence, config.noise.beta, config.noise.kappa)) << '\n';
  const auto sorted = sorted_copy(coherence);
  os << "coherence_mean: "
     << format_double(std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size()))
     << '\n';
  os << "coherence_histogram (10 equal-width bins over [0,1]):\n";
  std::vector<std::size_t> hist(10, 0);
  for (double c : coherence) hist[std::min<std::size_t>(9, static_cast<std::size_t>(c * 10.0))]++;
  for (std::size_t b = 0; b < hist.size(); ++b) {
    os << "  [" << format_double(b / 10.0) << ", " << format_double((b + 1) / 10.0) << (b == 9 ? "]" : ")")
       << ": " << hist[b] << '\n';
  }
  return os.str();
}

fs::path checkpoint_path(const fs::path& run_dir, const std::string& tag, const std::string& kind) {
  return run_dir / "checkpoints" / (tag + "." + kind + ".ckpt");
}

struct Prompt {
  std::vector<std::size_t> labels;
  std::vector<double> coherence;
};

diffusion::GuidanceSpec guidance_for(const denoiser::Denoiser& model, diffusion::GuidanceMode mode, double omega) {
  if (mode == diffusion::GuidanceMode::ca_cfg && !model.uses_coherence()) {
    throw ContractViolation("ca-cfg guidance needs a coherence-conditioned (cad) checkpoint");
  }
  if (mode == diffusion::GuidanceMode::cfg && !model.has_null_condition()) {
    throw ContractViolation("cfg guidance needs a checkpoint trained with cond_dropout > 0");
  }
  return {mode, omega};
}

SampleRows draw(const LoadedModel& loaded, const Prompt& prompt, const diffusion::GuidanceSpec& spec,
                const diffusion::SamplerOptions& options, std::uint64_t seed) {
  const auto z = diffusion::sample(loaded.model, prompt.labels, prompt.coherence, spec, options, seed);
  SampleRows rows;
  for (std::size_t i = 0; i < z.size(); ++i) rows.points.push_back(loaded.standardizer.invert(z[i]));
  rows.labels = prompt.labels;
  // ca-cfg always takes its conditional branch at coherence 1.
  rows.coherence = spec.mode == diffusion::GuidanceMode::ca_cfg
                       ? std::vector<double>(prompt.labels.size(), 1.0)
                       : prompt.coherence;
  return rows;
}

PointSet load_reference(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("reference dataset " + path.string() + " does not exist");
  PointSet ref{2, {}};
  for (const auto& r : parse_dataset_csv(read_text(path))) ref.push_back(r.x);
  return ref;
}

std::uint64_t sample_seed(const CommonOptions& common, const ExperimentConfig& config) {
  return common.seed ? *common.seed : derive_seed(config.seed, "sample");
}

}  // namespace

LoadedModel load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint " + checkpoint.string() + " does not exist");
  const auto arrays = nd::load_checkpoint(checkpoint);
  const auto* mean = nd::find_array(arrays, "data.mean");
  const auto* scale = nd::find_array(arrays, "data.scale");
  if (mean == nullptr || scale == nullptr) {
    throw FormatError("checkpoint " + checkpoint.string() + " has no data standardizer");
  }
  return {denoiser::Denoiser::from_arrays(arrays), {mean->values, scale->values}};
}

std::vector<nd::NamedArray> model_arrays(const denoiser::Denoiser& model, const toydata::Standardizer& standardizer) {
  auto arrays = model.to_arrays();
  arrays.push_back({"data.mean", {standardizer.mean.size()}, standardizer.mean});
  arrays.push_back({"data.scale", {standardizer.scale.size()}, standardizer.scale});
  return arrays;
}

std::vector<std::size_t> prompt_labels(const std::string& spec, std::size_t n, std::size_t n_classes,
                                       std::uint64_t seed) {
  std::vector<std::size_t> cycle;
  if (spec == "random") {
    Rng rng = derive_rng(seed, "prompt-labels");
    std::uniform_int_distribution<std::size_t> pick(0, n_classes - 1);
    std::vector<std::size_t> labels(n);
    for (auto& y : labels) y = pick(rng);
    return labels;
  }
  if (spec == "balanced") {
    for (std::size_t k = 0; k < n_classes; ++k) cycle.push_back(k);
  } else {
    for (const auto& part : split(spec, ',')) {
      std::size_t v = 0;
      const auto res = std::from_chars(part.data(), part.data() + part.size(), v);
      if (part.empty() || res.ec != std::errc() || res.ptr != part.data() + part.size()) {
        throw ConfigError("labels: '" + part + "' is not a class id");
      }
      if (v >= n_classes) {
        throw ConfigError("labels: class " + part + " is outside [0, " + std::to_string(n_classes) + ")");
      }
      cycle.push_back(v);
    }
  }
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = cycle[i % cycle.size()];
  return labels;
}

fs::path cmd_simulate(const CommonOptions& common, std::ostream& log) {
  if (!common.config) throw ConfigError("simulate needs --config");
  auto config = load_config(*common.config);
  if (common.seed) config.seed = *common.seed;
  if (common.run) config.name = *common.run;
  config.validate();
  const fs::path run_dir = common.out / config.name;
  if (fs::exists(run_dir)) {
    throw std::runtime_error("run directory " + run_dir.string() + " already exists; runs are never overwritten");
  }
  fs::create_directories(run_dir);
  for (const auto& d : kRunDirs) fs::create_directories(run_dir / d);

  const auto clean = toydata::generate(config.ring(derive_seed(config.seed, "dataset")), config.data.n_train);
  const auto reference =
      toydata::generate(config.ring(derive_seed(config.seed, "reference")), config.data.n_reference);

  std::vector<std::string> outputs = {kConfigFile, "data/clean.csv", "data/reference.csv"};
  write_new_file(run_dir / kConfigFile, to_ini(config));
  const auto clean_table = clean_rows(clean);
  write_new_file(run_dir / "data/clean.csv", dataset_csv(clean_table));
  write_new_file(run_dir / "data/reference.csv", dataset_csv(clean_rows(reference)));

  std::string stats_source = "data/clean.csv";
  const std::vector<DatasetRow>* stats_rows = &clean_table;
  std::vector<DatasetRow> corrupted_table;
  if (config.noise.enabled) {
    noisesim::NoiseSimConfig nc{config.data.n_classes, config.noise.beta, config.noise.kappa,
                                derive_seed(config.seed, "noise")};
    corrupted_table = corrupted_rows(noisesim::corrupt_dataset(clean, nc), clean);
    write_new_file(run_dir / "data/corrupted.csv", dataset_csv(corrupted_table));
    outputs.push_back("data/corrupted.csv");
    stats_source = "data/corrupted.csv";
    stats_rows = &corrupted_table;
  }
  write_new_file(run_dir / "metrics/simulate_stats.txt", simulate_stats(config, *stats_rows));
  outputs.push_back("metrics/simulate_stats.txt");

  auto manifest = Manifest::create(run_dir, config.name, config.seed, config_json(config));
  manifest.add_entry("simulate",
                     {{"n_train", config.data.n_train},
                      {"n_reference", config.data.n_reference},
                      {"noise_enabled", config.noise.enabled}},
                     outputs);
  manifest.set_field("dataset_digest", *manifest.digest_of(stats_source));
  manifest.save();
  log << "simulate: wrote " << run_dir.string() << " (" << config.data.n_train << " training samples)\n";
  return run_dir;
}

fs::path cmd_train(const CommonOptions& common, const TrainOptions& options, std::ostream& log) {
  const fs::path run_dir = resolve_run_dir(common);
  auto manifest = Manifest::load(run_dir);
  auto config = run_config(common, run_dir);
  if (options.tag) config.train.tag = *options.tag;
  config.validate();
  const std::string tag = config.train.effective_tag();
  require_name(tag, "train tag");

  const fs::path data_path = run_dir / "data" / (config.train.dataset + ".csv");
  if (!fs::exists(data_path)) throw std::runtime_error("dataset " + data_path.string() + " does not exist");
  const auto dataset = to_dataset(parse_dataset_csv(read_text(data_path)));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!dataset[i].coherence && config.train.regime != Regime::baseline) {
      throw ContractViolation("regime " + std::string(to_string(config.train.regime)) + " needs coherence but " +
                              data_path.string() + " row " + std::to_string(i + 2) + " has none");
    }
  }
  toydata::Dataset annotated = dataset;
  for (auto& s : annotated) {
    if (!s.coherence) s.coherence = 1.0;
  }
  const auto standardizer = toydata::Standardizer::fit(annotated);
  for (auto& s : annotated) s.x = standardizer.apply(s.x);
  const auto view = noisesim::apply_strategy(annotated, config.train.regime, config.noise.n_bins, config.noise.binned);
  if (config.train.steps > 0 && view.samples.empty()) throw ContractViolation("training view is empty");

  const auto outputs = std::vector<fs::path>{checkpoint_path(run_dir, tag, "final"),
                                             checkpoint_path(run_dir, tag, "ema"),
                                             run_dir / "metrics" / (tag + "_loss.csv"),
                                             run_dir / "metrics" / (tag + "_probe.csv")};
  for (const auto& p : outputs) {
    if (fs::exists(p)) throw std::runtime_error(p.string() + " already exists; pick another [train] tag");
  }

  denoiser::Denoiser init(config.denoiser_config(), derive_seed(config.seed, "init"));
  auto tc = config.train_config();
  if (common.seed) tc.seed = *common.seed;
  log << "train: regime " << to_string(config.train.regime) << ", " << view.samples.size() << " of "
      << view.source_size << " samples, " << tc.steps << " steps\n";
  diffusion::TrainResult result{init, init, {}, view.samples.size()};
  try {
    result = diffusion::train(init, view, tc, [](const diffusion::LossRecord& r) {
      spdlog::info("step {} lr {:.3e} loss {:.5f} smoothed {:.5f}", r.step, r.lr, r.loss, r.ema_loss);
    });
  } catch (const diffusion::TrainingDiverged& e) {
    const auto snapshot = run_dir / "metrics" / (tag + "_diverged_loss.csv");
    if (!fs::exists(snapshot)) write_new_file(snapshot, loss_csv(e.history()));
    log << "train: diverged at step " << e.step() << "; loss history written to " << snapshot.string() << '\n';
    throw;
  }

  nd::save_checkpoint(outputs[0], model_arrays(result.model, standardizer));
  nd::save_checkpoint(outputs[1], model_arrays(result.ema, standardizer));
  write_new_file(outputs[2], loss_csv(result.history));
  write_new_file(outputs[3], probe_csv(denoiser::collapse_probe(result.ema, default_grid("coherence"))));

  json params = {{"tag", tag},
                 {"regime", to_string(config.train.regime)},
                 {"dataset", config.train.dataset},
                 {"source_size", view.source_size},
                 {"training_set_size", view.samples.size()},
                 {"removed_samples", view.source_size - view.samples.size()},
                 {"n_bins", view.n_bins},
                 {"binned_coherence", view.binned},
                 {"coherence_ties", view.has_ties},
                 {"steps", tc.steps},
                 {"train_seed", tc.seed},
                 {"parameter_count", result.ema.params().parameter_count()},
                 {"config", config_json(config)}};
  if (!result.history.empty()) {
    params["initial_smoothed_loss"] = result.history.front().ema_loss;
    params["final_smoothed_loss"] = result.history.back().ema_loss;
  }
  std::vector<std::string> rel;
  for (const auto& p : outputs) rel.push_back(fs::relative(p, run_dir).generic_string());
  manifest.add_entry("train", params, rel);
  manifest.save();
  log << "train: wrote " << rel[0] << ", " << rel[1] << ", " << rel[2] << '\n';
  return outputs[1];
}

fs::path cmd_sample(const CommonOptions& common, const SampleOptions& options, std::ostream& log) {
  const fs::path run_dir = resolve_run_dir(common);
  auto manifest = Manifest::load(run_dir);
  auto config = run_config(common, run_dir);
  auto& s = config.sample;
  if (options.tag) s.tag = *options.tag;
  if (options.checkpoint) s.checkpoint = *options.checkpoint;
  if (options.n) s.n = *options.n;
  if (options.steps) s.steps = *options.steps;
  if (options.eta) s.eta = *options.eta;
  if (options.guidance) s.guidance = diffusion::parse_guidance_mode(*options.guidance);
  if (options.omega) s.omega = *options.omega;
  if (options.coherence) s.coherence = *options.coherence;
  if (options.labels) s.labels = *options.labels;
  config.validate();

  const std::string tag = s.tag.empty() ? config.train.effective_tag() : s.tag;
  const auto loaded = load_model(checkpoint_path(run_dir, tag, s.checkpoint));
  const auto spec = guidance_for(loaded.model, s.guidance, s.omega);
  const std::string name =
      options.name ? *options.name
                   : tag + "_" + std::string(to_string(s.guidance)) + "_w" + file_tag(s.omega) + "_c" +
                         file_tag(s.coherence);
  require_name(name, "sample name");
  const fs::path out = run_dir / "samples" / (name + ".csv");
  if (fs::exists(out)) throw std::runtime_error(out.string() + " already exists; pass --name");

  const std::uint64_t seed = sample_seed(common, config);
  Prompt prompt{prompt_labels(s.labels, s.n, config.data.n_classes, seed), std::vector<double>(s.n, s.coherence)};
  const auto rows = draw(loaded, prompt, spec, config.sampler_options(), seed);
  write_new_file(out, samples_csv(rows));
  const std::string rel = fs::relative(out, run_dir).generic_string();
  manifest.add_entry("sample",
                     {{"tag", tag},
                      {"checkpoint", s.checkpoint},
                      {"n", s.n},
                      {"steps", s.steps},
                      {"eta", s.eta},
                      {"guidance", to_string(s.guidance)},
                      {"omega", s.omega},
                      {"coherence", s.coherence},
                      {"labels", s.labels},
                      {"clip_x0", s.clip_x0},
                      {"seed", seed}},
                     {rel});
  manifest.save();
  log << "sample: wrote " << rel << " (" << s.n << " points, " << s.steps << " steps)\n";
  return out;
}

fs::path cmd_eval(const CommonOptions& common, const EvalOptions& options, std::ostream& log) {
  const fs::path run_dir = resolve_run_dir(common);
  auto manifest = Manifest::load(run_dir);
  const auto config = run_config(common, run_dir);

  std::string samples_rel;
  if (options.samples) {
    samples_rel = "samples/" + *options.samples + (options.samples->ends_with(".csv") ? "" : ".csv");
  } else {
    for (const auto& entry : manifest.json().at("entries")) {
      if (entry.at("command") == "sample") samples_rel = entry.at("outputs").at(0).get<std::string>();
    }
    if (samples_rel.empty()) throw std::runtime_error("eval: the run has no samples; run `cadlab sample` first");
  }
  const fs::path samples_path = run_dir / samples_rel;
  if (!fs::exists(samples_path)) throw std::runtime_error("samples " + samples_path.string() + " do not exist");
  const fs::path reference_path = options.reference ? *options.reference : run_dir / "data/reference.csv";
  const auto reference = load_reference(reference_path);
  const auto samples = parse_samples_csv(read_text(samples_path));
  if (samples.points.empty()) throw std::runtime_error("eval: " + samples_path.string() + " contains no samples");

  const auto report = metrics::evaluate(reference, samples.points, samples.labels,
                                        config.ring(0), config.eval.k);
  const std::string name = options.name ? *options.name : samples_path.stem().string();
  require_name(name, "eval name");
  const fs::path csv = run_dir / "metrics" / (name + ".csv");
  const fs::path txt = run_dir / "metrics" / (name + ".txt");
  write_new_file(csv, metrics::report_csv_header() + "\n" + metrics::report_csv_row(report) + "\n");
  write_new_file(txt, metrics::report_text(report));
  manifest.add_entry("eval",
                     {{"samples", samples_rel},
                      {"reference", reference_path.generic_string()},
                      {"reference_sha256", sha256_file(reference_path)},
                      {"k", config.eval.k}},
                     {fs::relative(csv, run_dir).generic_string(), fs::relative(txt, run_dir).generic_string()});
  manifest.save();
  log << metrics::report_text(report);
  return csv;
}

fs::path cmd_sweep(const CommonOptions& common, const SweepOptions& options, std::ostream& log) {
  const fs::path run_dir = resolve_run_dir(common);
  auto manifest = Manifest::load(run_dir);
  auto config = run_config(common, run_dir);
  if (options.axis) config.sweep.axis = *options.axis;
  if (options.grid) {
    if (options.grid->empty()) throw ConfigError("sweep: empty grid");
    config.sweep.grid = parse_grid(*options.grid);
  }
  config.validate();
  const std::string& axis = config.sweep.axis;
  const auto grid = config.sweep.grid.empty() ? default_grid(axis) : config.sweep.grid;
  if (grid.empty()) throw ConfigError("sweep: empty grid");

  const std::string tag = options.tag ? *options.tag
                                      : (config.sample.tag.empty() ? config.train.effective_tag() : config.sample.tag);
  const auto loaded = load_model(checkpoint_path(run_dir, tag, config.sample.checkpoint));
  if (!loaded.model.uses_coherence()) throw ContractViolation("sweep needs a coherence-conditioned (cad) checkpoint");
  const auto mode = axis == "guidance" && config.sample.guidance == diffusion::GuidanceMode::cfg
                        ? diffusion::GuidanceMode::cfg
                        : diffusion::GuidanceMode::ca_cfg;
  for (double v : grid) {
    if (axis == "coherence" && !(v >= 0.0 && v <= 1.0)) throw ConfigError("sweep: coherence grid value outside [0,1]");
    if (axis == "guidance" && !(v >= 0.0)) throw ConfigError("sweep: guidance rates must be non-negative");
  }

  const std::string name = options.name ? *options.name : "sweep_" + axis + "_" + tag;
  require_name(name, "sweep name");
  const fs::path csv = run_dir / "metrics" / (name + ".csv");
  const fs::path svg = run_dir / "plots" / (name + ".svg");
  for (const auto& p : {csv, svg}) {
    if (fs::exists(p)) throw std::runtime_error(p.string() + " already exists; pass --name");
  }

  const auto reference = load_reference(run_dir / "data/reference.csv");
  const std::uint64_t seed = sample_seed(common, config);
  const auto labels = prompt_labels(config.sample.labels, config.sample.n, config.data.n_classes, seed);
  std::vector<SweepRow> rows;
  for (double v : grid) {
    Prompt prompt{labels, std::vector<double>(labels.size(), axis == "coherence" ? v : config.sample.coherence)};
    const auto spec = axis == "coherence" ? diffusion::GuidanceSpec{} : guidance_for(loaded.model, mode, v);
    const auto drawn = draw(loaded, prompt, spec, config.sampler_options(), seed);
    rows.push_back({v, metrics::evaluate(reference, drawn.points, drawn.labels, config.ring(0), config.eval.k)});
    log << "sweep: " << axis << " " << format_double(v) << " fd " << format_double(rows.back().report.fd)
        << " accuracy " << format_double(rows.back().report.accuracy) << '\n';
  }
  const std::string column = axis == "guidance" ? "omega" : "coherence";
  write_new_file(csv, sweep_csv(column, rows));
  std::vector<double> acc, fd;
  for (const auto& r : rows) {
    acc.push_back(r.report.accuracy);
    fd.push_back(r.report.fd);
  }
  write_new_file(svg, two_axis_plot(tag + ": " + axis + " sweep", column, grid, {"accuracy", acc, "#1f77b4"},
                                    {"Frechet distance", fd, "#d62728"}));
  json grid_json = json::array();
  for (double v : grid) grid_json.push_back(v);
  manifest.add_entry("sweep",
                     {{"tag", tag},
                      {"axis", axis},
                      {"grid", grid_json},
                      {"guidance", axis == "guidance" ? to_string(mode) : to_string(diffusion::GuidanceMode::none)},
                      {"n", config.sample.n},
                      {"steps", config.sample.steps},
                      {"eta", config.sample.eta},
                      {"seed", seed}},
                     {fs::relative(csv, run_dir).generic_string(), fs::relative(svg, run_dir).generic_string()});
  manifest.save();
  return csv;
}

std::vector<std::string> cmd_verify(const CommonOptions& common, std::ostream& log) {
  const fs::path run_dir = resolve_run_dir(common);
  const auto manifest = Manifest::load(run_dir);
  const auto bad = manifest.verify();
  for (const auto& f : bad) log << "verify: digest mismatch or missing: " << f << '\n';
  if (bad.empty()) log << "verify: " << manifest.json().at("files").size() << " files match the manifest\n";
  return bad;
}

}  // namespace cadlab::cli
