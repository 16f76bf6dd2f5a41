#include "cadlab/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cadlab/format.hpp"

namespace cadlab::cli {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <typename Int>
Int parse_int(const std::string& text) {
  Int value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("expected an integer, got '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw FormatError("expected true|false, got '" + text + "'");
}

std::string format_bool(bool v) { return v ? "true" : "false"; }

std::string format_grid(const std::vector<double>& grid) {
  std::string out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i) out += ',';
    out += format_double(grid[i]);
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
Field number(std::string section, std::string key, T& ref) {
  Field f{std::move(section), std::move(key), {}, {}};
  if constexpr (std::is_floating_point_v<T>) {
    f.get = [&ref] { return format_double(ref); };
    f.set = [&ref](const std::string& v) { ref = parse_double(v); };
  } else {
    f.get = [&ref] { return std::to_string(ref); };
    f.set = [&ref](const std::string& v) { ref = parse_int<T>(v); };
  }
  return f;
}

Field text(std::string section, std::string key, std::string& ref) {
  return {std::move(section), std::move(key), [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}

Field flag(std::string section, std::string key, bool& ref) {
  return {std::move(section), std::move(key), [&ref] { return format_bool(ref); },
          [&ref](const std::string& v) { ref = parse_bool(v); }};
}

template <typename E, typename Parse>
Field choice(std::string section, std::string key, E& ref, Parse parse) {
  return {std::move(section), std::move(key), [&ref] { return std::string(to_string(ref)); },
          [&ref, parse](const std::string& v) { ref = parse(v); }};
}

// Schema order is also the order of to_ini().
std::vector<Field> schema(ExperimentConfig& c) {
  using namespace diffusion;
  return {
      text("run", "name", c.name),
      number("run", "seed", c.seed),
      number("data", "n_classes", c.data.n_classes),
      number("data", "radius", c.data.radius),
      number("data", "sigma", c.data.sigma),
      number("data", "n_train", c.data.n_train),
      number("data", "n_reference", c.data.n_reference),
      flag("noise", "enabled", c.noise.enabled),
      number("noise", "beta", c.noise.beta),
      number("noise", "kappa", c.noise.kappa),
      number("noise", "n_bins", c.noise.n_bins),
      flag("noise", "binned", c.noise.binned),
      number("model", "embed_dim", c.model.embed_dim),
      number("model", "width", c.model.width),
      number("model", "depth", c.model.depth),
      choice("model", "layout", c.model.layout, denoiser::parse_condition_layout),
      number("model", "cond_dropout", c.model.cond_dropout),
      number("model", "coherence_frequency", c.model.coherence_frequency),
      choice("train", "regime", c.train.regime, parse_regime),
      text("train", "tag", c.train.tag),
      text("train", "dataset", c.train.dataset),
      number("train", "steps", c.train.steps),
      number("train", "batch_size", c.train.batch_size),
      choice("train", "optimizer", c.train.optimizer, nd::parse_optimizer_kind),
      number("train", "lr", c.train.lr),
      number("train", "warmup", c.train.warmup),
      number("train", "weight_decay", c.train.weight_decay),
      number("train", "ema_decay", c.train.ema_decay),
      choice("train", "schedule", c.train.schedule, parse_schedule_kind),
      choice("train", "loss_norm", c.train.loss_norm, parse_loss_norm),
      number("train", "log_every", c.train.log_every),
      text("sample", "tag", c.sample.tag),
      text("sample", "checkpoint", c.sample.checkpoint),
      number("sample", "n", c.sample.n),
      number("sample", "steps", c.sample.steps),
      number("sample", "eta", c.sample.eta),
      choice("sample", "guidance", c.sample.guidance, parse_guidance_mode),
      number("sample", "omega", c.sample.omega),
      number("sample", "coherence", c.sample.coherence),
      text("sample", "labels", c.sample.labels),
      number("sample", "clip_x0", c.sample.clip_x0),
      number("eval", "k", c.eval.k),
      text("sweep", "axis", c.sweep.axis),
      {"sweep", "grid", [&c] { return format_grid(c.sweep.grid); },
       [&c](const std::string& v) { c.sweep.grid = v.empty() ? std::vector<double>{} : parse_grid(v); }},
  };
}

}  // namespace

std::string TrainSection::effective_tag() const { return tag.empty() ? std::string(to_string(regime)) : tag; }

toydata::RingMixtureSpec ExperimentConfig::ring(std::uint64_t ring_seed) const {
  return {data.n_classes, data.radius, data.sigma, ring_seed};
}

denoiser::DenoiserConfig ExperimentConfig::denoiser_config() const {
  denoiser::DenoiserConfig d;
  d.data_dim = 2;
  d.n_classes = data.n_classes;
  d.embed_dim = model.embed_dim;
  d.width = model.width;
  d.depth = model.depth;
  d.layout = model.layout;
  d.regime = train.regime;
  d.cond_dropout = model.cond_dropout;
  d.coherence_frequency = model.coherence_frequency;
  return d;
}

diffusion::TrainConfig ExperimentConfig::train_config() const {
  diffusion::TrainConfig t;
  t.steps = train.steps;
  t.batch_size = train.batch_size;
  t.seed = derive_seed(seed, "train");
  t.regime = train.regime;
  t.schedule.kind = train.schedule;
  t.norm = train.loss_norm;
  t.ema_decay = train.ema_decay;
  t.lr = {train.lr, train.warmup, train.steps};
  t.optimizer.kind = train.optimizer;
  t.optimizer.weight_decay = train.weight_decay;
  t.log_every = train.log_every;
  return t;
}

diffusion::SamplerOptions ExperimentConfig::sampler_options() const {
  diffusion::SamplerOptions o;
  o.steps = sample.steps;
  o.eta = sample.eta;
  o.schedule.kind = train.schedule;
  o.clip_x0 = sample.clip_x0;
  return o;
}

void ExperimentConfig::validate() const {
  const auto check = [](bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ConfigError("config: " + field + ": " + what);
  };
  check(!name.empty() && name.find('/') == std::string::npos && name != "." && name != "..", "[run] name",
        "must be a plain directory name");
  check(data.n_classes >= 2, "[data] n_classes", "must be at least 2");
  check(data.radius > 0.0, "[data] radius", "must be positive");
  check(data.sigma > 0.0, "[data] sigma", "must be positive");
  check(data.n_reference >= 3, "[data] n_reference", "must be at least 3");
  check(noise.beta > 0.0 && noise.beta < 1.0, "[noise] beta", "must lie in (0,1)");
  check(noise.kappa > 0.0 && noise.kappa < 1.0, "[noise] kappa", "must lie in (0,1)");
  check(noise.n_bins >= 2, "[noise] n_bins", "must be at least 2");
  check(model.embed_dim >= 2 && model.embed_dim % 2 == 0, "[model] embed_dim", "must be even and >= 2");
  check(model.width >= 1, "[model] width", "must be positive");
  check(model.depth >= 1, "[model] depth", "must be positive");
  check(model.cond_dropout >= 0.0 && model.cond_dropout < 1.0, "[model] cond_dropout", "must lie in [0,1)");
  check(model.coherence_frequency >= 1.0, "[model] coherence_frequency", "must be at least 1");
  check(train.dataset == "corrupted" || train.dataset == "clean", "[train] dataset", "must be corrupted|clean");
  check(train.steps >= 0, "[train] steps", "must be non-negative");
  check(train.batch_size >= 1, "[train] batch_size", "must be positive");
  check(train.lr > 0.0, "[train] lr", "must be positive");
  check(train.warmup >= 0, "[train] warmup", "must be non-negative");
  check(train.steps == 0 || train.warmup < train.steps, "[train] warmup", "must be smaller than steps");
  check(train.weight_decay >= 0.0, "[train] weight_decay", "must be non-negative");
  check(train.ema_decay >= 0.0 && train.ema_decay <= 1.0, "[train] ema_decay", "must lie in [0,1]");
  check(train.log_every >= 1, "[train] log_every", "must be positive");
  check(train.tag.find('/') == std::string::npos, "[train] tag", "must not contain '/'");
  check(sample.checkpoint == "ema" || sample.checkpoint == "final", "[sample] checkpoint", "must be ema|final");
  check(sample.steps >= 1, "[sample] steps", "must be at least 1");
  check(sample.eta >= 0.0 && sample.eta <= 1.0, "[sample] eta", "must lie in [0,1]");
  check(sample.omega >= 0.0, "[sample] omega", "must be non-negative");
  check(sample.coherence >= 0.0 && sample.coherence <= 1.0, "[sample] coherence", "must lie in [0,1]");
  check(sample.clip_x0 >= 0.0, "[sample] clip_x0", "must be non-negative");
  check(eval.k >= 1, "[eval] k", "must be positive");
  check(sweep.axis == "coherence" || sweep.axis == "guidance", "[sweep] axis", "must be coherence|guidance");
}

ExperimentConfig parse_config(const std::string& content) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(content);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
  ExperimentConfig config;
  auto fields = schema(config);
  std::set<std::string> sections;
  for (const auto& f : fields) sections.insert(f.section);

  for (const auto& [section, body] : tree) {
    if (!sections.count(section)) {
      if (body.empty()) throw ConfigError("config: key '" + section + "' outside any section");
      throw ConfigError("config: unknown section [" + section + "]");
    }
    for (const auto& [key, node] : body) {
      auto it = std::find_if(fields.begin(), fields.end(),
                             [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == fields.end()) throw ConfigError("config: unknown key [" + section + "] " + key);
      const std::string value = trim(node.get_value<std::string>());
      try {
        it->set(value);
      } catch (const std::exception& e) {
        throw ConfigError("config: [" + section + "] " + key + ": " + e.what());
      }
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  std::string out;
  std::string current;
  for (const auto& f : schema(copy)) {
    if (f.section != current) {
      if (!current.empty()) out += '\n';
      out += "[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

std::map<std::string, std::string> flatten(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  std::map<std::string, std::string> out;
  for (const auto& f : schema(copy)) out[f.section + "." + f.key] = f.get();
  return out;
}

std::vector<double> parse_grid(const std::string& content) {
  std::vector<double> grid;
  for (const auto& part : split(content, ',')) {
    const auto item = trim(part);
    if (item.empty()) throw ConfigError("grid: empty entry in '" + content + "'");
    try {
      grid.push_back(parse_double(item));
    } catch (const FormatError& e) {
      throw ConfigError(std::string("grid: ") + e.what());
    }
  }
  return grid;
}

std::vector<double> default_grid(const std::string& axis) {
  if (axis == "guidance") return {0.0, 1.0, 2.0, 5.0, 10.0, 20.0};
  std::vector<double> grid;
  for (int i = 0; i < 8; ++i) grid.push_back(i / 7.0);
  return grid;
}

}  // namespace cadlab::cli
