#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cadlab/cli/config.hpp"
#include "cadlab/cli/csv_io.hpp"
#include "cadlab/denoiser.hpp"
#include "cadlab/toydata.hpp"

namespace cadlab::cli {

/// Options shared by every subcommand.
struct CommonOptions {
  std::optional<std::filesystem::path> config;
  /// Run name (resolved under `out`) or path to an existing run directory.
  std::optional<std::string> run;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "runs";
};

struct TrainOptions {
  std::optional<std::string> tag;
};

struct SampleOptions {
  std::optional<std::string> tag;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> n;
  std::optional<std::size_t> steps;
  std::optional<double> eta;
  std::optional<std::string> guidance;
  std::optional<double> omega;
  std::optional<double> coherence;
  std::optional<std::string> labels;
  std::optional<std::string> name;
};

struct EvalOptions {
  std::optional<std::string> samples;
  std::optional<std::filesystem::path> reference;
  std::optional<std::string> name;
};

struct SweepOptions {
  std::optional<std::string> tag;
  std::optional<std::string> axis;
  std::optional<std::string> grid;
  std::optional<std::string> name;
};

std::filesystem::path cmd_simulate(const CommonOptions& common, std::ostream& log);
std::filesystem::path cmd_train(const CommonOptions& common, const TrainOptions& options, std::ostream& log);
std::filesystem::path cmd_sample(const CommonOptions& common, const SampleOptions& options, std::ostream& log);
std::filesystem::path cmd_eval(const CommonOptions& common, const EvalOptions& options, std::ostream& log);
std::filesystem::path cmd_sweep(const CommonOptions& common, const SweepOptions& options, std::ostream& log);
/// Files whose digest no longer matches the manifest.
std::vector<std::string> cmd_verify(const CommonOptions& common, std::ostream& log);

/// A trained model together with the data standardizer stored in its checkpoint.
struct LoadedModel {
  denoiser::Denoiser model;
  toydata::Standardizer standardizer;
};

LoadedModel load_model(const std::filesystem::path& checkpoint);
std::vector<nd::NamedArray> model_arrays(const denoiser::Denoiser& model, const toydata::Standardizer& standardizer);

/// "balanced" cycles 0..N-1, "random" draws uniform ids from `seed`; otherwise a
/// comma-separated list of ids, cycled to length n.
std::vector<std::size_t> prompt_labels(const std::string& spec, std::size_t n, std::size_t n_classes,
                                       std::uint64_t seed = 0);

/// Runs the CLI; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace cadlab::cli
