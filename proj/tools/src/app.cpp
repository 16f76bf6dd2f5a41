#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cadlab/cli/commands.hpp"
#include "cadlab/diffusion.hpp"
#include "cadlab/error.hpp"
#include "cadlab/version.hpp"

namespace cadlab::cli {

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailure = 1;      // I/O, missing inputs, refused overwrite
constexpr int kUsage = 2;        // bad flags or config
constexpr int kContract = 3;     // inconsistent request (e.g. ca-cfg on a baseline model)
constexpr int kNumerical = 4;    // divergence, non-finite values
constexpr int kVerifyFailed = 5;

void add_common(CLI::App& cmd, CommonOptions& common, bool run_required) {
  cmd.add_option("--config", common.config, "Experiment config (INI)");
  auto* run = cmd.add_option("--run", common.run, "Run name under --out, or path to a run directory");
  if (run_required) run->required();
  cmd.add_option("--seed", common.seed, "Override the seed of this command");
  cmd.add_option("--out", common.out, "Root directory for runs")->capture_default_str();
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Coherence-aware diffusion lab"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  CommonOptions common;
  TrainOptions train;
  SampleOptions sample;
  EvalOptions eval;
  SweepOptions sweep;

  auto* sim_cmd = app.add_subcommand("simulate", "Generate clean, corrupted and reference datasets");
  add_common(*sim_cmd, common, false);
  sim_cmd->get_option("--config")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a denoiser on a simulated run");
  add_common(*train_cmd, common, true);
  train_cmd->add_option("--tag", train.tag, "Checkpoint tag (default: regime name)");

  auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a trained checkpoint");
  add_common(*sample_cmd, common, true);
  sample_cmd->add_option("--tag", sample.tag, "Model tag");
  sample_cmd->add_option("--checkpoint", sample.checkpoint, "ema|final");
  sample_cmd->add_option("--n", sample.n, "Number of samples");
  sample_cmd->add_option("--steps", sample.steps, "Sampler steps");
  sample_cmd->add_option("--eta", sample.eta, "0 = DDIM, 1 = DDPM-ancestral");
  sample_cmd->add_option("--guidance", sample.guidance, "none|cfg|ca-cfg");
  sample_cmd->add_option("--omega", sample.omega, "Guidance rate");
  sample_cmd->add_option("--coherence", sample.coherence, "Prompted coherence");
  sample_cmd->add_option("--labels", sample.labels, "balanced, random, or comma-separated class ids");
  sample_cmd->add_option("--name", sample.name, "Output name under samples/");

  auto* eval_cmd = app.add_subcommand("eval", "Score samples against the reference data");
  add_common(*eval_cmd, common, true);
  eval_cmd->add_option("--samples", eval.samples, "Sample file name under samples/ (default: latest)");
  eval_cmd->add_option("--reference", eval.reference, "Reference dataset CSV");
  eval_cmd->add_option("--name", eval.name, "Report name under metrics/");

  auto* sweep_cmd = app.add_subcommand("sweep", "Sample and score over a guidance or coherence grid");
  add_common(*sweep_cmd, common, true);
  sweep_cmd->add_option("--tag", sweep.tag, "Model tag");
  sweep_cmd->add_option("--axis", sweep.axis, "guidance|coherence");
  sweep_cmd->add_option("--grid", sweep.grid, "Comma-separated grid values");
  sweep_cmd->add_option("--name", sweep.name, "Output name");

  auto* verify_cmd = app.add_subcommand("verify", "Check every file of a run against its manifest digests");
  add_common(*verify_cmd, common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  auto& log = std::cout;
  try {
    if (*sim_cmd) cmd_simulate(common, log);
    if (*train_cmd) cmd_train(common, train, log);
    if (*sample_cmd) cmd_sample(common, sample, log);
    if (*eval_cmd) cmd_eval(common, eval, log);
    if (*sweep_cmd) cmd_sweep(common, sweep, log);
    if (*verify_cmd && !cmd_verify(common, log).empty()) return kVerifyFailed;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kContract;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}

}  // namespace cadlab::cli
