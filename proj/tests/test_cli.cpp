#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cadlab/cli/commands.hpp"
#include "cadlab/cli/config.hpp"
#include "cadlab/cli/csv_io.hpp"
#include "cadlab/cli/manifest.hpp"
#include "cadlab/noisesim.hpp"

using namespace cadlab;
using namespace cadlab::cli;
namespace fs = std::filesystem;

namespace {

// Scratch directory removed at the end of the test case.
struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("cadlab_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "cadlab");
  args.insert(args.begin() + 1, {"--log-level", "error"});
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path write(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

// Small, fast experiment.
std::string small_config(const std::string& extra = "", const std::string& regime = "cad", int steps = 20) {
  return "[run]\nname = tiny\nseed = 3\n"
         "[data]\nn_train = 400\nn_reference = 200\n"
         "[model]\nembed_dim = 8\nwidth = 16\ndepth = 2\n"
         "[train]\nregime = " + regime + "\nsteps = " + std::to_string(steps) +
         "\nbatch_size = 32\nwarmup = " + std::to_string(steps / 10) + "\nlog_every = 5\n"
         "[sample]\nn = 64\nsteps = 10\n" +
         extra;
}

nlohmann::json manifest_of(const fs::path& run) { return nlohmann::json::parse(read_text(run / kManifestFile)); }

std::size_t csv_rows(const fs::path& file) {
  std::istringstream in(read_text(file));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += !line.empty();
  return n - 1;
}

}  // namespace

TEST_CASE("config defaults and round trip") {
  const auto defaults = parse_config("");
  CHECK(defaults.data.n_classes == 8);
  CHECK(defaults.noise.beta == 0.5);
  CHECK(defaults.train.steps == 5000);
  CHECK(defaults.train.optimizer == nd::OptimizerKind::lamb);
  CHECK(defaults.sample.steps == 250);

  const auto custom = parse_config(small_config("[sweep]\naxis = guidance\ngrid = 0, 1, 5, 20\n"));
  const auto again = parse_config(to_ini(custom));
  CHECK(flatten(custom) == flatten(again));
  CHECK(again.sweep.grid == std::vector<double>{0, 1, 5, 20});
}

TEST_CASE("config errors name the offending field") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("[train]\nstepz = 3\n").find("[train] stepz") != std::string::npos);
  CHECK(message("[bogus]\nx = 1\n").find("bogus") != std::string::npos);
  CHECK(message("[train]\nsteps = many\n").find("[train] steps") != std::string::npos);
  CHECK(message("[noise]\nbeta = 1.5\n").find("beta") != std::string::npos);
  CHECK(message("[train]\nregime = majority\n").find("regime") != std::string::npos);
}

TEST_CASE("grids") {
  CHECK(parse_grid("0,1, 2.5") == std::vector<double>{0, 1, 2.5});
  CHECK_THROWS_AS(parse_grid("0,,1"), ConfigError);
  CHECK_THROWS_AS(parse_grid("0,x"), ConfigError);
  CHECK(default_grid("guidance") == std::vector<double>{0, 1, 2, 5, 10, 20});
  const auto c = default_grid("coherence");
  REQUIRE(c.size() == 8);
  CHECK(c.front() == 0.0);
  CHECK(c.back() == 1.0);
  CHECK(c[1] == doctest::Approx(1.0 / 7).epsilon(1e-15));
}

TEST_CASE("prompt labels") {
  CHECK(prompt_labels("balanced", 5, 3) == std::vector<std::size_t>{0, 1, 2, 0, 1});
  CHECK(prompt_labels("4,1", 3, 8) == std::vector<std::size_t>{4, 1, 4});
  const auto a = prompt_labels("random", 4000, 8, 11);
  CHECK(a == prompt_labels("random", 4000, 8, 11));
  CHECK(a != prompt_labels("random", 4000, 8, 12));
  std::vector<std::size_t> counts(8, 0);
  for (auto y : a) ++counts.at(y);
  // 5 binomial standard deviations around 500.
  for (auto n : counts) CHECK(std::abs(static_cast<double>(n) - 500.0) <= 5.0 * std::sqrt(4000.0 / 8 * 7 / 8));
  CHECK_THROWS_AS(prompt_labels("9", 2, 8), ConfigError);
  CHECK_THROWS_AS(prompt_labels("1,,2", 2, 8), ConfigError);
}

TEST_CASE("dataset csv round trip is exact") {
  const auto clean = toydata::generate({8, 4.0, 0.4, 1}, 40);
  noisesim::NoiseSimConfig noise;
  noise.n_classes = 8;
  const auto corrupted = noisesim::corrupt_dataset(clean, noise);
  const auto rows = corrupted_rows(corrupted, clean);
  const auto text = dataset_csv(rows);
  CHECK(text.rfind(std::string(kDatasetHeader) + "\n", 0) == 0);
  const auto back = parse_dataset_csv(text);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].x == rows[i].x);
    CHECK(back[i].noisy_label == rows[i].noisy_label);
    CHECK(back[i].clean_label == rows[i].clean_label);
    CHECK(back[i].coherence == rows[i].coherence);
    CHECK(back[i].alpha == rows[i].alpha);
  }
  CHECK(dataset_csv(back) == text);

  const auto plain = parse_dataset_csv(dataset_csv(clean_rows(clean)));
  CHECK_FALSE(plain[0].alpha.has_value());
  CHECK(plain[0].coherence.value() == 1.0);
  CHECK_THROWS(parse_dataset_csv("x0,x1\n1,2\n"));
}

TEST_CASE("samples csv round trip") {
  SampleRows rows;
  const double p[2] = {0.1, -2.5e-7};
  rows.points.push_back(p);
  rows.labels.push_back(3);
  rows.coherence.push_back(1.0 / 7);
  const auto back = parse_samples_csv(samples_csv(rows));
  CHECK(back.points.coords == rows.points.coords);
  CHECK(back.labels == rows.labels);
  CHECK(back.coherence == rows.coherence);
}

TEST_CASE("files are never overwritten") {
  TempDir tmp;
  write_new_file(tmp.path / "a.txt", "one");
  CHECK_THROWS(write_new_file(tmp.path / "a.txt", "two"));
  CHECK(read_text(tmp.path / "a.txt") == "one");
}

TEST_CASE("manifest digests and verification") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  TempDir tmp;
  write_new_file(tmp.path / "x.txt", "payload");
  auto m = Manifest::create(tmp.path, "r", 1, nlohmann::json::object());
  m.add_entry("test", nlohmann::json::object(), {"x.txt"});
  m.save();
  CHECK_THROWS(m.add_entry("again", nlohmann::json::object(), {"x.txt"}));
  const auto loaded = Manifest::load(tmp.path);
  CHECK(loaded.digest_of("x.txt") == sha256_hex("payload"));
  CHECK(loaded.verify().empty());
  std::ofstream(tmp.path / "x.txt") << "tampered";
  CHECK(loaded.verify() == std::vector<std::string>{"x.txt"});
}

TEST_CASE("exit codes") {
  TempDir tmp;
  const auto out = tmp.path.string();
  CHECK(invoke({}) == 2);
  CHECK(invoke({"simulate", "--out", out}) == 2);
  CHECK(invoke({"frobnicate"}) == 2);
  CHECK(invoke({"simulate", "--config", write(tmp.path / "bad.ini", "[train]\nstepz = 1\n").string(), "--out", out}) ==
        2);
  CHECK(invoke({"simulate", "--config", (tmp.path / "missing.ini").string(), "--out", out}) != 0);
  CHECK(invoke({"eval", "--run", "nope", "--out", out}) == 1);
}

TEST_CASE("simulate: empty dataset, reproducible digests, flip-rate report") {
  TempDir tmp;
  const auto out = tmp.path.string();
  const auto empty = write(tmp.path / "empty.ini", "[data]\nn_train = 0\n");
  REQUIRE(invoke({"simulate", "--config", empty.string(), "--run", "e", "--out", out}) == 0);
  CHECK(csv_rows(tmp.path / "e/data/corrupted.csv") == 0);
  CHECK(csv_rows(tmp.path / "e/data/clean.csv") == 0);
  CHECK(csv_rows(tmp.path / "e/data/reference.csv") == 2000);

  const auto cfg = write(tmp.path / "big.ini", "[run]\nseed = 4\n[data]\nn_classes = 10\nn_train = 100000\nn_reference = 10\n");
  REQUIRE(invoke({"simulate", "--config", cfg.string(), "--run", "a", "--out", out}) == 0);
  REQUIRE(invoke({"simulate", "--config", cfg.string(), "--run", "b", "--out", out}) == 0);
  CHECK(invoke({"simulate", "--config", cfg.string(), "--run", "a", "--out", out}) == 1);
  const auto ma = manifest_of(tmp.path / "a");
  const auto mb = manifest_of(tmp.path / "b");
  for (const auto& file : {"data/clean.csv", "data/corrupted.csv", "data/reference.csv", "metrics/simulate_stats.txt"}) {
    CHECK(ma["files"][file]["sha256"] == mb["files"][file]["sha256"]);
  }

  const auto stats = read_text(tmp.path / "a/metrics/simulate_stats.txt");
  const auto value = [&](const std::string& key) {
    const auto pos = stats.find(key + ": ");
    REQUIRE(pos != std::string::npos);
    return std::stod(stats.substr(pos + key.size() + 2));
  };
  CHECK(value("flip_rate_oracle") == doctest::Approx(0.30456748314278714).epsilon(1e-10));
  CHECK(value("flip_rate_gap") <= 0.01);
  CHECK(value("coherence_ks") < 0.01);
}

TEST_CASE("train, sample, eval, sweep, verify on a tiny run") {
  TempDir tmp;
  const auto out = tmp.path.string();
  const auto cfg = write(tmp.path / "tiny.ini", small_config());
  REQUIRE(invoke({"simulate", "--config", cfg.string(), "--run", "t", "--out", out}) == 0);
  const auto run = tmp.path / "t";

  SUBCASE("zero steps stores the initial model") {
    const auto zero = write(tmp.path / "zero.ini", small_config("", "cad", 0));
    REQUIRE(invoke({"train", "--run", "t", "--out", out, "--config", zero.string(), "--tag", "z"}) == 0);
    CHECK(read_text(run / "checkpoints/z.final.ckpt") == read_text(run / "checkpoints/z.ema.ckpt"));
  }

  SUBCASE("pipeline") {
    REQUIRE(invoke({"train", "--run", "t", "--out", out, "--tag", "a"}) == 0);
    REQUIRE(invoke({"train", "--run", "t", "--out", out, "--tag", "b"}) == 0);
    CHECK(read_text(run / "checkpoints/a.ema.ckpt") == read_text(run / "checkpoints/b.ema.ckpt"));
    CHECK(invoke({"train", "--run", "t", "--out", out, "--tag", "a"}) == 1);

    REQUIRE(invoke({"sample", "--run", "t", "--out", out, "--tag", "a", "--guidance", "none", "--coherence", "1",
                 "--name", "plain"}) == 0);
    REQUIRE(invoke({"sample", "--run", "t", "--out", out, "--tag", "a", "--guidance", "ca-cfg", "--omega", "0",
                 "--name", "guided0"}) == 0);
    CHECK(read_text(run / "samples/plain.csv") == read_text(run / "samples/guided0.csv"));
    REQUIRE(invoke({"sample", "--run", "t", "--out", out, "--tag", "a", "--guidance", "none", "--coherence", "1",
                 "--name", "plain2"}) == 0);
    CHECK(read_text(run / "samples/plain.csv") == read_text(run / "samples/plain2.csv"));
    CHECK(invoke({"sample", "--run", "t", "--out", out, "--tag", "a", "--guidance", "cfg", "--omega", "1"}) == 3);

    REQUIRE(invoke({"eval", "--run", "t", "--out", out, "--samples", "plain"}) == 0);
    CHECK(fs::exists(run / "metrics/plain.csv"));
    CHECK(fs::exists(run / "metrics/plain.txt"));
    CHECK(invoke({"eval", "--run", "t", "--out", out, "--samples", "plain", "--name", "other", "--reference",
               (tmp.path / "none.csv").string()}) == 1);

    REQUIRE(invoke({"sweep", "--run", "t", "--out", out, "--tag", "a", "--axis", "coherence"}) == 0);
    CHECK(csv_rows(run / "metrics/sweep_coherence_a.csv") == 8);
    CHECK(fs::exists(run / "plots/sweep_coherence_a.svg"));
    REQUIRE(invoke({"sweep", "--run", "t", "--out", out, "--tag", "a", "--axis", "guidance", "--grid", "0,1,5,20"}) == 0);
    const auto sweep = read_text(run / "metrics/sweep_guidance_a.csv");
    CHECK(sweep.rfind("omega,", 0) == 0);
    CHECK(csv_rows(run / "metrics/sweep_guidance_a.csv") == 4);
    CHECK(invoke({"sweep", "--run", "t", "--out", out, "--tag", "a", "--axis", "guidance", "--grid", "",
               "--name", "empty"}) == 2);

    CHECK(invoke({"verify", "--run", "t", "--out", out}) == 0);
    std::ofstream(run / "samples/plain.csv", std::ios::app) << "0,0,0,1\n";
    CHECK(invoke({"verify", "--run", "t", "--out", out}) == 5);
  }

  SUBCASE("baseline checkpoints refuse ca-cfg") {
    const auto base = write(tmp.path / "base.ini", small_config("", "baseline"));
    REQUIRE(invoke({"train", "--run", "t", "--out", out, "--config", base.string()}) == 0);
    CHECK(invoke({"sample", "--run", "t", "--out", out, "--tag", "baseline", "--guidance", "ca-cfg", "--omega", "1"}) == 3);
    CHECK(invoke({"sweep", "--run", "t", "--out", out, "--tag", "baseline"}) == 3);
  }

  SUBCASE("filtered training drops the three lowest bins") {
    const auto filt = write(tmp.path / "filt.ini", small_config("", "filtered"));
    REQUIRE(invoke({"train", "--run", "t", "--out", out, "--config", filt.string()}) == 0);
    const auto entries = manifest_of(run)["entries"];
    const auto& params = entries.back()["parameters"];
    CHECK(params["source_size"] == 400);
    CHECK(params["training_set_size"] == 250);
    CHECK(params["removed_samples"] == 150);
  }

  SUBCASE("data settings cannot change inside a run") {
    const auto moved = write(tmp.path / "moved.ini", small_config("[noise]\nbeta = 0.2\n"));
    CHECK(invoke({"train", "--run", "t", "--out", out, "--config", moved.string()}) == 2);
  }
}

TEST_CASE("eval of the reference against itself") {
  TempDir tmp;
  const auto out = tmp.path.string();
  const auto cfg = write(tmp.path / "tiny.ini", small_config());
  REQUIRE(invoke({"simulate", "--config", cfg.string(), "--run", "t", "--out", out}) == 0);
  const auto run = tmp.path / "t";
  // Turn the reference set into a samples file.
  const auto rows = parse_dataset_csv(read_text(run / "data/reference.csv"));
  SampleRows samples;
  for (const auto& r : rows) {
    samples.points.push_back(r.x);
    samples.labels.push_back(r.clean_label);
    samples.coherence.push_back(1.0);
  }
  write_new_file(run / "samples/self.csv", samples_csv(samples));
  REQUIRE(invoke({"eval", "--run", "t", "--out", out, "--samples", "self"}) == 0);
  const auto text = read_text(run / "metrics/self.csv");
  const auto row = text.substr(text.find('\n') + 1);
  std::vector<double> cols;
  std::istringstream in(row);
  for (std::string cell; std::getline(in, cell, ',');) cols.push_back(std::stod(cell));
  // fd, is_analog, accuracy, precision, recall, density, coverage, ...
  CHECK(cols[0] <= 1e-8);
  CHECK(cols[2] >= 0.99);
  CHECK(cols[3] == 1.0);
  CHECK(cols[4] == 1.0);
  CHECK(cols[6] == 1.0);

  write_new_file(run / "samples/none.csv", std::string(kSamplesHeader) + "\n");
  CHECK(invoke({"eval", "--run", "t", "--out", out, "--samples", "none"}) == 1);
}
