#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cadlab/denoiser.hpp"
#include "cadlab/diffusion.hpp"
#include "cadlab/metrics.hpp"
#include "cadlab/noisesim.hpp"
#include "cadlab/points.hpp"
#include "cadlab/toydata.hpp"

namespace cadlab::cli {

inline constexpr const char* kDatasetHeader = "x0,x1,clean_label,noisy_label,alpha,u,coherence";
inline constexpr const char* kSamplesHeader = "x0,x1,label,coherence";
inline constexpr const char* kLossHeader = "step,lr,loss,ema_loss";
inline constexpr const char* kProbeHeader = "coherence,mean_pairwise_distance";

/// One dataset row as stored on disk.
struct DatasetRow {
  std::vector<double> x;
  std::size_t clean_label = 0;
  std::size_t noisy_label = 0;
  std::optional<double> alpha;
  std::optional<double> u;
  std::optional<double> coherence;
};

std::vector<DatasetRow> clean_rows(const toydata::Dataset& clean);
std::vector<DatasetRow> corrupted_rows(const noisesim::CorruptedDataset& corrupted,
                                       const toydata::Dataset& clean);

/// Training view of rows: label = noisy label, coherence carried over.
toydata::Dataset to_dataset(const std::vector<DatasetRow>& rows);

std::string dataset_csv(const std::vector<DatasetRow>& rows);
std::vector<DatasetRow> parse_dataset_csv(const std::string& content);

struct SampleRows {
  PointSet points{2, {}};
  std::vector<std::size_t> labels;
  std::vector<double> coherence;
};

std::string samples_csv(const SampleRows& rows);
SampleRows parse_samples_csv(const std::string& content);

std::string loss_csv(const std::vector<diffusion::LossRecord>& history);
std::string probe_csv(const std::vector<denoiser::CollapseRow>& rows);

struct SweepRow {
  double value = 0.0;
  metrics::MetricsReport report;
};

/// value column is named after the axis ("omega" or "coherence").
std::string sweep_csv(const std::string& value_column, const std::vector<SweepRow>& rows);

std::string read_text(const std::filesystem::path& path);
/// Writes a new file; refuses to replace an existing one.
void write_new_file(const std::filesystem::path& path, const std::string& content);

}  // namespace cadlab::cli
