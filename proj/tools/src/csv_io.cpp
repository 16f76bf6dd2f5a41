#include "cadlab/cli/csv_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cadlab/error.hpp"
#include "cadlab/format.hpp"

namespace cadlab::cli {

namespace {

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> parse_optional(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  return parse_double(cell);
}

std::size_t parse_label(const std::string& cell) {
  std::size_t value = 0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    throw FormatError("not a label: '" + cell + "'");
  }
  return value;
}

// Splits content into lines, checks the header and the column count of every row.
std::vector<std::vector<std::string>> parse_table(const std::string& content, const std::string& header) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("csv: missing header, expected '" + header + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw FormatError("csv: header '" + line + "' does not match '" + header + "'");
  const std::size_t columns = split(header, ',').size();
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != columns) {
      throw FormatError("csv: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " fields, expected " + std::to_string(columns));
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

std::vector<DatasetRow> clean_rows(const toydata::Dataset& clean) {
  std::vector<DatasetRow> rows;
  rows.reserve(clean.size());
  for (const auto& s : clean) rows.push_back({s.x, s.y, s.y, std::nullopt, std::nullopt, 1.0});
  return rows;
}

std::vector<DatasetRow> corrupted_rows(const noisesim::CorruptedDataset& corrupted, const toydata::Dataset& clean) {
  require(corrupted.records.size() == clean.size(), "corrupted_rows: record count mismatch");
  std::vector<DatasetRow> rows;
  rows.reserve(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto& r = corrupted.records[i];
    rows.push_back({clean[i].x, r.clean_label, r.noisy_label, r.alpha, r.target_entropy, r.coherence});
  }
  return rows;
}

toydata::Dataset to_dataset(const std::vector<DatasetRow>& rows) {
  toydata::Dataset out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    toydata::AnnotatedSample s;
    s.x = r.x;
    s.y = r.noisy_label;
    s.coherence = r.coherence;
    out.push_back(std::move(s));
  }
  return out;
}

std::string dataset_csv(const std::vector<DatasetRow>& rows) {
  std::string out = std::string(kDatasetHeader) + "\n";
  for (const auto& r : rows) {
    require(r.x.size() == 2, "dataset_csv: only 2-D points are stored");
    out += format_double(r.x[0]) + ',' + format_double(r.x[1]) + ',' + std::to_string(r.clean_label) + ',' +
           std::to_string(r.noisy_label) + ',' + optional_cell(r.alpha) + ',' + optional_cell(r.u) + ',' +
           optional_cell(r.coherence) + '\n';
  }
  return out;
}

std::vector<DatasetRow> parse_dataset_csv(const std::string& content) {
  std::vector<DatasetRow> rows;
  for (const auto& c : parse_table(content, kDatasetHeader)) {
    DatasetRow r;
    r.x = {parse_double(c[0]), parse_double(c[1])};
    r.clean_label = parse_label(c[2]);
    r.noisy_label = parse_label(c[3]);
    r.alpha = parse_optional(c[4]);
    r.u = parse_optional(c[5]);
    r.coherence = parse_optional(c[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string samples_csv(const SampleRows& rows) {
  require(rows.points.dim == 2, "samples_csv: only 2-D points are stored");
  require(rows.labels.size() == rows.points.size() && rows.coherence.size() == rows.points.size(),
          "samples_csv: one label and coherence per point");
  std::string out = std::string(kSamplesHeader) + "\n";
  for (std::size_t i = 0; i < rows.points.size(); ++i) {
    const auto p = rows.points[i];
    out += format_double(p[0]) + ',' + format_double(p[1]) + ',' + std::to_string(rows.labels[i]) + ',' +
           format_double(rows.coherence[i]) + '\n';
  }
  return out;
}

SampleRows parse_samples_csv(const std::string& content) {
  SampleRows rows;
  for (const auto& c : parse_table(content, kSamplesHeader)) {
    rows.points.push_back(std::vector<double>{parse_double(c[0]), parse_double(c[1])});
    rows.labels.push_back(parse_label(c[2]));
    rows.coherence.push_back(parse_double(c[3]));
  }
  return rows;
}

std::string loss_csv(const std::vector<diffusion::LossRecord>& history) {
  std::string out = std::string(kLossHeader) + "\n";
  for (const auto& r : history) {
    out += std::to_string(r.step) + ',' + format_double(r.lr) + ',' + format_double(r.loss) + ',' +
           format_double(r.ema_loss) + '\n';
  }
  return out;
}

std::string probe_csv(const std::vector<denoiser::CollapseRow>& rows) {
  std::string out = std::string(kProbeHeader) + "\n";
  for (const auto& r : rows) out += format_double(r.coherence) + ',' + format_double(r.mean_distance) + '\n';
  return out;
}

std::string sweep_csv(const std::string& value_column, const std::vector<SweepRow>& rows) {
  std::string out = value_column + ",fd,accuracy,precision,recall,density,coverage\n";
  for (const auto& r : rows) {
    const auto& m = r.report;
    out += format_double(r.value) + ',' + format_double(m.fd) + ',' + format_double(m.accuracy) + ',' +
           format_double(m.precision) + ',' + format_double(m.recall) + ',' + format_double(m.density) + ',' +
           format_double(m.coverage) + '\n';
  }
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_new_file(const std::filesystem::path& path, const std::string& content) {
  if (std::filesystem::exists(path)) {
    throw std::runtime_error(path.string() + " already exists; outputs are never overwritten");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create " + path.string());
  out << content;
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace cadlab::cli
