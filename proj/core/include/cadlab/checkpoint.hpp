#pragma once

// Versioned little-endian checkpoint container.
//
//   magic   8 bytes  "CADCKPT1"
//   count   u32      number of arrays
//   per array:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u64 x rank
//     values   f64 x product(dims)
//
// Scalars are stored with rank 0 and exactly one value.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cadlab/optim.hpp"
#include "cadlab/tensor.hpp"

namespace cadlab::nd {

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'D', 'C', 'K', 'P', 'T', '1'};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const NamedArray&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& arrays);
std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

std::vector<NamedArray> to_arrays(const ParamStore& params, const std::string& prefix = "");
/// Copies values from `arrays` into same-named parameters; every parameter must be present.
void assign_from(ParamStore& params, const std::vector<NamedArray>& arrays,
                 const std::string& prefix = "");

const NamedArray* find_array(const std::vector<NamedArray>& arrays, const std::string& name);

}  // namespace cadlab::nd
