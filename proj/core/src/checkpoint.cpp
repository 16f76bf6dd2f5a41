#include "cadlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cadlab/error.hpp"

namespace cadlab::nd {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated while reading a name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& arrays) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    require(element_count(a.shape) == a.values.size(),
            "checkpoint array '" + a.name + "' has inconsistent shape");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    for (double v : a.values) put<double>(out, v);
  }
  return out;
}

std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError("not a CADCKPT1 checkpoint (bad magic)");
  }
  std::vector<std::uint8_t> body(bytes.begin() + sizeof(kCheckpointMagic), bytes.end());
  Reader in(body);
  const auto count = in.get<std::uint32_t>("array count");
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name = in.get_string(in.get<std::uint32_t>("name length"));
    const auto rank = in.get<std::uint32_t>("rank");
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(in.get<std::uint64_t>("dimension"));
    const auto n = element_count(a.shape);
    if (n > body.size() / sizeof(double)) throw FormatError("checkpoint array '" + a.name + "' is too large");
    a.values.resize(n);
    for (auto& v : a.values) v = in.get<double>("values");
    arrays.push_back(std::move(a));
  }
  if (!in.done()) throw FormatError("trailing bytes after the last checkpoint array");
  return arrays;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  const auto bytes = encode_checkpoint(arrays);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<NamedArray> to_arrays(const ParamStore& params, const std::string& prefix) {
  std::vector<NamedArray> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i];
    out.push_back({prefix + params.name(i), t.shape(), {t.data().begin(), t.data().end()}});
  }
  return out;
}

const NamedArray* find_array(const std::vector<NamedArray>& arrays, const std::string& name) {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void assign_from(ParamStore& params, const std::vector<NamedArray>& arrays, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* a = find_array(arrays, prefix + params.name(i));
    if (a == nullptr) throw FormatError("checkpoint is missing array '" + prefix + params.name(i) + "'");
    if (a->shape != params[i].shape()) {
      throw FormatError("checkpoint array '" + a->name + "' has shape " + shape_string(a->shape) +
                        ", expected " + shape_string(params[i].shape()));
    }
    auto dst = params[i].mutable_data();
    std::copy(a->values.begin(), a->values.end(), dst.begin());
  }
}

}  // namespace cadlab::nd
