// SPDX-License-Identifier: Apache-2.0

#include "pbsr/param_set.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "pbsr/errors.hpp"
#include "pbsr/rng.hpp"

namespace pbsr {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

std::size_t Array::numel() const {
  return std::accumulate(extents.begin(), extents.end(), std::size_t{1},
                         [](std::size_t acc, std::uint32_t e) { return acc * e; });
}

Tensor to_tensor(const Array& array, bool requires_grad) {
  if (array.extents.size() > 4) throw std::invalid_argument("to_tensor: rank > 4 unsupported");
  std::size_t dims[4] = {1, 1, 1, 1};
  const std::size_t offset = 4 - array.extents.size();
  for (std::size_t i = 0; i < array.extents.size(); ++i) dims[offset + i] = array.extents[i];
  return Tensor::from_data({dims[0], dims[1], dims[2], dims[3]}, array.values, requires_grad);
}

Array to_array(const Tensor& tensor, std::vector<std::uint32_t> extents) {
  Array out{std::move(extents), std::vector<float>(tensor.data().begin(), tensor.data().end())};
  if (out.numel() != out.values.size()) throw std::invalid_argument("to_array: extents do not match tensor size");
  return out;
}

// ---- ParamSet --------------------------------------------------------------

void ParamSet::insert(std::string name, Array array) {
  if (array.numel() != array.values.size()) {
    throw std::invalid_argument("param '" + name + "': extents do not match value count");
  }
  if (!entries_.emplace(name, std::move(array)).second) {
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  }
}

void ParamSet::set(const std::string& name, Array array) {
  if (array.numel() != array.values.size()) {
    throw std::invalid_argument("param '" + name + "': extents do not match value count");
  }
  entries_[name] = std::move(array);
}

const Array& ParamSet::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
  return it->second;
}

Array& ParamSet::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
  return it->second;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [_, a] : entries_) total += a.values.size();
  return total;
}

ParamSet ParamSet::subset(const std::string& prefix) const {
  ParamSet out;
  for (const auto& [name, a] : entries_) {
    if (name.rfind(prefix, 0) == 0) out.insert(name, a);
  }
  return out;
}

bool aligned(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.entries().begin();
  auto ib = b.entries().begin();
  for (; ia != a.entries().end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.extents != ib->second.extents) return false;
  }
  return true;
}

// ---- Serialization ---------------------------------------------------------

namespace {

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    T value;
    std::memcpy(&value, take(sizeof(T), what), sizeof(T));
    return value;
  }
  std::string get_string(std::size_t n, const char* what) {
    const auto* p = take(n, what);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated checkpoint reading ") + what, pos_);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'P', 'B', 'S', 'R'};
constexpr std::uint8_t kDtypeF32 = 0;

}  // namespace

std::vector<std::uint8_t> serialize(const ParamSet& params) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, a] : params.entries()) {
    if (name.size() > 0xFFFF) throw std::invalid_argument("parameter name too long: " + name.substr(0, 32));
    if (a.extents.size() > 0xFF) throw std::invalid_argument("rank too large for '" + name + "'");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(kDtypeF32);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(a.extents.size()));
    for (std::uint32_t e : a.extents) w.put<std::uint32_t>(e);
    w.put_bytes(a.values.data(), a.values.size() * sizeof(float));
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.metadata().size()));
  for (const auto& [key, value] : params.metadata()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(key.size()));
    w.put_bytes(key.data(), key.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(value.size()));
    w.put_bytes(value.data(), value.size());
  }
  return w.take();
}

ParamSet deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto* magic = r.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const std::size_t version_at = r.pos();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const auto count = r.get<std::uint32_t>("entry count");
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.pos();
    const auto name_len = r.get<std::uint16_t>("name length");
    std::string name = r.get_string(name_len, "name");
    const std::size_t dtype_at = r.pos();
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) throw FormatError("unknown dtype tag " + std::to_string(dtype), dtype_at);
    const auto rank = r.get<std::uint8_t>("rank");
    Array a;
    a.extents.resize(rank);
    for (auto& e : a.extents) e = r.get<std::uint32_t>("extent");
    const std::size_t n = a.numel();
    const auto* payload = r.take(n * sizeof(float), "payload");
    a.values.resize(n);
    std::memcpy(a.values.data(), payload, n * sizeof(float));
    if (params.contains(name)) throw FormatError("duplicate entry '" + name + "'", entry_at);
    params.insert(std::move(name), std::move(a));
  }
  const auto meta_count = r.get<std::uint32_t>("metadata count");
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    const auto klen = r.get<std::uint32_t>("metadata key length");
    std::string key = r.get_string(klen, "metadata key");
    const auto vlen = r.get<std::uint32_t>("metadata value length");
    params.metadata()[std::move(key)] = r.get_string(vlen, "metadata value");
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", r.pos());
  return params;
}

void save(const ParamSet& params, const std::filesystem::path& path) {
  const auto bytes = serialize(params);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ParamSet load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::string checksum(const ParamSet& params) {
  const auto bytes = serialize(params);
  const std::uint64_t h = fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---- Algebra ---------------------------------------------------------------

namespace {

void require_aligned(const ParamSet& a, const ParamSet& b, const char* op) {
  if (!aligned(a, b)) throw std::invalid_argument(std::string(op) + ": parameter sets are not aligned");
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::vector<float> flatten(const ParamSet& params) {
  std::vector<float> out;
  out.reserve(params.parameter_count());
  for (const auto& [_, a] : params.entries()) out.insert(out.end(), a.values.begin(), a.values.end());
  return out;
}

double dot(const ParamSet& a, const ParamSet& b) {
  require_aligned(a, b, "dot");
  double acc = 0.0;
  auto ib = b.entries().begin();
  for (const auto& [_, x] : a.entries()) {
    const auto& y = (ib++)->second;
    for (std::size_t i = 0; i < x.values.size(); ++i) acc += static_cast<double>(x.values[i]) * y.values[i];
  }
  return acc;
}

double norm(const ParamSet& a) {
  double acc = 0.0;
  for (const auto& [_, x] : a.entries()) {
    for (float v : x.values) acc += static_cast<double>(v) * v;
  }
  return std::sqrt(acc);
}

double cosine_similarity(const ParamSet& a, const ParamSet& b) {
  require_aligned(a, b, "cosine_similarity");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_similarity: zero-norm operand");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double distance(const ParamSet& a, const ParamSet& b) {
  require_aligned(a, b, "distance");
  double acc = 0.0;
  auto ib = b.entries().begin();
  for (const auto& [_, x] : a.entries()) {
    const auto& y = (ib++)->second;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      const double d = static_cast<double>(x.values[i]) - y.values[i];
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

ParamSet interpolate(const ParamSet& a, const ParamSet& b, double lambda) {
  require_aligned(a, b, "interpolate");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("interpolate: lambda must lie in [0, 1]");
  ParamSet out;
  auto ib = b.entries().begin();
  for (const auto& [name, x] : a.entries()) {
    const auto& y = (ib++)->second;
    Array z{x.extents, std::vector<float>(x.values.size())};
    for (std::size_t i = 0; i < z.values.size(); ++i) {
      z.values[i] = static_cast<float>(lambda * x.values[i] + (1.0 - lambda) * y.values[i]);
    }
    out.insert(name, std::move(z));
  }
  out.metadata() = a.metadata();
  out.metadata()["interp.parent_a"] = checksum(a);
  out.metadata()["interp.parent_b"] = checksum(b);
  out.metadata()["interp.lambda"] = format_double(lambda);
  return out;
}

}  // namespace pbsr
