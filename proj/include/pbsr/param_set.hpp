// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pbsr/tensor.hpp"

namespace pbsr {

/// One named parameter: arbitrary-rank float32 array.
struct Array {
  std::vector<std::uint32_t> extents;
  std::vector<float> values;

  std::size_t numel() const;
  bool operator==(const Array&) const = default;
};

/// Rank <= 4 arrays map onto (N,C,H,W) with leading extents of 1.
Tensor to_tensor(const Array& array, bool requires_grad = false);
Array to_array(const Tensor& tensor, std::vector<std::uint32_t> extents);

/// Ordered name -> Array container. Iteration is lexicographic by name, so
/// flattening is independent of insertion order.
class ParamSet {
 public:
  using Entries = std::map<std::string, Array>;
  using Metadata = std::map<std::string, std::string>;

  /// Throws std::invalid_argument on a duplicate name or a size/extent mismatch.
  void insert(std::string name, Array array);
  /// Insert or replace.
  void set(const std::string& name, Array array);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Array& at(const std::string& name) const;
  Array& at(const std::string& name);

  const Entries& entries() const { return entries_; }
  Entries& entries() { return entries_; }
  const Metadata& metadata() const { return metadata_; }
  Metadata& metadata() { return metadata_; }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t parameter_count() const;

  /// Entries whose names start with `prefix`, metadata not copied.
  ParamSet subset(const std::string& prefix) const;

  bool operator==(const ParamSet&) const = default;

 private:
  Entries entries_;
  Metadata metadata_;
};

/// Same names and per-name extents.
bool aligned(const ParamSet& a, const ParamSet& b);

// ---- Serialization ---------------------------------------------------------
//
// Layout (little-endian):
//   "PBSR" | u32 version=1 | u32 entry_count
//   per entry: u16 name_len | name | u8 dtype (0=f32) | u8 rank | u32 extents[rank] | f32 payload
//   u32 metadata_count | per pair: u32 key_len | key | u32 value_len | value

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize(const ParamSet& params);
/// Throws FormatError carrying the failing byte offset.
ParamSet deserialize(std::span<const std::uint8_t> bytes);

void save(const ParamSet& params, const std::filesystem::path& path);
ParamSet load(const std::filesystem::path& path);

/// FNV-1a of the serialized form, hex encoded.
std::string checksum(const ParamSet& params);

// ---- Weight-vector algebra -------------------------------------------------

std::vector<float> flatten(const ParamSet& params);
double dot(const ParamSet& a, const ParamSet& b);
double norm(const ParamSet& a);
/// dot / (|a| |b|), accumulated in f64. Throws DegenerateInputError on a zero
/// norm and std::invalid_argument on misaligned sets.
double cosine_similarity(const ParamSet& a, const ParamSet& b);
/// |a - b| in f64.
double distance(const ParamSet& a, const ParamSet& b);

/// lambda * a + (1 - lambda) * b per coordinate. Metadata records both
/// parents' checksums and lambda.
ParamSet interpolate(const ParamSet& a, const ParamSet& b, double lambda);

}  // namespace pbsr
