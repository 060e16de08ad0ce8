// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pbsr/rng.hpp"
#include "pbsr/tensor.hpp"

namespace pbsr {

// ---- Labels ----------------------------------------------------------------

enum class BlurType { defocus, motion, none };
enum class Intensity { little, middle, heavy, unlabeled };
enum class Source { real, synthetic, web };
enum class ReviewState { automatic, human_verified, rejected };
enum class SizeCategory { small, medium, large };

std::string to_string(BlurType v);
std::string to_string(Intensity v);
std::string to_string(Source v);
std::string to_string(ReviewState v);  // automatic -> "auto"
std::string to_string(SizeCategory v);

/// Parsers throw std::invalid_argument on unknown names.
BlurType parse_blur_type(const std::string& s);
Intensity parse_intensity(const std::string& s);
Source parse_source(const std::string& s);
ReviewState parse_review_state(const std::string& s);

/// One HR image with its blur map. Paths are relative to the manifest
/// directory. Mask convention: 0 = blurred pixel, 1 = sharp pixel.
struct BlurSample {
  std::string id;
  std::string hr_path;
  std::string mask_path;
  BlurType blur_type = BlurType::none;
  Intensity intensity = Intensity::unlabeled;
  Source source = Source::real;
  ReviewState review_state = ReviewState::automatic;
  std::string split = "train";

  bool operator==(const BlurSample&) const = default;
};

/// JSON-lines manifest, one sample per line.
class DatasetManifest {
 public:
  DatasetManifest() = default;
  explicit DatasetManifest(std::filesystem::path root) : root_(std::move(root)) {}

  /// Validates unique ids and that every referenced file exists.
  static DatasetManifest load(const std::filesystem::path& jsonl);
  /// Atomic (temp file + rename).
  void save(const std::filesystem::path& jsonl) const;

  const std::filesystem::path& root() const { return root_; }
  void set_root(std::filesystem::path root) { root_ = std::move(root); }

  const std::vector<BlurSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }

  /// Throws std::invalid_argument on a duplicate id.
  void add(BlurSample sample);
  const BlurSample* find(const std::string& id) const;
  BlurSample* find(const std::string& id);

  std::filesystem::path hr_file(const BlurSample& s) const { return root_ / s.hr_path; }
  std::filesystem::path mask_file(const BlurSample& s) const { return root_ / s.mask_path; }

  /// Samples matching `split` and, unless `include_rejected`, not rejected.
  std::vector<BlurSample> select(const std::string& split, bool include_rejected = false) const;

 private:
  std::filesystem::path root_;
  std::vector<BlurSample> samples_;
  std::map<std::string, std::size_t> index_;
};

std::string to_json_line(const BlurSample& s);
BlurSample from_json_line(const std::string& line);

// ---- Partition and filter rules --------------------------------------------

/// (#zeros) / (H*W). Throws std::invalid_argument("mask not binary") if any
/// value is neither 0 nor 1.
double blur_area_fraction(const Tensor& mask);

/// small < 0.45 <= medium <= 0.55 < large.
SizeCategory size_category(double fraction);

enum class FilterRole { blur_specific, general_sr };

struct FilterResult {
  bool accepted = true;
  std::string reason;  // empty when accepted
};

/// blur_specific: min(H,W) > 512 and fraction < 0.80.
/// general_sr: fraction >= 0.05.
FilterResult filter_sample(std::size_t height, std::size_t width, double fraction, FilterRole role);
FilterResult filter_sample(const Tensor& mask, FilterRole role);

// ---- Blur-map estimation (gradient-energy stand-in) ------------------------

/// 0.299 R + 0.587 G + 0.114 B, shape (1,1,H,W).
Tensor luma(const Tensor& rgb);
/// Sobel responses with reflect padding; returns (gx, gy).
std::pair<Tensor, Tensor> sobel(const Tensor& gray);
Tensor sobel_magnitude(const Tensor& gray);

/// Windowed mean of squared Sobel magnitude, divided by its 99th percentile
/// and clipped to [0,1].
Tensor sharpness_map(const Tensor& rgb, std::size_t window);
/// 1 where value >= threshold, else 0.
Tensor binarize(const Tensor& map, float threshold);
Tensor estimate_blur_map(const Tensor& rgb, std::size_t window, float threshold = 0.5f);

inline constexpr std::size_t kDefaultEstimateWindow = 15;

// ---- Region gradient analysis ----------------------------------------------

enum class Grouping { intensity, size };

struct GroupGradient {
  std::string group;
  double mean_gradient = 0.0;
  std::size_t blur_pixels = 0;
  std::size_t samples = 0;
};

struct GradientRecord {
  std::string group;
  Tensor image;  // (1,3,H,W)
  Tensor mask;   // (1,1,H,W)
};

/// Pixel-pooled mean Sobel magnitude over mask == 0 per group. Groups with no
/// blur pixels are omitted. Order follows first appearance.
std::vector<GroupGradient> region_gradient_stats(const std::vector<GradientRecord>& records);
/// Loads every non-rejected sample. Intensity grouping skips unlabeled ones.
std::vector<GroupGradient> region_gradient_stats(const DatasetManifest& manifest, Grouping grouping);

// ---- Patch sampling --------------------------------------------------------

/// Uniform random crop; the mask is cropped at the same offset.
std::pair<Tensor, Tensor> sample_patch(const Tensor& hr, const Tensor& mask, std::size_t patch, Rng& rng);

/// Copies rows [y, y+h) and columns [x, x+w) of every plane.
Tensor crop(const Tensor& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w);

// ---- Synthetic data --------------------------------------------------------

/// Procedural texture (oriented sinusoids, hard-edged shapes, fine grain) in
/// [0,1], shape (1,3,H,W).
Tensor synthesize_texture(std::size_t height, std::size_t width, Rng& rng);

struct SyntheticOptions {
  std::size_t count = 64;
  std::size_t height = 128;
  std::size_t width = 128;
  std::uint64_t seed = 0;
  /// Fraction of columns (or rows) defocused; 0 yields all-sharp images.
  double blur_fraction = 0.5;
  std::string id_prefix = "syn";
  /// Trailing samples assigned split "test".
  std::size_t test_count = 0;
};

/// Writes hr/<id>.png and mask/<id>.png under `dir` and returns the manifest
/// (not yet saved). Intensity labels record the synthesis sigma.
DatasetManifest generate_synthetic(const std::filesystem::path& dir, const SyntheticOptions& options);

}  // namespace pbsr
