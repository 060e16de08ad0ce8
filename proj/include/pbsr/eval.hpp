// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pbsr/dataset.hpp"
#include "pbsr/degradation.hpp"
#include "pbsr/param_set.hpp"
#include "pbsr/tensor.hpp"

namespace pbsr {

/// Pixel subsets selected by a blur map (0 = blur, 1 = sharp).
enum class Region { all, blur, focus };
std::string to_string(Region r);

/// One metric evaluated on the whole image and on both mask regions. A region
/// value is absent when the mask selects no pixel (or window centre) for it.
struct RegionValues {
  double all = 0.0;
  std::optional<double> blur;
  std::optional<double> focus;
};

constexpr double kPsnrCap = 100.0;

// Images are (1,C,H,W) with values in [0,1]; masks are (1,1,H,W) binary.

/// 10 log10(1 / MSE) over every channel of the selected pixels, capped at 100 dB.
std::optional<double> psnr(const Tensor& a, const Tensor& b, const std::optional<Tensor>& mask = std::nullopt,
                           Region region = Region::all);
RegionValues psnr_regions(const Tensor& a, const Tensor& b, const Tensor& mask);

/// Gaussian-window SSIM (11x11, sigma 1.5) on luma, averaged over window
/// centres whose window lies fully inside the image. With a mask, only
/// centres inside the region count.
std::optional<double> ssim(const Tensor& a, const Tensor& b, const std::optional<Tensor>& mask = std::nullopt,
                           Region region = Region::all);
RegionValues ssim_regions(const Tensor& a, const Tensor& b, const Tensor& mask);

constexpr std::size_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;
constexpr double kGmsdC = 0.0026;

/// Population standard deviation of the gradient magnitude similarity map
/// (Prewitt / 3, reflect padding, luma) over the selected pixels.
std::optional<double> gmsd(const Tensor& a, const Tensor& b, const std::optional<Tensor>& mask = std::nullopt,
                           Region region = Region::all);
RegionValues gmsd_regions(const Tensor& a, const Tensor& b, const Tensor& mask);

/// Per-location discriminator terms h(1 - D(hr)) + h(1 + D(sr)) on the logits
/// grid. The mask is reduced to that grid by block averaging (>= 0.5 is sharp).
struct DiscLossMap {
  Tensor grid;        // (N,1,h,w) loss per logit
  Tensor grid_mask;   // (N,1,h,w) binary
  Tensor image;       // grid upsampled (nearest) to (N,1,H,W)
  double all_mean = 0.0;
  std::optional<double> blur_mean;
  std::optional<double> focus_mean;
  double blur_sum = 0.0;
  double focus_sum = 0.0;
  /// Share of grid cells in the blur region.
  double blur_fraction = 0.0;
};

DiscLossMap disc_loss_map(const ParamSet& d, const Tensor& hr, const Tensor& sr, const Tensor& mask, bool clamp = true);

/// False-colour rendering of a (1,1,H,W) map over [lo, hi].
void write_false_color_png(const std::filesystem::path& path, const Tensor& map, double lo, double hi);

// ---- Reports --------------------------------------------------------------------

using SuperResolver = std::function<Tensor(const Tensor& lr)>;
SuperResolver generator_resolver(const ParamSet& generator);
SuperResolver nearest_resolver();

struct MetricRow {
  std::string sample_id;
  std::string blur_type;
  std::string size_category;
  std::string intensity;
  std::string metric;
  RegionValues values;
};

struct AggregateRow {
  std::string blur_type;
  std::string size_category;
  std::string intensity;
  std::string metric;
  std::size_t count = 0;
  std::optional<double> blur_mean;
  std::optional<double> focus_mean;
  double all_mean = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::vector<AggregateRow> aggregates;
};

/// Aggregates rows by (blur_type, size_category, intensity, metric). Region
/// means average only the rows where that region is present.
std::vector<AggregateRow> aggregate(const std::vector<MetricRow>& rows);

/// Degrades every sample of `split` with the per-sample stream of
/// `degradation`, super-resolves it, clips to [0,1] and scores psnr, ssim and
/// gmsd with region splits.
MetricReport eval_report(const SuperResolver& model, const DatasetManifest& manifest, const DegradationConfig& degradation,
                         const std::string& split = "test");

void write_report_csv(const std::filesystem::path& path, const MetricReport& report);
void write_aggregate_csv(const std::filesystem::path& path, const MetricReport& report);

}  // namespace pbsr
