// SPDX-License-Identifier: Apache-2.0

#include "pbsr/dataset.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pbsr/degradation.hpp"
#include "pbsr/image_io.hpp"

namespace pbsr {

using json = nlohmann::ordered_json;

// ---- Labels ----------------------------------------------------------------

namespace {

template <typename E, std::size_t N>
std::string name_of(E v, const std::array<const char*, N>& names) {
  return names.at(static_cast<std::size_t>(v));
}

template <typename E, std::size_t N>
E parse_name(const std::string& s, const std::array<const char*, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (s == names[i]) return static_cast<E>(i);
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
}

constexpr std::array<const char*, 3> kBlurTypes{"defocus", "motion", "none"};
constexpr std::array<const char*, 4> kIntensities{"little", "middle", "heavy", "unlabeled"};
constexpr std::array<const char*, 3> kSources{"real", "synthetic", "web"};
constexpr std::array<const char*, 3> kReviewStates{"auto", "human_verified", "rejected"};
constexpr std::array<const char*, 3> kSizes{"small", "medium", "large"};

}  // namespace

std::string to_string(BlurType v) { return name_of(v, kBlurTypes); }
std::string to_string(Intensity v) { return name_of(v, kIntensities); }
std::string to_string(Source v) { return name_of(v, kSources); }
std::string to_string(ReviewState v) { return name_of(v, kReviewStates); }
std::string to_string(SizeCategory v) { return name_of(v, kSizes); }

BlurType parse_blur_type(const std::string& s) { return parse_name<BlurType>(s, kBlurTypes, "blur_type"); }
Intensity parse_intensity(const std::string& s) { return parse_name<Intensity>(s, kIntensities, "intensity"); }
Source parse_source(const std::string& s) { return parse_name<Source>(s, kSources, "source"); }
ReviewState parse_review_state(const std::string& s) {
  return parse_name<ReviewState>(s, kReviewStates, "review_state");
}

// ---- Manifest --------------------------------------------------------------

std::string to_json_line(const BlurSample& s) {
  json j;
  j["id"] = s.id;
  j["hr"] = s.hr_path;
  j["mask"] = s.mask_path;
  j["blur_type"] = to_string(s.blur_type);
  j["intensity"] = to_string(s.intensity);
  j["source"] = to_string(s.source);
  j["review_state"] = to_string(s.review_state);
  j["split"] = s.split;
  return j.dump();
}

BlurSample from_json_line(const std::string& line) {
  static const std::set<std::string> known{"id", "hr", "mask", "blur_type", "intensity", "source", "review_state", "split"};
  const json j = json::parse(line);
  if (!j.is_object()) throw std::invalid_argument("manifest line is not an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown manifest key '" + key + "'");
  }
  BlurSample s;
  s.id = j.at("id").get<std::string>();
  if (s.id.empty()) throw std::invalid_argument("empty sample id");
  s.hr_path = j.at("hr").get<std::string>();
  s.mask_path = j.at("mask").get<std::string>();
  s.blur_type = parse_blur_type(j.value("blur_type", "none"));
  s.intensity = parse_intensity(j.value("intensity", "unlabeled"));
  s.source = parse_source(j.value("source", "real"));
  s.review_state = parse_review_state(j.value("review_state", "auto"));
  s.split = j.value("split", "train");
  return s;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw std::invalid_argument("cannot open manifest " + jsonl.string());
  DatasetManifest m(jsonl.parent_path());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    BlurSample s;
    try {
      s = from_json_line(line);
    } catch (const std::exception& e) {
      throw std::invalid_argument(jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    for (const auto* p : {&s.hr_path, &s.mask_path}) {
      if (!std::filesystem::exists(m.root_ / *p)) {
        throw std::invalid_argument(jsonl.string() + ":" + std::to_string(lineno) + ": missing file " + *p);
      }
    }
    m.add(std::move(s));
  }
  return m;
}

void DatasetManifest::save(const std::filesystem::path& jsonl) const {
  std::string text;
  for (const auto& s : samples_) text += to_json_line(s) + "\n";
  write_file_atomic(jsonl, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void DatasetManifest::add(BlurSample sample) {
  if (index_.count(sample.id)) throw std::invalid_argument("duplicate sample id '" + sample.id + "'");
  index_.emplace(sample.id, samples_.size());
  samples_.push_back(std::move(sample));
}

const BlurSample* DatasetManifest::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &samples_[it->second];
}

BlurSample* DatasetManifest::find(const std::string& id) {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &samples_[it->second];
}

std::vector<BlurSample> DatasetManifest::select(const std::string& split, bool include_rejected) const {
  std::vector<BlurSample> out;
  for (const auto& s : samples_) {
    if (s.split != split) continue;
    if (!include_rejected && s.review_state == ReviewState::rejected) continue;
    out.push_back(s);
  }
  return out;
}

// ---- Partition and filter rules --------------------------------------------

double blur_area_fraction(const Tensor& mask) {
  if (mask.numel() == 0) throw std::invalid_argument("empty mask");
  std::size_t zeros = 0;
  for (float v : mask.data()) {
    if (v == 0.0f) {
      ++zeros;
    } else if (v != 1.0f) {
      throw std::invalid_argument("mask not binary");
    }
  }
  return static_cast<double>(zeros) / static_cast<double>(mask.numel());
}

SizeCategory size_category(double fraction) {
  if (fraction < 0.45) return SizeCategory::small;
  if (fraction <= 0.55) return SizeCategory::medium;
  return SizeCategory::large;
}

FilterResult filter_sample(std::size_t height, std::size_t width, double fraction, FilterRole role) {
  if (role == FilterRole::blur_specific) {
    if (std::min(height, width) <= 512) return {false, "size<=512"};
    if (fraction >= 0.80) return {false, "blur>80%"};
    return {};
  }
  if (fraction < 0.05) return {false, "blur<5%"};
  return {};
}

FilterResult filter_sample(const Tensor& mask, FilterRole role) {
  return filter_sample(mask.shape().h, mask.shape().w, blur_area_fraction(mask), role);
}

// ---- Blur-map estimation ---------------------------------------------------

namespace {

std::size_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - i);
}

void require_gray(const Tensor& t) {
  if (t.shape().n != 1 || t.shape().c != 1) throw std::invalid_argument("expected (1,1,H,W), got " + t.shape().str());
}

}  // namespace

Tensor luma(const Tensor& rgb) {
  const Shape s = rgb.shape();
  if (s.n != 1 || s.c != 3) throw std::invalid_argument("expected (1,3,H,W), got " + s.str());
  const auto v = rgb.data();
  std::vector<float> out(s.plane());
  for (std::size_t i = 0; i < s.plane(); ++i) {
    out[i] = 0.299f * v[i] + 0.587f * v[s.plane() + i] + 0.114f * v[2 * s.plane() + i];
  }
  return Tensor::from_data({1, 1, s.h, s.w}, std::move(out));
}

std::pair<Tensor, Tensor> sobel(const Tensor& gray) {
  require_gray(gray);
  const auto H = static_cast<std::ptrdiff_t>(gray.shape().h), W = static_cast<std::ptrdiff_t>(gray.shape().w);
  const auto v = gray.data();
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) { return v[reflect(y, H) * W + reflect(x, W)]; };
  std::vector<float> gx(v.size()), gy(v.size());
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      gx[y * W + x] = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                      (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      gy[y * W + x] = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                      (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
    }
  }
  return {Tensor::from_data(gray.shape(), std::move(gx)), Tensor::from_data(gray.shape(), std::move(gy))};
}

Tensor sobel_magnitude(const Tensor& gray) {
  auto [gx, gy] = sobel(gray);
  std::vector<float> m(gx.numel());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::hypot(gx.data()[i], gy.data()[i]);
  return Tensor::from_data(gray.shape(), std::move(m));
}

Tensor sharpness_map(const Tensor& rgb, std::size_t window) {
  const Shape s = rgb.shape();
  if (window == 0 || window > s.h || window > s.w) {
    throw std::invalid_argument("window " + std::to_string(window) + " does not fit image " + s.str());
  }
  auto [gx, gy] = sobel(luma(rgb));
  const auto H = static_cast<std::ptrdiff_t>(s.h), W = static_cast<std::ptrdiff_t>(s.w);
  std::vector<double> energy(s.plane());
  for (std::size_t i = 0; i < energy.size(); ++i) {
    energy[i] = double(gx.data()[i]) * gx.data()[i] + double(gy.data()[i]) * gy.data()[i];
  }
  // Separable box mean with reflect padding.
  const auto lo = static_cast<std::ptrdiff_t>(window / 2);
  const auto hi = static_cast<std::ptrdiff_t>(window) - 1 - lo;
  std::vector<double> rows(energy.size()), box(energy.size());
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t d = -lo; d <= hi; ++d) acc += energy[y * W + reflect(x + d, W)];
      rows[y * W + x] = acc;
    }
  }
  const double inv = 1.0 / static_cast<double>(window * window);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t d = -lo; d <= hi; ++d) acc += rows[reflect(y + d, H) * W + x];
      box[y * W + x] = acc * inv;
    }
  }
  std::vector<double> sorted = box;
  const auto k = static_cast<std::size_t>(0.99 * static_cast<double>(sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  double scale = sorted[k];
  if (!(scale > 0.0)) scale = *std::max_element(box.begin(), box.end());
  std::vector<float> out(box.size(), 0.0f);
  if (scale > 0.0) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(std::min(1.0, box[i] / scale));
  }
  return Tensor::from_data({1, 1, s.h, s.w}, std::move(out));
}

Tensor binarize(const Tensor& map, float threshold) {
  std::vector<float> out(map.numel());
  const auto v = map.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] >= threshold ? 1.0f : 0.0f;
  return Tensor::from_data(map.shape(), std::move(out));
}

Tensor estimate_blur_map(const Tensor& rgb, std::size_t window, float threshold) {
  return binarize(sharpness_map(rgb, window), threshold);
}

// ---- Region gradient analysis ----------------------------------------------

std::vector<GroupGradient> region_gradient_stats(const std::vector<GradientRecord>& records) {
  std::vector<GroupGradient> groups;
  std::vector<double> sums;
  for (const auto& r : records) {
    if (r.mask.shape().h != r.image.shape().h || r.mask.shape().w != r.image.shape().w) {
      throw std::invalid_argument("mask and image extents differ for group " + r.group);
    }
    const Tensor mag = sobel_magnitude(luma(r.image));
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mag.numel(); ++i) {
      if (r.mask.data()[i] == 0.0f) {
        sum += mag.data()[i];
        ++n;
      }
    }
    if (n == 0) continue;
    auto it = std::find_if(groups.begin(), groups.end(), [&](const GroupGradient& g) { return g.group == r.group; });
    if (it == groups.end()) {
      groups.push_back({r.group, 0.0, 0, 0});
      sums.push_back(0.0);
      it = groups.end() - 1;
    }
    const auto idx = static_cast<std::size_t>(it - groups.begin());
    sums[idx] += sum;
    it->blur_pixels += n;
    it->samples += 1;
  }
  for (std::size_t i = 0; i < groups.size(); ++i) groups[i].mean_gradient = sums[i] / double(groups[i].blur_pixels);
  return groups;
}

std::vector<GroupGradient> region_gradient_stats(const DatasetManifest& manifest, Grouping grouping) {
  std::vector<GradientRecord> records;
  for (const auto& s : manifest.samples()) {
    if (s.review_state == ReviewState::rejected) continue;
    if (grouping == Grouping::intensity && s.intensity == Intensity::unlabeled) continue;
    Tensor mask = read_mask(manifest.mask_file(s));
    std::string group = grouping == Grouping::intensity ? to_string(s.intensity)
                                                        : to_string(size_category(blur_area_fraction(mask)));
    records.push_back({std::move(group), read_rgb(manifest.hr_file(s)), std::move(mask)});
  }
  return region_gradient_stats(records);
}

// ---- Patch sampling --------------------------------------------------------

Tensor crop(const Tensor& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  const Shape s = image.shape();
  if (y + h > s.h || x + w > s.w) throw std::invalid_argument("crop window outside " + s.str());
  const Shape o{s.n, s.c, h, w};
  std::vector<float> out(o.numel());
  const auto v = image.data();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    for (std::size_t r = 0; r < h; ++r) {
      const float* src = v.data() + p * s.plane() + (y + r) * s.w + x;
      std::copy(src, src + w, out.begin() + static_cast<std::ptrdiff_t>(p * o.plane() + r * w));
    }
  }
  return Tensor::from_data(o, std::move(out));
}

std::pair<Tensor, Tensor> sample_patch(const Tensor& hr, const Tensor& mask, std::size_t patch, Rng& rng) {
  const Shape s = hr.shape();
  if (mask.shape().h != s.h || mask.shape().w != s.w) throw std::invalid_argument("mask does not match image");
  if (patch == 0 || patch % 4 != 0) throw std::invalid_argument("patch must be a positive multiple of 4");
  if (patch > std::min(s.h, s.w)) {
    throw std::invalid_argument("patch " + std::to_string(patch) + " exceeds image " + s.str());
  }
  std::uniform_int_distribution<std::size_t> oy(0, s.h - patch), ox(0, s.w - patch);
  const std::size_t y = oy(rng);
  const std::size_t x = ox(rng);
  return {crop(hr, y, x, patch, patch), crop(mask, y, x, patch, patch)};
}

// ---- Synthetic data --------------------------------------------------------

Tensor synthesize_texture(std::size_t height, std::size_t width, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double two_pi = 6.283185307179586;
  const std::size_t plane = height * width;
  std::vector<double> img(3 * plane);
  for (std::size_t c = 0; c < 3; ++c) {
    const double base = 0.3 + 0.4 * u(rng);
    std::fill(img.begin() + c * plane, img.begin() + (c + 1) * plane, base);
  }
  for (int k = 0; k < 5; ++k) {
    const double freq = 0.01 + 0.11 * u(rng);
    const double angle = two_pi * u(rng);
    const double phase = two_pi * u(rng);
    const double fx = freq * std::cos(angle), fy = freq * std::sin(angle);
    double amp[3];
    for (double& a : amp) a = 0.03 + 0.09 * u(rng);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double w = std::sin(two_pi * (fx * double(x) + fy * double(y)) + phase);
        for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * width + x] += amp[c] * w;
      }
    }
  }
  for (int k = 0; k < 8; ++k) {
    const bool disc = u(rng) < 0.5;
    const double cy = u(rng) * double(height), cx = u(rng) * double(width);
    const double ry = (0.05 + 0.15 * u(rng)) * double(height), rx = (0.05 + 0.15 * u(rng)) * double(width);
    double color[3];
    for (double& col : color) col = u(rng);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = (double(y) - cy) / ry, dx = (double(x) - cx) / rx;
        const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::fabs(dx) <= 1.0 && std::fabs(dy) <= 1.0;
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * width + x] = 0.5 * img[c * plane + y * width + x] + 0.5 * color[c];
      }
    }
  }
  std::vector<float> out(img.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
  return Tensor::from_data({1, 3, height, width}, std::move(out));
}

DatasetManifest generate_synthetic(const std::filesystem::path& dir, const SyntheticOptions& o) {
  if (o.blur_fraction < 0.0 || o.blur_fraction > 1.0) throw std::invalid_argument("blur_fraction must lie in [0,1]");
  if (o.test_count > o.count) throw std::invalid_argument("test_count exceeds count");
  static constexpr double kSigmas[3] = {1.0, 2.0, 3.5};
  DatasetManifest m(dir);
  for (std::size_t i = 0; i < o.count; ++i) {
    Rng rng(derive_seed(o.seed, std::uint64_t{i}));
    char id[64];
    std::snprintf(id, sizeof id, "%s_%04zu", o.id_prefix.c_str(), i);
    Tensor img = synthesize_texture(o.height, o.width, rng);
    std::vector<float> mask(o.height * o.width, 1.0f);
    BlurSample s;
    s.id = id;
    s.hr_path = std::string("hr/") + id + ".png";
    s.mask_path = std::string("mask/") + id + ".png";
    s.source = Source::synthetic;
    s.split = i + o.test_count >= o.count ? "test" : "train";
    if (o.blur_fraction > 0.0) {
      const std::size_t level = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
      const std::size_t side = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
      const double sigma = kSigmas[level];
      const auto ksize = static_cast<std::size_t>(2 * std::ceil(3.0 * sigma) + 1);
      const Tensor blurred = blur_reflect(img, gaussian_kernel(ksize, sigma, sigma, 0.0));
      const bool vertical = side < 2;
      const std::size_t extent = vertical ? o.width : o.height;
      const auto span = static_cast<std::size_t>(std::lround(o.blur_fraction * double(extent)));
      std::vector<float> mixed(img.data().begin(), img.data().end());
      for (std::size_t y = 0; y < o.height; ++y) {
        for (std::size_t x = 0; x < o.width; ++x) {
          const std::size_t pos = vertical ? x : y;
          const bool in_blur = (side % 2 == 0) ? pos < span : pos >= extent - span;
          if (!in_blur) continue;
          mask[y * o.width + x] = 0.0f;
          for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t idx = c * o.height * o.width + y * o.width + x;
            mixed[idx] = blurred.data()[idx];
          }
        }
      }
      img = Tensor::from_data(img.shape(), std::move(mixed));
      s.blur_type = BlurType::defocus;
      s.intensity = static_cast<Intensity>(level);
    }
    write_rgb(dir / s.hr_path, img);
    write_mask(dir / s.mask_path, Tensor::from_data({1, 1, o.height, o.width}, std::move(mask)));
    m.add(std::move(s));
  }
  return m;
}

}  // namespace pbsr
