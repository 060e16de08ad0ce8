// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pbsr/dataset.hpp"
#include "pbsr/degradation.hpp"
#include "pbsr/errors.hpp"
#include "pbsr/image_io.hpp"
#include "test_util.hpp"

using namespace pbsr;
using pbsr::testing::uniform;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pbsr_dataset_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor mask_with_zeros(std::size_t h, std::size_t w, std::size_t zeros) {
  std::vector<float> v(h * w, 1.0f);
  std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(zeros), 0.0f);
  return Tensor::from_data({1, 1, h, w}, std::move(v));
}

Tensor half_mask(std::size_t h, std::size_t w) {
  std::vector<float> v(h * w, 1.0f);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w / 2; ++x) v[y * w + x] = 0.0f;
  return Tensor::from_data({1, 1, h, w}, std::move(v));
}

}  // namespace

TEST(BlurFraction, Examples) {
  EXPECT_EQ(blur_area_fraction(Tensor::zeros({1, 1, 8, 8})), 1.0);
  EXPECT_EQ(blur_area_fraction(Tensor::full({1, 1, 8, 8}, 1.0f)), 0.0);
  EXPECT_DOUBLE_EQ(blur_area_fraction(mask_with_zeros(60, 100, 2700)), 0.45);
}

TEST(BlurFraction, RejectsNonBinary) {
  EXPECT_THROW(blur_area_fraction(Tensor::full({1, 1, 2, 2}, 0.5f)), std::invalid_argument);
}

TEST(SizeCategory, Thresholds) {
  EXPECT_EQ(size_category(0.44), SizeCategory::small);
  EXPECT_EQ(size_category(0.45), SizeCategory::medium);
  EXPECT_EQ(size_category(0.50), SizeCategory::medium);
  EXPECT_EQ(size_category(0.55), SizeCategory::medium);
  EXPECT_EQ(size_category(0.56), SizeCategory::large);
  EXPECT_EQ(size_category(0.0), SizeCategory::small);
  EXPECT_EQ(size_category(1.0), SizeCategory::large);
}

TEST(SizeCategory, MaskCountsAtBoundaries) {
  // 2700 / 6000 and 3300 / 6000 land exactly on the closed medium interval.
  EXPECT_EQ(size_category(blur_area_fraction(mask_with_zeros(60, 100, 2700))), SizeCategory::medium);
  EXPECT_EQ(size_category(blur_area_fraction(mask_with_zeros(60, 100, 3300))), SizeCategory::medium);
  EXPECT_EQ(size_category(blur_area_fraction(mask_with_zeros(60, 100, 2699))), SizeCategory::small);
  EXPECT_EQ(size_category(blur_area_fraction(mask_with_zeros(60, 100, 3301))), SizeCategory::large);
}

TEST(Filter, BlurSpecificRules) {
  EXPECT_TRUE(filter_sample(600, 600, 0.5, FilterRole::blur_specific).accepted);
  const FilterResult heavy = filter_sample(600, 600, 0.85, FilterRole::blur_specific);
  EXPECT_FALSE(heavy.accepted);
  EXPECT_EQ(heavy.reason, "blur>80%");
  EXPECT_FALSE(filter_sample(600, 600, 0.80, FilterRole::blur_specific).accepted);
  EXPECT_TRUE(filter_sample(600, 600, 0.7999, FilterRole::blur_specific).accepted);
  EXPECT_FALSE(filter_sample(512, 600, 0.5, FilterRole::blur_specific).accepted);
  EXPECT_TRUE(filter_sample(513, 513, 0.5, FilterRole::blur_specific).accepted);
}

TEST(Filter, GeneralRules) {
  const FilterResult low = filter_sample(600, 600, 0.03, FilterRole::general_sr);
  EXPECT_FALSE(low.accepted);
  EXPECT_EQ(low.reason, "blur<5%");
  EXPECT_TRUE(filter_sample(100, 100, 0.05, FilterRole::general_sr).accepted);
  EXPECT_FALSE(filter_sample(mask_with_zeros(10, 10, 4), FilterRole::general_sr).accepted);
  EXPECT_TRUE(filter_sample(mask_with_zeros(10, 10, 5), FilterRole::general_sr).accepted);
}

TEST(Estimate, ConstantImageIsAllBlur) {
  const Tensor m = estimate_blur_map(Tensor::full({1, 3, 32, 32}, 0.4f), 7);
  for (float v : m.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Estimate, CheckerboardIsAllSharp) {
  // 1x1 squares are invisible to Sobel (both neighbours agree), so use 2x2.
  // Pointwise energies take only the values {0, 8, 16}; every window of
  // width 5 averages to at least half the 99th percentile.
  std::vector<float> v(3 * 32 * 32);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) v[c * 1024 + y * 32 + x] = ((y / 2 + x / 2) % 2) ? 1.0f : 0.0f;
  const Tensor img = Tensor::from_data({1, 3, 32, 32}, v);
  const auto [gx, gy] = sobel(luma(img));
  for (std::size_t i = 0; i < gx.numel(); ++i) {
    const float e = gx.data()[i] * gx.data()[i] + gy.data()[i] * gy.data()[i];
    EXPECT_TRUE(e == 0.0f || e == 8.0f || e == 16.0f) << e;
  }
  const Tensor m = estimate_blur_map(img, 5);
  for (float x : m.data()) EXPECT_EQ(x, 1.0f);
}

TEST(Estimate, HalfBlurredComposite) {
  const Tensor sharp = uniform({1, 3, 64, 64}, 3, 0, 1);
  const Tensor blurred = blur_reflect(sharp, gaussian_kernel(13, 3.0, 3.0, 0.0));
  std::vector<float> mixed(sharp.data().begin(), sharp.data().end());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 32; ++x) mixed[c * 4096 + y * 64 + x] = blurred.data()[c * 4096 + y * 64 + x];
  const Tensor m = estimate_blur_map(Tensor::from_data({1, 3, 64, 64}, mixed), kDefaultEstimateWindow);
  std::size_t left = 0, total = 0;
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x)
      if (m.data()[y * 64 + x] == 0.0f) {
        ++total;
        left += x < 32;
      }
  ASSERT_GT(total, 0u);
  EXPECT_GT(double(left) / double(total), 0.9);
}

TEST(Estimate, WindowLargerThanImage) {
  EXPECT_THROW(estimate_blur_map(Tensor::full({1, 3, 8, 8}, 0.5f), 9), std::invalid_argument);
}

TEST(Estimate, BinarizeIsIdempotent) {
  const Tensor once = estimate_blur_map(uniform({1, 3, 24, 24}, 4, 0, 1), 5);
  const Tensor twice = binarize(once, 0.5f);
  EXPECT_TRUE(std::equal(once.data().begin(), once.data().end(), twice.data().begin()));
}

TEST(Estimate, ZeroThresholdKeepsEverything) {
  const Tensor m = estimate_blur_map(Tensor::full({1, 3, 16, 16}, 0.2f), 3, 0.0f);
  for (float v : m.data()) EXPECT_EQ(v, 1.0f);
}

TEST(GradientStats, ConstantImagesGiveZero) {
  std::vector<GradientRecord> r{{"heavy", Tensor::full({1, 3, 16, 16}, 0.3f), Tensor::zeros({1, 1, 16, 16})},
                                {"little", Tensor::full({1, 3, 16, 16}, 0.7f), Tensor::zeros({1, 1, 16, 16})}};
  const auto g = region_gradient_stats(r);
  ASSERT_EQ(g.size(), 2u);
  for (const auto& x : g) EXPECT_EQ(x.mean_gradient, 0.0);
}

TEST(GradientStats, HeavyBlurHasLowerGradient) {
  std::vector<GradientRecord> r;
  for (std::uint64_t i = 0; i < 4; ++i) {
    Rng rng(i);
    const Tensor img = synthesize_texture(48, 48, rng);
    r.push_back({"sharp", img, Tensor::zeros({1, 1, 48, 48})});
    r.push_back({"heavy", blur_reflect(img, gaussian_kernel(15, 3.5, 3.5, 0)), Tensor::zeros({1, 1, 48, 48})});
  }
  const auto g = region_gradient_stats(r);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].group, "sharp");
  EXPECT_LT(g[1].mean_gradient, g[0].mean_gradient);
  EXPECT_EQ(g[0].samples, 4u);
  EXPECT_EQ(g[0].blur_pixels, 4u * 48 * 48);
}

TEST(GradientStats, AllSharpMaskDropsGroup) {
  std::vector<GradientRecord> r{{"middle", uniform({1, 3, 8, 8}, 1, 0, 1), Tensor::full({1, 1, 8, 8}, 1.0f)}};
  EXPECT_TRUE(region_gradient_stats(r).empty());
}

TEST(Patch, WholeImage) {
  Rng rng(0);
  const Tensor img = uniform({1, 3, 16, 16}, 2, 0, 1);
  const Tensor mask = half_mask(16, 16);
  const auto [p, m] = sample_patch(img, mask, 16, rng);
  EXPECT_TRUE(std::equal(p.data().begin(), p.data().end(), img.data().begin()));
  EXPECT_TRUE(std::equal(m.data().begin(), m.data().end(), mask.data().begin()));
}

TEST(Patch, SameRngSameCrop) {
  const Tensor img = uniform({1, 3, 40, 40}, 2, 0, 1);
  const Tensor mask = half_mask(40, 40);
  Rng a(9), b(9);
  const auto pa = sample_patch(img, mask, 16, a);
  const auto pb = sample_patch(img, mask, 16, b);
  EXPECT_TRUE(std::equal(pa.first.data().begin(), pa.first.data().end(), pb.first.data().begin()));
}

TEST(Patch, MaskCroppedWithImage) {
  // Encode the column index in the image so the mask crop can be checked.
  std::vector<float> v(3 * 32 * 32);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(i % 32) / 32.0f;
  const Tensor img = Tensor::from_data({1, 3, 32, 32}, v);
  const Tensor mask = half_mask(32, 32);
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const auto [p, m] = sample_patch(img, mask, 8, rng);
    for (std::size_t i = 0; i < 64; ++i) {
      const float col = p.data()[i] * 32.0f;
      EXPECT_EQ(m.data()[i], col < 16.0f ? 0.0f : 1.0f);
    }
  }
}

TEST(Patch, MonteCarloBlurFraction) {
  const Tensor img = Tensor::zeros({1, 3, 128, 128});
  const Tensor mask = half_mask(128, 128);
  Rng rng(17);
  double total = 0.0;
  for (int k = 0; k < 1000; ++k) total += blur_area_fraction(sample_patch(img, mask, 32, rng).second);
  EXPECT_NEAR(total / 1000.0, 0.5, 0.05);
}

TEST(Patch, Errors) {
  Rng rng(0);
  const Tensor img = Tensor::zeros({1, 3, 16, 16});
  EXPECT_THROW(sample_patch(img, half_mask(16, 16), 20, rng), std::invalid_argument);
  EXPECT_THROW(sample_patch(img, half_mask(16, 16), 6, rng), std::invalid_argument);
}

TEST(Labels, RoundTripNames) {
  for (auto t : {BlurType::defocus, BlurType::motion, BlurType::none}) EXPECT_EQ(parse_blur_type(to_string(t)), t);
  for (auto i : {Intensity::little, Intensity::middle, Intensity::heavy, Intensity::unlabeled})
    EXPECT_EQ(parse_intensity(to_string(i)), i);
  EXPECT_EQ(to_string(ReviewState::automatic), "auto");
  EXPECT_EQ(parse_review_state("human_verified"), ReviewState::human_verified);
  EXPECT_THROW(parse_intensity("extreme"), std::invalid_argument);
}

TEST(Manifest, SyntheticSetLoadSaveLoadIsFixedPoint) {
  const fs::path dir = scratch("fixed_point");
  SyntheticOptions o;
  o.count = 6;
  o.height = o.width = 32;
  o.test_count = 2;
  DatasetManifest m = generate_synthetic(dir, o);
  m.save(dir / "manifest.jsonl");
  const DatasetManifest a = DatasetManifest::load(dir / "manifest.jsonl");
  a.save(dir / "again.jsonl");
  const DatasetManifest b = DatasetManifest::load(dir / "again.jsonl");
  EXPECT_EQ(a.samples(), b.samples());
  EXPECT_EQ(read_file(dir / "manifest.jsonl"), read_file(dir / "again.jsonl"));
  EXPECT_EQ(a.select("train").size(), 4u);
  EXPECT_EQ(a.select("test").size(), 2u);
  for (const auto& s : a.samples()) {
    EXPECT_EQ(blur_area_fraction(read_mask(a.mask_file(s))), 0.5);
    EXPECT_EQ(s.blur_type, BlurType::defocus);
    EXPECT_NE(s.intensity, Intensity::unlabeled);
  }
}

TEST(Manifest, SyntheticIsDeterministic) {
  SyntheticOptions o;
  o.count = 2;
  o.height = o.width = 16;
  o.seed = 5;
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  generate_synthetic(a, o);
  generate_synthetic(b, o);
  EXPECT_EQ(read_file(a / "hr/syn_0001.png"), read_file(b / "hr/syn_0001.png"));
}

TEST(Manifest, SharpSetHasNoBlur) {
  SyntheticOptions o;
  o.count = 2;
  o.height = o.width = 16;
  o.blur_fraction = 0.0;
  const fs::path dir = scratch("sharp");
  const DatasetManifest m = generate_synthetic(dir, o);
  for (const auto& s : m.samples()) {
    EXPECT_EQ(blur_area_fraction(read_mask(m.mask_file(s))), 0.0);
    EXPECT_EQ(s.blur_type, BlurType::none);
  }
}

TEST(Manifest, RejectsDuplicatesMissingFilesAndUnknownKeys) {
  const fs::path dir = scratch("bad");
  SyntheticOptions o;
  o.count = 1;
  o.height = o.width = 16;
  DatasetManifest m = generate_synthetic(dir, o);
  EXPECT_THROW(m.add(m.samples()[0]), std::invalid_argument);

  const std::string line = to_json_line(m.samples()[0]);
  std::ofstream(dir / "dup.jsonl") << line << "\n" << line << "\n";
  EXPECT_THROW(DatasetManifest::load(dir / "dup.jsonl"), std::invalid_argument);

  BlurSample missing = m.samples()[0];
  missing.hr_path = "hr/nope.png";
  std::ofstream(dir / "missing.jsonl") << to_json_line(missing) << "\n";
  EXPECT_THROW(DatasetManifest::load(dir / "missing.jsonl"), std::invalid_argument);

  std::ofstream(dir / "extra.jsonl") << R"({"id":"a","hr":"x","mask":"y","color":"red"})" << "\n";
  EXPECT_THROW(DatasetManifest::load(dir / "extra.jsonl"), std::invalid_argument);
}

TEST(Manifest, GradientStatsBySize) {
  const fs::path dir = scratch("stats");
  SyntheticOptions o;
  o.count = 3;
  o.height = o.width = 32;
  const DatasetManifest m = generate_synthetic(dir, o);
  const auto g = region_gradient_stats(m, Grouping::size);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].group, "medium");
  EXPECT_EQ(g[0].samples, 3u);
}

TEST(ImageIo, RgbRoundTripWithinQuantization) {
  const fs::path dir = scratch("io");
  const Tensor img = uniform({1, 3, 9, 7}, 8, 0, 1);
  write_rgb(dir / "a.png", img);
  const Tensor back = read_rgb(dir / "a.png");
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(back.data()[i], img.data()[i], 0.5 / 255.0 + 1e-6);
}

TEST(ImageIo, MaskRoundTripIsExact) {
  const fs::path dir = scratch("mask_io");
  const Tensor mask = half_mask(5, 8);
  write_mask(dir / "m.png", mask);
  const Tensor back = read_mask(dir / "m.png");
  EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), mask.data().begin()));
}

TEST(ImageIo, NonBinaryMaskRejected) {
  Raster r{2, 2, 1, {0, 255, 128, 0}};
  try {
    mask_from_raster(decode_png(encode_png(r), 1));
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "mask not binary");
  }
}

TEST(ImageIo, GarbageIsFormatError) {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  EXPECT_THROW(decode_png(junk, 3), FormatError);
}
