// SPDX-License-Identifier: Apache-2.0

#include "pbsr/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace pbsr {

namespace {

// Mirror index without repeating the edge sample (d c b | a b c d | c b a).
std::size_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - i);
}

}  // namespace

void DegradationConfig::validate() const {
  if (kernel_size % 2 == 0) throw std::invalid_argument("blur kernel size must be odd");
  if (!(sigma_min > 0.0) || sigma_min > sigma_max) throw std::invalid_argument("need 0 < sigma_min <= sigma_max");
  if (theta_min > theta_max) throw std::invalid_argument("need theta_min <= theta_max");
  if (factor != 4) throw std::invalid_argument("downscale factor must be 4");
  if (noise_min < 0.0 || noise_min > noise_max) throw std::invalid_argument("need 0 <= noise_min <= noise_max");
}

Tensor gaussian_kernel(std::size_t size, double sigma_x, double sigma_y, double theta) {
  if (size % 2 == 0) throw std::invalid_argument("kernel size must be odd, got " + std::to_string(size));
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) throw std::invalid_argument("kernel sigmas must be positive");
  const double c = std::cos(theta), s = std::sin(theta);
  const double r = static_cast<double>(size / 2);
  std::vector<double> w(size * size);
  double total = 0.0;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - r, dy = static_cast<double>(y) - r;
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      const double e = std::exp(-0.5 * (u * u / (sigma_x * sigma_x) + v * v / (sigma_y * sigma_y)));
      w[y * size + x] = e;
      total += e;
    }
  }
  std::vector<float> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(w[i] / total);
  return Tensor::from_data({1, 1, size, size}, std::move(out));
}

DegradationParams sample_degradation(const DegradationConfig& config, Rng& rng) {
  config.validate();
  std::uniform_real_distribution<double> sigma(config.sigma_min, config.sigma_max);
  std::uniform_real_distribution<double> theta(config.theta_min, config.theta_max);
  std::uniform_real_distribution<double> noise(config.noise_min, config.noise_max);
  DegradationParams p;
  p.sigma_x = sigma(rng);
  p.sigma_y = config.anisotropic ? sigma(rng) : p.sigma_x;
  p.theta = config.anisotropic ? theta(rng) : 0.0;
  p.noise_sigma = noise(rng);
  return p;
}

Tensor blur_reflect(const Tensor& image, const Tensor& kernel) {
  const Shape s = image.shape();
  const Shape ks = kernel.shape();
  if (ks.n != 1 || ks.c != 1 || ks.h % 2 == 0 || ks.w % 2 == 0) {
    throw std::invalid_argument("blur kernel must be (1,1,k,k) with odd k, got " + ks.str());
  }
  const auto src = image.data();
  const auto k = kernel.data();
  const auto rh = static_cast<std::ptrdiff_t>(ks.h / 2), rw = static_cast<std::ptrdiff_t>(ks.w / 2);
  const auto H = static_cast<std::ptrdiff_t>(s.h), W = static_cast<std::ptrdiff_t>(s.w);
  std::vector<float> out(s.numel());
  std::vector<std::size_t> col(static_cast<std::size_t>(W + 2 * rw));
  for (std::ptrdiff_t x = -rw; x < W + rw; ++x) col[static_cast<std::size_t>(x + rw)] = reflect(x, W);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const float* plane = src.data() + p * s.plane();
    float* dst = out.data() + p * s.plane();
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t dy = -rh; dy <= rh; ++dy) {
          const float* row = plane + reflect(y + dy, H) * s.w;
          const float* krow = k.data() + static_cast<std::size_t>(dy + rh) * ks.w;
          for (std::ptrdiff_t dx = -rw; dx <= rw; ++dx) {
            acc += static_cast<double>(krow[dx + rw]) * row[col[static_cast<std::size_t>(x + dx + rw)]];
          }
        }
        dst[y * W + x] = static_cast<float>(acc);
      }
    }
  }
  return Tensor::from_data(s, std::move(out));
}

Tensor box_downsample(const Tensor& image, std::size_t factor) {
  const Shape s = image.shape();
  if (factor == 0 || s.h % factor != 0 || s.w % factor != 0) {
    throw std::invalid_argument("extents " + s.str() + " not divisible by " + std::to_string(factor));
  }
  const Shape o{s.n, s.c, s.h / factor, s.w / factor};
  const auto src = image.data();
  std::vector<float> out(o.numel());
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const float* plane = src.data() + p * s.plane();
    for (std::size_t y = 0; y < o.h; ++y) {
      for (std::size_t x = 0; x < o.w; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy) {
          for (std::size_t dx = 0; dx < factor; ++dx) acc += plane[(y * factor + dy) * s.w + x * factor + dx];
        }
        out[p * o.plane() + y * o.w + x] = static_cast<float>(acc * inv);
      }
    }
  }
  return Tensor::from_data(o, std::move(out));
}

Tensor degrade_with(const Tensor& hr, std::size_t kernel_size, const DegradationParams& params, Rng& noise_rng) {
  const Shape s = hr.shape();
  if (s.h % 4 != 0 || s.w % 4 != 0) throw std::invalid_argument("HR extents " + s.str() + " not divisible by 4");
  const Tensor k = gaussian_kernel(kernel_size, params.sigma_x, params.sigma_y, params.theta);
  Tensor lr = box_downsample(blur_reflect(hr, k), 4);
  auto v = lr.mutable_data();
  if (params.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, params.noise_sigma);
    for (float& x : v) x = static_cast<float>(x + noise(noise_rng));
  }
  for (float& x : v) x = std::clamp(x, 0.0f, 1.0f);
  return lr;
}

Tensor degrade(const Tensor& hr, const DegradationConfig& config, Rng& rng) {
  config.validate();
  const Shape s = hr.shape();
  if (s.c != 3) throw std::invalid_argument("degrade expects RGB input, got " + s.str());
  if (s.h % 4 != 0 || s.w % 4 != 0) throw std::invalid_argument("HR extents " + s.str() + " not divisible by 4");
  const Shape one{1, s.c, s.h, s.w};
  const Shape lo{s.n, s.c, s.h / 4, s.w / 4};
  std::vector<float> out(lo.numel());
  const auto src = hr.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    const DegradationParams p = sample_degradation(config, rng);
    const Tensor img = Tensor::from_data(
        one, std::vector<float>(src.begin() + n * one.numel(), src.begin() + (n + 1) * one.numel()));
    const Tensor lr = degrade_with(img, config.kernel_size, p, rng);
    std::copy(lr.data().begin(), lr.data().end(), out.begin() + n * lr.numel());
  }
  return Tensor::from_data(lo, std::move(out));
}

Tensor degrade_sample(const Tensor& hr, const DegradationConfig& config, std::string_view sample_id) {
  Rng rng(derive_seed(config.seed, sample_id));
  return degrade(hr, config, rng);
}

}  // namespace pbsr
