// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

#include "pbsr/rng.hpp"
#include "pbsr/tensor.hpp"

namespace pbsr {

/// Blur -> x4 box downsample -> additive Gaussian noise, clipped to [0,1].
struct DegradationConfig {
  std::size_t kernel_size = 7;
  double sigma_min = 0.2;
  double sigma_max = 3.0;
  bool anisotropic = true;
  double theta_min = 0.0;
  double theta_max = 3.14159265358979323846;
  std::size_t factor = 4;
  double noise_min = 0.0;
  double noise_max = 10.0 / 255.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One draw of the random degradation parameters.
struct DegradationParams {
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double theta = 0.0;
  double noise_sigma = 0.0;
};

/// Normalized anisotropic Gaussian, shape (1,1,size,size).
Tensor gaussian_kernel(std::size_t size, double sigma_x, double sigma_y, double theta);

DegradationParams sample_degradation(const DegradationConfig& config, Rng& rng);

/// Per-channel convolution with a (1,1,k,k) kernel using reflect padding.
Tensor blur_reflect(const Tensor& image, const Tensor& kernel);
/// Mean over non-overlapping factor x factor blocks.
Tensor box_downsample(const Tensor& image, std::size_t factor);

/// Applies one fixed parameter draw to every image in the batch. Noise is
/// drawn from `noise_rng`.
Tensor degrade_with(const Tensor& hr, std::size_t kernel_size, const DegradationParams& params, Rng& noise_rng);

/// Each image in the batch draws its own parameters and noise from `rng`.
Tensor degrade(const Tensor& hr, const DegradationConfig& config, Rng& rng);

/// Stream keyed by (config.seed, sample_id), independent of dataset order.
Tensor degrade_sample(const Tensor& hr, const DegradationConfig& config, std::string_view sample_id);

}  // namespace pbsr
