// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "pbsr/param_set.hpp"
#include "pbsr/tensor.hpp"

namespace pbsr {

/// Tiny x4 generator: conv head, residual blocks, two (x2 nearest + conv)
/// stages, conv tail, plus a global nearest-x4 skip of the input.
struct GeneratorConfig {
  std::size_t base_channels = 16;
  std::size_t n_residual_blocks = 4;
  std::size_t scale = 4;
  float slope = 0.2f;
  /// Zero the tail conv so the network starts as nearest-x4 upsampling.
  bool zero_init_tail = false;

  void validate() const;
  /// Recovers the architecture from parameter names/extents and metadata.
  static GeneratorConfig from_params(const ParamSet& params);
};

/// Patch discriminator: n strided 4x4 convs (each halves H and W) followed by
/// a 3x3 conv to one logit channel. in_channels = 4 means image + blur map.
struct DiscriminatorConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 16;
  std::size_t n_downsamples = 2;
  float slope = 0.2f;

  bool conditional() const { return in_channels == 4; }
  void validate() const;
  static DiscriminatorConfig from_params(const ParamSet& params);
};

/// Parameter tensors keyed by name, ready for a forward pass.
template <typename T>
using Weights = std::map<std::string, BasicTensor<T>>;

/// Leaf tensors for every entry, optionally tracking gradients.
template <typename T>
Weights<T> make_weights(const ParamSet& params, bool requires_grad);

/// Copies gradients of `weights` into a ParamSet aligned with `like`.
/// Parameters that received no gradient get zeros.
ParamSet collect_grads(const Weights<float>& weights, const ParamSet& like);

ParamSet build_generator(const GeneratorConfig& config, std::uint64_t seed);
ParamSet build_discriminator(const DiscriminatorConfig& config, std::uint64_t seed);

/// Closed-form parameter count of build_generator(config).
std::size_t generator_parameter_count(const GeneratorConfig& config);

template <typename T>
BasicTensor<T> generator_forward(const GeneratorConfig& config, const Weights<T>& weights, const BasicTensor<T>& lr);
/// Inference convenience (no gradients).
Tensor generator_forward(const ParamSet& params, const Tensor& lr);

/// Logits of shape (N, 1, H / 2^d, W / 2^d). A conditional discriminator
/// requires `mask` (N,1,H,W); an unconditional one rejects it.
template <typename T>
BasicTensor<T> discriminator_forward(const DiscriminatorConfig& config, const Weights<T>& weights,
                                     const BasicTensor<T>& image, const std::optional<BasicTensor<T>>& mask);
Tensor discriminator_forward(const ParamSet& params, const Tensor& image, const std::optional<Tensor>& mask);

/// Nearest x4 upsampling; the baseline "model" used for smoke evaluation.
Tensor nearest_x4(const Tensor& lr);

}  // namespace pbsr
