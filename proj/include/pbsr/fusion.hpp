// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "pbsr/param_set.hpp"

namespace pbsr {

enum class FusionScope { generator_only, generator_and_discriminator };

std::string to_string(FusionScope scope);
FusionScope parse_fusion_scope(const std::string& s);

struct FusionConfig {
  bool enabled = true;
  double lambda0 = 0.99;
  std::size_t k = 20;
  FusionScope scope = FusionScope::generator_only;

  void validate() const;
};

/// One cross-interpolation event for one network.
struct FusionLog {
  std::size_t iteration = 0;
  std::string network = "generator";
  double lambda = 0.0;
  double cos_before = 0.0;
  double cos_after = 0.0;
  double diff_norm_before = 0.0;
  double diff_norm_after = 0.0;
  /// Coordinates whose float32 pair mean could not be kept bit-identical.
  std::size_t mean_drift = 0;
};

/// lambda0 + (1 - lambda0) * cos(a, b) / 2, with the cosine taken over the
/// globally flattened weights. Throws DegenerateInputError on a zero norm.
double adaptive_lambda(const ParamSet& general, const ParamSet& blur, double lambda0);

struct InterpolatedPair {
  ParamSet general;
  ParamSet blur;
  FusionLog log;
};

/// general' = lambda general + (1 - lambda) blur and symmetrically for blur'.
///
/// Each output pair is rounded jointly so that its float32 mean (as computed
/// by final_fuse) equals the inputs' mean; both values stay within a few ulps
/// of the larger-magnitude output of the exact interpolation. final_fuse
/// therefore returns the same bits before and after any number of
/// interpolations. Coordinates where no such pair exists fall back to nearest
/// rounding and are counted in FusionLog::mean_drift.
InterpolatedPair cross_interpolate(const ParamSet& general, const ParamSet& blur, double lambda,
                                   std::size_t iteration = 0);

/// Coordinatewise mean, rounded once from double. Symmetric in its arguments.
/// Metadata records both parents' checksums. Fusing a set with an identical
/// set returns it unchanged, metadata included.
ParamSet final_fuse(const ParamSet& general, const ParamSet& blur);

/// The float32 mean used by final_fuse for a single coordinate.
float fused_value(float a, float b);

/// iteration >= 1; true iff iteration is a multiple of k.
bool should_fuse(std::size_t iteration, std::size_t k);

}  // namespace pbsr
