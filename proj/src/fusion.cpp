// SPDX-License-Identifier: Apache-2.0

#include "pbsr/fusion.hpp"

#include "pbsr/errors.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pbsr {

namespace {

float ulp_step(float x, int k) {
  const float toward = k > 0 ? std::numeric_limits<float>::infinity() : -std::numeric_limits<float>::infinity();
  for (int i = 0; i < std::abs(k); ++i) x = std::nextafter(x, toward);
  return x;
}

struct PairResult {
  float a;
  float b;
  bool preserved;
};

// Nearest rounding unless that moves the pair mean. Otherwise the larger
// output is tried at nearby floats and the smaller one is solved from the
// target mean, keeping the candidate closest to the exact interpolation.
PairResult interpolate_pair(float g, float b, double lambda) {
  const double x = lambda * g + (1.0 - lambda) * b;
  const double y = lambda * b + (1.0 - lambda) * g;
  const float xf = static_cast<float>(x);
  const float yf = static_cast<float>(y);
  const float target = fused_value(g, b);
  if (fused_value(xf, yf) == target) return {xf, yf, true};

  const bool x_big = std::fabs(x) >= std::fabs(y);
  const double big = x_big ? x : y, small = x_big ? y : x;
  const float big_f = x_big ? xf : yf;
  bool found = false;
  float best_big = big_f, best_small = 0.0f;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int i = -2; i <= 2; ++i) {
    const float c = ulp_step(big_f, i);
    const float solved = static_cast<float>(2.0 * static_cast<double>(target) - c);
    for (int j = -2; j <= 2; ++j) {
      const float o = ulp_step(solved, j);
      if (fused_value(c, o) != target) continue;
      const double cost = std::fabs(c - big) + std::fabs(o - small);
      if (cost < best_cost) {
        best_cost = cost;
        best_big = c;
        best_small = o;
        found = true;
      }
    }
  }
  if (!found) return {xf, yf, false};
  return x_big ? PairResult{best_big, best_small, true} : PairResult{best_small, best_big, true};
}

double cosine_or_nan(const ParamSet& a, const ParamSet& b) {
  try {
    return cosine_similarity(a, b);
  } catch (const DegenerateInputError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

std::string to_string(FusionScope scope) {
  return scope == FusionScope::generator_only ? "generator_only" : "generator_and_discriminator";
}

FusionScope parse_fusion_scope(const std::string& s) {
  if (s == "generator_only") return FusionScope::generator_only;
  if (s == "generator_and_discriminator") return FusionScope::generator_and_discriminator;
  throw std::invalid_argument("unknown fusion scope '" + s + "'");
}

void FusionConfig::validate() const {
  if (!(lambda0 >= 0.0 && lambda0 <= 1.0)) throw std::invalid_argument("lambda0 must lie in [0, 1]");
  if (k < 1) throw std::invalid_argument("fusion interval k must be >= 1");
}

float fused_value(float a, float b) { return static_cast<float>((static_cast<double>(a) + b) * 0.5); }

double adaptive_lambda(const ParamSet& general, const ParamSet& blur, double lambda0) {
  if (!(lambda0 >= 0.0 && lambda0 <= 1.0)) throw std::invalid_argument("lambda0 must lie in [0, 1]");
  return lambda0 + (1.0 - lambda0) * cosine_similarity(general, blur) / 2.0;
}

InterpolatedPair cross_interpolate(const ParamSet& general, const ParamSet& blur, double lambda,
                                   std::size_t iteration) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (!aligned(general, blur)) throw std::invalid_argument("cross_interpolate: parameter sets are not aligned");
  InterpolatedPair out{general, blur, {}};
  out.log.iteration = iteration;
  out.log.lambda = lambda;
  out.log.cos_before = cosine_or_nan(general, blur);
  out.log.diff_norm_before = distance(general, blur);
  for (auto& [name, ga] : out.general.entries()) {
    Array& ba = out.blur.at(name);
    for (std::size_t i = 0; i < ga.values.size(); ++i) {
      const PairResult r = interpolate_pair(ga.values[i], ba.values[i], lambda);
      ga.values[i] = r.a;
      ba.values[i] = r.b;
      out.log.mean_drift += r.preserved ? 0 : 1;
    }
  }
  out.log.cos_after = cosine_or_nan(out.general, out.blur);
  out.log.diff_norm_after = distance(out.general, out.blur);
  return out;
}

ParamSet final_fuse(const ParamSet& general, const ParamSet& blur) {
  if (!aligned(general, blur)) throw std::invalid_argument("final_fuse: parameter sets are not aligned");
  if (general == blur) return general;
  ParamSet out = general;
  for (auto& [name, a] : out.entries()) {
    const Array& b = blur.at(name);
    for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] = fused_value(a.values[i], b.values[i]);
  }
  // Record parents in sorted order so fuse(a, b) and fuse(b, a) match bit for bit.
  std::string ca = checksum(general), cb = checksum(blur);
  if (cb < ca) std::swap(ca, cb);
  out.metadata() = {};
  for (const auto& [key, value] : general.metadata()) {
    if (key.rfind("arch", 0) == 0 || key.rfind("gen.", 0) == 0 || key.rfind("disc.", 0) == 0) out.metadata()[key] = value;
  }
  out.metadata()["fuse.parent_a"] = ca;
  out.metadata()["fuse.parent_b"] = cb;
  return out;
}

bool should_fuse(std::size_t iteration, std::size_t k) {
  if (iteration < 1) throw std::invalid_argument("iteration must be >= 1");
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  return iteration % k == 0;
}

}  // namespace pbsr
