// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pbsr {

struct GradSuiteResult {
  std::string op;
  std::uint64_t seed = 0;
  std::size_t input_elements = 0;
  double max_error = 0.0;
  std::size_t probed = 0;
  std::size_t excluded = 0;
  bool passed = false;
};

constexpr double kGradSuiteTolerance = 1e-3;
constexpr std::size_t kGradSuiteMaxElements = 512;

/// Finite-difference check of every differentiable operator (and the two
/// training losses) on random inputs of at most 512 elements, once per seed.
/// A case passes when the relative error stays below 1e-3 and at most a
/// quarter of its coordinates were excluded as kink crossings.
std::vector<GradSuiteResult> run_grad_suite(std::size_t seeds = 5);

}  // namespace pbsr
