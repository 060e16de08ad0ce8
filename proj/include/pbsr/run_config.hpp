// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "pbsr/trainer.hpp"

namespace pbsr {

/// Everything a `train` run needs, read from an INI file with sections
/// [run], [data], [train], [model], [fusion] and [degradation]. Keys left out
/// keep their defaults; unknown sections or keys are rejected.
struct RunConfig {
  DualConfig dual;
  std::filesystem::path general_manifest;
  std::filesystem::path blur_manifest;
  std::string general_split = "train";
  std::string blur_split = "train";
};

/// Relative manifest paths are resolved against `base_dir`. Throws ConfigError.
RunConfig parse_run_config(const std::string& ini_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its effective value; parse_run_config(to_ini(c)) == c.
std::string to_ini(const RunConfig& config);

/// The [degradation] section alone.
std::string to_ini(const DegradationConfig& config);

/// Only the [degradation] section (other sections are allowed and ignored).
DegradationConfig load_degradation_config(const std::filesystem::path& path);

}  // namespace pbsr
