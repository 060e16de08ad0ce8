// SPDX-License-Identifier: Apache-2.0

#include "pbsr/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pbsr/errors.hpp"

namespace pbsr {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"run", {"seed", "checkpoint_every"}},
      {"data", {"general_manifest", "blur_manifest", "general_split", "blur_split"}},
      {"train", {"lr", "beta1", "beta2", "adam_eps", "batch_size", "hr_patch", "total_iters", "adv_weight", "l1_weight",
                 "clamp_hinge"}},
      {"model", {"base_channels", "residual_blocks", "slope", "disc_base_channels", "disc_downsamples", "disc_slope"}},
      {"fusion", {"enabled", "lambda0", "k", "scope"}},
      {"degradation", {"kernel_size", "sigma_min", "sigma_max", "anisotropic", "theta_min", "theta_max", "factor",
                       "noise_min", "noise_max", "seed"}},
  };
  return s;
}

pt::ptree read_ini(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return tree;
}

void check_keys(const pt::ptree& tree, bool only_degradation) {
  for (const auto& [section, keys] : tree) {
    auto it = schema().find(section);
    if (it == schema().end()) {
      if (keys.empty() && !keys.data().empty()) throw ConfigError("key '" + section + "' must be inside a section");
      throw ConfigError("unknown config section [" + section + "]");
    }
    if (only_degradation && section != "degradation") continue;
    for (const auto& [key, _] : keys) {
      if (!it->second.count(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
    }
  }
}

template <typename T>
void read(const pt::ptree& tree, const std::string& key, T& out) {
  const auto node = tree.get_child_optional(pt::ptree::path_type(key, '.'));
  if (!node) return;
  const std::string raw = node->data();
  if constexpr (std::is_same_v<T, bool>) {
    if (raw == "true" || raw == "1") {
      out = true;
    } else if (raw == "false" || raw == "0") {
      out = false;
    } else {
      throw ConfigError("config key '" + key + "' expects true or false, got '" + raw + "'");
    }
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = raw;
  } else {
    if constexpr (std::is_unsigned_v<T>) {
      if (!raw.empty() && raw.front() == '-') throw ConfigError("config key '" + key + "' must be non-negative");
    }
    const auto v = node->get_value_optional<T>();
    if (!v) throw ConfigError("config key '" + key + "' has invalid value '" + raw + "'");
    out = *v;
  }
}

void read_degradation(const pt::ptree& tree, DegradationConfig& d) {
  read(tree, "degradation.kernel_size", d.kernel_size);
  read(tree, "degradation.sigma_min", d.sigma_min);
  read(tree, "degradation.sigma_max", d.sigma_max);
  read(tree, "degradation.anisotropic", d.anisotropic);
  read(tree, "degradation.theta_min", d.theta_min);
  read(tree, "degradation.theta_max", d.theta_max);
  read(tree, "degradation.factor", d.factor);
  read(tree, "degradation.noise_min", d.noise_min);
  read(tree, "degradation.noise_max", d.noise_max);
  read(tree, "degradation.seed", d.seed);
}

template <typename F>
void validated(F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_run_config(const std::string& ini_text, const std::filesystem::path& base_dir) {
  const pt::ptree tree = read_ini(ini_text);
  check_keys(tree, false);
  RunConfig c;
  DualConfig& d = c.dual;
  read(tree, "run.seed", d.train.seed);
  read(tree, "run.checkpoint_every", d.checkpoint_every);

  std::string general, blur;
  read(tree, "data.general_manifest", general);
  read(tree, "data.blur_manifest", blur);
  read(tree, "data.general_split", c.general_split);
  read(tree, "data.blur_split", c.blur_split);
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  c.general_manifest = resolve(general);
  c.blur_manifest = resolve(blur);

  read(tree, "train.lr", d.train.lr);
  read(tree, "train.beta1", d.train.beta1);
  read(tree, "train.beta2", d.train.beta2);
  read(tree, "train.adam_eps", d.train.adam_eps);
  read(tree, "train.batch_size", d.train.batch_size);
  read(tree, "train.hr_patch", d.train.hr_patch);
  read(tree, "train.total_iters", d.train.total_iters);
  read(tree, "train.adv_weight", d.train.adv_weight);
  read(tree, "train.l1_weight", d.train.l1_weight);
  read(tree, "train.clamp_hinge", d.train.clamp_hinge);

  read(tree, "model.base_channels", d.generator.base_channels);
  read(tree, "model.residual_blocks", d.generator.n_residual_blocks);
  read(tree, "model.slope", d.generator.slope);
  read(tree, "model.disc_base_channels", d.discriminator.base_channels);
  read(tree, "model.disc_downsamples", d.discriminator.n_downsamples);
  read(tree, "model.disc_slope", d.discriminator.slope);

  read(tree, "fusion.enabled", d.fusion.enabled);
  read(tree, "fusion.lambda0", d.fusion.lambda0);
  read(tree, "fusion.k", d.fusion.k);
  std::string scope = to_string(d.fusion.scope);
  read(tree, "fusion.scope", scope);

  read_degradation(tree, d.degradation);

  validated([&] {
    d.fusion.scope = parse_fusion_scope(scope);
    d.train.validate();
    d.generator.validate();
    d.discriminator.validate();
    d.fusion.validate();
    d.degradation.validate();
  });
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

DegradationConfig load_degradation_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const pt::ptree tree = read_ini(ss.str());
  check_keys(tree, true);
  DegradationConfig d;
  read_degradation(tree, d);
  validated([&] { d.validate(); });
  return d;
}

std::string to_ini(const DegradationConfig& g) {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "[degradation]\nkernel_size = " << g.kernel_size << "\nsigma_min = " << num(g.sigma_min)
     << "\nsigma_max = " << num(g.sigma_max) << "\nanisotropic = " << b(g.anisotropic)
     << "\ntheta_min = " << num(g.theta_min) << "\ntheta_max = " << num(g.theta_max) << "\nfactor = " << g.factor
     << "\nnoise_min = " << num(g.noise_min) << "\nnoise_max = " << num(g.noise_max) << "\nseed = " << g.seed << "\n";
  return os.str();
}

std::string to_ini(const RunConfig& c) {
  const DualConfig& d = c.dual;
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "[run]\nseed = " << d.train.seed << "\ncheckpoint_every = " << d.checkpoint_every << "\n\n";
  os << "[data]\ngeneral_manifest = " << c.general_manifest.string() << "\nblur_manifest = " << c.blur_manifest.string()
     << "\ngeneral_split = " << c.general_split << "\nblur_split = " << c.blur_split << "\n\n";
  os << "[train]\nlr = " << num(d.train.lr) << "\nbeta1 = " << num(d.train.beta1) << "\nbeta2 = " << num(d.train.beta2)
     << "\nadam_eps = " << num(d.train.adam_eps) << "\nbatch_size = " << d.train.batch_size
     << "\nhr_patch = " << d.train.hr_patch << "\ntotal_iters = " << d.train.total_iters
     << "\nadv_weight = " << num(d.train.adv_weight) << "\nl1_weight = " << num(d.train.l1_weight)
     << "\nclamp_hinge = " << b(d.train.clamp_hinge) << "\n\n";
  os << "[model]\nbase_channels = " << d.generator.base_channels << "\nresidual_blocks = " << d.generator.n_residual_blocks
     << "\nslope = " << num(d.generator.slope) << "\ndisc_base_channels = " << d.discriminator.base_channels
     << "\ndisc_downsamples = " << d.discriminator.n_downsamples << "\ndisc_slope = " << num(d.discriminator.slope)
     << "\n\n";
  os << "[fusion]\nenabled = " << b(d.fusion.enabled) << "\nlambda0 = " << num(d.fusion.lambda0) << "\nk = " << d.fusion.k
     << "\nscope = " << to_string(d.fusion.scope) << "\n\n";
  os << to_ini(d.degradation);
  return os.str();
}

}  // namespace pbsr
