// SPDX-License-Identifier: Apache-2.0

#include "pbsr/models.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "pbsr/rng.hpp"

namespace pbsr {

namespace {

std::string indexed(const char* prefix, std::size_t i, const char* suffix) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02zu", i);
  return std::string(prefix) + buf + suffix;
}

std::string res_name(std::size_t block, int conv, const char* field) {
  return indexed("gen.res.", block, (".conv" + std::to_string(conv) + "." + field).c_str());
}

std::string disc_down_name(std::size_t i, const char* field) {
  return indexed("disc.down.", i, (std::string(".") + field).c_str());
}

// He-style fan-in initialization for leaky ReLU, scaled by `gain_scale`.
void add_conv(ParamSet& p, Rng& rng, const std::string& name, std::size_t cout, std::size_t cin, std::size_t k,
              float slope, float gain_scale) {
  const double fan_in = static_cast<double>(cin * k * k);
  const double stddev = gain_scale * std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
  std::normal_distribution<float> dist(0.0f, static_cast<float>(stddev));
  Array w{{static_cast<std::uint32_t>(cout), static_cast<std::uint32_t>(cin), static_cast<std::uint32_t>(k),
           static_cast<std::uint32_t>(k)},
          {}};
  w.values.resize(w.numel());
  for (float& v : w.values) v = dist(rng);
  p.insert(name + ".weight", std::move(w));
  p.insert(name + ".bias", Array{{static_cast<std::uint32_t>(cout)}, std::vector<float>(cout, 0.0f)});
}

float metadata_float(const ParamSet& p, const std::string& key, float fallback) {
  auto it = p.metadata().find(key);
  return it == p.metadata().end() ? fallback : std::stof(it->second);
}

template <typename T>
const BasicTensor<T>& get(const Weights<T>& w, const std::string& name) {
  auto it = w.find(name);
  if (it == w.end()) throw std::invalid_argument("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
BasicTensor<T> conv(const Weights<T>& w, const std::string& name, const BasicTensor<T>& x, std::size_t stride,
                    std::size_t padding) {
  return conv2d(x, get(w, name + ".weight"), get(w, name + ".bias"), stride, padding);
}

// Initial gain of the second conv in every residual block.
constexpr float kResidualInitScale = 0.1f;

}  // namespace

// ---- Configs ---------------------------------------------------------------

void GeneratorConfig::validate() const {
  if (scale != 4) throw std::invalid_argument("generator scale must be 4");
  if (base_channels < 4) throw std::invalid_argument("generator needs at least 4 channels");
  if (n_residual_blocks < 1) throw std::invalid_argument("generator needs at least one residual block");
  if (!(slope >= 0.0f && slope < 1.0f)) throw std::invalid_argument("activation slope must lie in [0, 1)");
}

GeneratorConfig GeneratorConfig::from_params(const ParamSet& params) {
  GeneratorConfig c;
  const Array& head = params.at("gen.head.weight");
  if (head.extents.size() != 4 || head.extents[1] != 3) throw std::invalid_argument("gen.head.weight must be (C,3,3,3)");
  c.base_channels = head.extents[0];
  c.n_residual_blocks = 0;
  while (params.contains(res_name(c.n_residual_blocks, 1, "weight"))) ++c.n_residual_blocks;
  c.slope = metadata_float(params, "gen.slope", 0.2f);
  c.validate();
  return c;
}

void DiscriminatorConfig::validate() const {
  if (in_channels != 3 && in_channels != 4) throw std::invalid_argument("discriminator in_channels must be 3 or 4");
  if (base_channels < 1) throw std::invalid_argument("discriminator needs at least one channel");
  if (n_downsamples < 1) throw std::invalid_argument("discriminator needs at least one downsampling stage");
  if (!(slope >= 0.0f && slope < 1.0f)) throw std::invalid_argument("activation slope must lie in [0, 1)");
}

DiscriminatorConfig DiscriminatorConfig::from_params(const ParamSet& params) {
  DiscriminatorConfig c;
  const Array& first = params.at(disc_down_name(0, "weight"));
  c.in_channels = first.extents.at(1);
  c.base_channels = first.extents.at(0);
  c.n_downsamples = 0;
  while (params.contains(disc_down_name(c.n_downsamples, "weight"))) ++c.n_downsamples;
  c.slope = metadata_float(params, "disc.slope", 0.2f);
  c.validate();
  return c;
}

// ---- Weights ---------------------------------------------------------------

template <typename T>
Weights<T> make_weights(const ParamSet& params, bool requires_grad) {
  Weights<T> w;
  for (const auto& [name, array] : params.entries()) {
    w.emplace(name, tensor_cast<T>(to_tensor(array), requires_grad));
  }
  return w;
}

template Weights<float> make_weights(const ParamSet&, bool);
template Weights<double> make_weights(const ParamSet&, bool);

ParamSet collect_grads(const Weights<float>& weights, const ParamSet& like) {
  ParamSet grads;
  for (const auto& [name, array] : like.entries()) {
    Array g{array.extents, std::vector<float>(array.values.size(), 0.0f)};
    auto it = weights.find(name);
    if (it != weights.end() && it->second.has_grad()) {
      const auto src = it->second.grad();
      std::copy(src.begin(), src.end(), g.values.begin());
    }
    grads.insert(name, std::move(g));
  }
  return grads;
}

// ---- Builders --------------------------------------------------------------

ParamSet build_generator(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, std::string_view("generator")));
  const std::size_t c = config.base_channels;
  const float s = config.slope;
  ParamSet p;
  add_conv(p, rng, "gen.head", c, 3, 3, s, 1.0f);
  for (std::size_t b = 0; b < config.n_residual_blocks; ++b) {
    const std::string prefix = indexed("gen.res.", b, "");
    add_conv(p, rng, prefix + ".conv1", c, c, 3, s, 1.0f);
    add_conv(p, rng, prefix + ".conv2", c, c, 3, s, kResidualInitScale);
  }
  add_conv(p, rng, "gen.up.00", c, c, 3, s, 1.0f);
  add_conv(p, rng, "gen.up.01", c, c, 3, s, 1.0f);
  add_conv(p, rng, "gen.tail", 3, c, 3, s, 1.0f);
  if (config.zero_init_tail) {
    for (float& v : p.at("gen.tail.weight").values) v = 0.0f;
  }
  p.metadata()["arch"] = "generator";
  p.metadata()["gen.base_channels"] = std::to_string(c);
  p.metadata()["gen.blocks"] = std::to_string(config.n_residual_blocks);
  p.metadata()["gen.slope"] = std::to_string(s);
  p.metadata()["init.seed"] = std::to_string(seed);
  return p;
}

std::size_t generator_parameter_count(const GeneratorConfig& config) {
  const std::size_t c = config.base_channels;
  const std::size_t conv_cc = c * c * 9 + c;
  return (c * 3 * 9 + c) + config.n_residual_blocks * 2 * conv_cc + 2 * conv_cc + (3 * c * 9 + 3);
}

ParamSet build_discriminator(const DiscriminatorConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, std::string_view(config.conditional() ? "disc.conditional" : "disc.unconditional")));
  ParamSet p;
  std::size_t cin = config.in_channels;
  std::size_t cout = config.base_channels;
  for (std::size_t i = 0; i < config.n_downsamples; ++i) {
    add_conv(p, rng, indexed("disc.down.", i, ""), cout, cin, 4, config.slope, 1.0f);
    cin = cout;
    cout *= 2;
  }
  add_conv(p, rng, "disc.out", 1, cin, 3, config.slope, 1.0f);
  p.metadata()["arch"] = config.conditional() ? "discriminator.conditional" : "discriminator.unconditional";
  p.metadata()["disc.slope"] = std::to_string(config.slope);
  p.metadata()["init.seed"] = std::to_string(seed);
  return p;
}

// ---- Forward passes --------------------------------------------------------

template <typename T>
BasicTensor<T> generator_forward(const GeneratorConfig& config, const Weights<T>& w, const BasicTensor<T>& lr) {
  if (lr.shape().c != 3) throw std::invalid_argument("generator expects 3-channel input, got " + lr.shape().str());
  const T slope = static_cast<T>(config.slope);
  BasicTensor<T> f = leaky_relu(conv(w, "gen.head", lr, 1, 1), slope);
  for (std::size_t b = 0; b < config.n_residual_blocks; ++b) {
    const std::string prefix = indexed("gen.res.", b, "");
    BasicTensor<T> r = leaky_relu(conv(w, prefix + ".conv1", f, 1, 1), slope);
    f = add(f, conv(w, prefix + ".conv2", r, 1, 1));
  }
  for (const char* stage : {"gen.up.00", "gen.up.01"}) {
    f = leaky_relu(conv(w, stage, resize_nearest(f, 2, ResizeDirection::up), 1, 1), slope);
  }
  return add(conv(w, "gen.tail", f, 1, 1), resize_nearest(lr, 4, ResizeDirection::up));
}

template Tensor generator_forward(const GeneratorConfig&, const Weights<float>&, const Tensor&);
template Tensor64 generator_forward(const GeneratorConfig&, const Weights<double>&, const Tensor64&);

Tensor generator_forward(const ParamSet& params, const Tensor& lr) {
  return generator_forward(GeneratorConfig::from_params(params), make_weights<float>(params, false), lr);
}

template <typename T>
BasicTensor<T> discriminator_forward(const DiscriminatorConfig& config, const Weights<T>& w,
                                     const BasicTensor<T>& image, const std::optional<BasicTensor<T>>& mask) {
  if (image.shape().c != 3) throw std::invalid_argument("discriminator expects a 3-channel image");
  if (config.conditional() != mask.has_value()) {
    throw std::invalid_argument(config.conditional() ? "conditional discriminator requires a blur map"
                                                     : "unconditional discriminator does not accept a blur map");
  }
  BasicTensor<T> x = image;
  if (mask) {
    const Shape ms = mask->shape();
    if (ms.c != 1 || ms.n != image.shape().n || ms.h != image.shape().h || ms.w != image.shape().w) {
      throw std::invalid_argument("blur map " + ms.str() + " does not match image " + image.shape().str());
    }
    x = concat_channels(image, *mask);
  }
  const T slope = static_cast<T>(config.slope);
  for (std::size_t i = 0; i < config.n_downsamples; ++i) {
    x = leaky_relu(conv(w, indexed("disc.down.", i, ""), x, 2, 1), slope);
  }
  return conv(w, "disc.out", x, 1, 1);
}

template Tensor discriminator_forward(const DiscriminatorConfig&, const Weights<float>&, const Tensor&,
                                      const std::optional<Tensor>&);
template Tensor64 discriminator_forward(const DiscriminatorConfig&, const Weights<double>&, const Tensor64&,
                                        const std::optional<Tensor64>&);

Tensor discriminator_forward(const ParamSet& params, const Tensor& image, const std::optional<Tensor>& mask) {
  return discriminator_forward(DiscriminatorConfig::from_params(params), make_weights<float>(params, false), image,
                               mask);
}

Tensor nearest_x4(const Tensor& lr) { return resize_nearest(lr.detach(), 4, ResizeDirection::up); }

}  // namespace pbsr
