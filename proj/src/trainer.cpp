// SPDX-License-Identifier: Apache-2.0

#include "pbsr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "pbsr/errors.hpp"
#include "pbsr/image_io.hpp"

namespace pbsr {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("Adam eps must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (hr_patch == 0 || hr_patch % 4 != 0) throw std::invalid_argument("hr_patch must be a positive multiple of 4");
  if (!(adv_weight >= 0.0) || !(l1_weight >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
}

AdamMoments AdamMoments::zeros_like(const ParamSet& params) {
  ParamSet z;
  for (const auto& [name, array] : params.entries()) {
    z.insert(name, Array{array.extents, std::vector<float>(array.values.size(), 0.0f)});
  }
  return {z, z};
}

bool BranchState::conditional() const { return DiscriminatorConfig::from_params(discriminator).conditional(); }

std::string to_string(Branch b) { return b == Branch::general ? "general" : "blur"; }

BranchState make_branch(Branch branch, const GeneratorConfig& gen, DiscriminatorConfig disc, std::uint64_t gen_seed,
                        std::uint64_t disc_seed) {
  disc.in_channels = branch == Branch::blur ? 4 : 3;
  BranchState s;
  s.generator = build_generator(gen, gen_seed);
  s.discriminator = build_discriminator(disc, disc_seed);
  s.generator_moments = AdamMoments::zeros_like(s.generator);
  s.discriminator_moments = AdamMoments::zeros_like(s.discriminator);
  return s;
}

// ---- Losses ------------------------------------------------------------------

template <typename T>
BasicTensor<T> hinge_d_loss(const BasicTensor<T>& real_logits, const BasicTensor<T>& fake_logits, bool clamp) {
  if (real_logits.shape() != fake_logits.shape()) throw std::invalid_argument("logit maps differ in shape");
  BasicTensor<T> real_term = add_scalar(scale(real_logits, T(-1)), T(1));
  BasicTensor<T> fake_term = add_scalar(fake_logits, T(1));
  if (clamp) {
    real_term = relu(real_term);
    fake_term = relu(fake_term);
  }
  return add(reduce_mean(real_term), reduce_mean(fake_term));
}

template Tensor hinge_d_loss(const Tensor&, const Tensor&, bool);
template Tensor64 hinge_d_loss(const Tensor64&, const Tensor64&, bool);

namespace {

template <typename T>
void require_same(const BasicTensor<T>& hr, const BasicTensor<T>& sr) {
  if (hr.shape() != sr.shape()) {
    throw std::invalid_argument("hr " + hr.shape().str() + " and sr " + sr.shape().str() + " differ");
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conditional_d_loss(const DiscriminatorConfig& config, const Weights<T>& d, const BasicTensor<T>& hr,
                                  const BasicTensor<T>& sr, const BasicTensor<T>& mask_hr, bool clamp) {
  require_same(hr, sr);
  const std::optional<BasicTensor<T>> m(mask_hr);
  return hinge_d_loss(discriminator_forward(config, d, hr, m), discriminator_forward(config, d, sr, m), clamp);
}

template Tensor conditional_d_loss(const DiscriminatorConfig&, const Weights<float>&, const Tensor&, const Tensor&,
                                   const Tensor&, bool);
template Tensor64 conditional_d_loss(const DiscriminatorConfig&, const Weights<double>&, const Tensor64&,
                                     const Tensor64&, const Tensor64&, bool);

double conditional_d_loss(const ParamSet& d, const Tensor& hr, const Tensor& sr, const Tensor& mask_hr, bool clamp) {
  return conditional_d_loss(DiscriminatorConfig::from_params(d), make_weights<float>(d, false), hr, sr, mask_hr, clamp)
      .item();
}

template <typename T>
BasicTensor<T> unconditional_d_loss(const DiscriminatorConfig& config, const Weights<T>& d, const BasicTensor<T>& hr,
                                    const BasicTensor<T>& sr, bool clamp) {
  require_same(hr, sr);
  return hinge_d_loss(discriminator_forward(config, d, hr, std::optional<BasicTensor<T>>()),
                      discriminator_forward(config, d, sr, std::optional<BasicTensor<T>>()), clamp);
}

template Tensor unconditional_d_loss(const DiscriminatorConfig&, const Weights<float>&, const Tensor&, const Tensor&,
                                     bool);
template Tensor64 unconditional_d_loss(const DiscriminatorConfig&, const Weights<double>&, const Tensor64&,
                                       const Tensor64&, bool);

double unconditional_d_loss(const ParamSet& d, const Tensor& hr, const Tensor& sr, bool clamp) {
  return unconditional_d_loss(DiscriminatorConfig::from_params(d), make_weights<float>(d, false), hr, sr, clamp).item();
}

template <typename T>
GeneratorLoss<T> generator_loss(const BasicTensor<T>& g_out, const BasicTensor<T>& hr, const DiscriminatorConfig& config,
                                const Weights<T>& d, const std::optional<BasicTensor<T>>& mask, double l1_weight,
                                double adv_weight) {
  require_same(hr, g_out);
  const BasicTensor<T> l1 = reduce_mean(abs(sub(g_out, hr)));
  const BasicTensor<T> adv = scale(reduce_mean(discriminator_forward(config, d, g_out, mask)), T(-1));
  GeneratorLoss<T> out;
  out.total = add(scale(l1, static_cast<T>(l1_weight)), scale(adv, static_cast<T>(adv_weight)));
  out.l1 = static_cast<double>(l1.item());
  out.adv = static_cast<double>(adv.item());
  return out;
}

template GeneratorLoss<float> generator_loss(const Tensor&, const Tensor&, const DiscriminatorConfig&,
                                             const Weights<float>&, const std::optional<Tensor>&, double, double);
template GeneratorLoss<double> generator_loss(const Tensor64&, const Tensor64&, const DiscriminatorConfig&,
                                              const Weights<double>&, const std::optional<Tensor64>&, double, double);

// ---- Optimizer ---------------------------------------------------------------

void adam_step(ParamSet& params, const ParamSet& grads, AdamMoments& moments, std::uint64_t t, double lr, double beta1,
               double beta2, double eps) {
  if (t == 0) throw std::invalid_argument("Adam step number starts at 1");
  if (!aligned(params, grads) || !aligned(params, moments.m) || !aligned(params, moments.v)) {
    throw std::invalid_argument("parameters, gradients and moments are not aligned");
  }
  for (const auto& [name, g] : grads.entries()) {
    for (float v : g.values) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient in '" + name + "'");
    }
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& [name, p] : params.entries()) {
    const std::vector<float>& g = grads.at(name).values;
    std::vector<float>& m = moments.m.at(name).values;
    std::vector<float>& v = moments.v.at(name).values;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double gi = g[i];
      const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
      const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p.values[i] = static_cast<float>(p.values[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  }
}

// ---- Steps -------------------------------------------------------------------

StepRecord train_step(BranchState& branch, const Batch& batch, const TrainConfig& config) {
  config.validate();
  const GeneratorConfig gcfg = GeneratorConfig::from_params(branch.generator);
  const DiscriminatorConfig dcfg = DiscriminatorConfig::from_params(branch.discriminator);
  if (dcfg.conditional() && !batch.mask) throw std::invalid_argument("blur branch requires a blur map per sample");
  if (!dcfg.conditional() && batch.mask) throw std::invalid_argument("general branch does not take blur maps");

  StepRecord rec;
  rec.t = ++branch.t;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    const Tensor sr = generator_forward(gcfg, make_weights<float>(branch.generator, false), batch.lr).detach();
    const Weights<float> d = make_weights<float>(branch.discriminator, true);
    const Tensor loss = dcfg.conditional()
                            ? conditional_d_loss(dcfg, d, batch.hr, sr, *batch.mask, config.clamp_hinge)
                            : unconditional_d_loss(dcfg, d, batch.hr, sr, config.clamp_hinge);
    rec.d_loss = loss.item();
    loss.backward();
    adam_step(branch.discriminator, collect_grads(d, branch.discriminator), branch.discriminator_moments, branch.t,
              config.lr, config.beta1, config.beta2, config.adam_eps);
  } catch (const NumericError&) {
    rec.d_skipped = true;
    if (!std::isfinite(rec.d_loss)) rec.d_loss = nan;
  }

  try {
    const Weights<float> g = make_weights<float>(branch.generator, true);
    const Weights<float> d = make_weights<float>(branch.discriminator, false);
    const Tensor sr = generator_forward(gcfg, g, batch.lr);
    const GeneratorLoss<float> loss =
        generator_loss(sr, batch.hr, dcfg, d, batch.mask, config.l1_weight, config.adv_weight);
    rec.g_l1 = loss.l1;
    rec.g_adv = loss.adv;
    loss.total.backward();
    adam_step(branch.generator, collect_grads(g, branch.generator), branch.generator_moments, branch.t, config.lr,
              config.beta1, config.beta2, config.adam_eps);
  } catch (const NumericError&) {
    rec.g_skipped = true;
  }
  return rec;
}

// ---- Data --------------------------------------------------------------------

std::vector<TrainingImage> load_training_images(const DatasetManifest& manifest, const std::string& split,
                                                bool with_masks) {
  std::vector<TrainingImage> out;
  for (const BlurSample& s : manifest.select(split)) {
    TrainingImage img{s.id, read_rgb(manifest.hr_file(s)), std::nullopt};
    if (with_masks) img.mask = read_mask(manifest.mask_file(s));
    out.push_back(std::move(img));
  }
  return out;
}

BatchSampler::BatchSampler(std::vector<TrainingImage> images, std::size_t batch_size, std::size_t hr_patch,
                           DegradationConfig degradation, std::uint64_t seed)
    : images_(std::move(images)),
      batch_size_(batch_size),
      patch_(hr_patch),
      degradation_(std::move(degradation)),
      rng_(seed) {
  if (images_.empty()) throw std::invalid_argument("training pool is empty");
  if (batch_size_ == 0) throw std::invalid_argument("batch_size must be positive");
  if (patch_ == 0 || patch_ % degradation_.factor != 0) {
    throw std::invalid_argument("patch must be a positive multiple of the downsampling factor");
  }
  degradation_.validate();
  const bool masked = images_.front().mask.has_value();
  for (const TrainingImage& img : images_) {
    const Shape s = img.hr.shape();
    if (s.n != 1 || s.c != 3) throw std::invalid_argument("training image '" + img.id + "' must be (1,3,H,W)");
    if (s.h < patch_ || s.w < patch_) throw std::invalid_argument("training image '" + img.id + "' is smaller than patch");
    if (img.mask.has_value() != masked) throw std::invalid_argument("pool mixes masked and unmasked images");
    if (img.mask && (img.mask->shape().h != s.h || img.mask->shape().w != s.w)) {
      throw std::invalid_argument("mask of '" + img.id + "' does not match its image");
    }
  }
  order_.resize(images_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  cursor_ = order_.size();
}

Batch BatchSampler::next() {
  const std::size_t p = patch_;
  const bool masked = images_.front().mask.has_value();
  std::vector<float> hr(batch_size_ * 3 * p * p);
  std::vector<float> mask(masked ? batch_size_ * p * p : 0);
  for (std::size_t b = 0; b < batch_size_; ++b) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    const TrainingImage& img = images_[order_[cursor_++]];
    const Shape s = img.hr.shape();
    std::uniform_int_distribution<std::size_t> oy(0, s.h - p), ox(0, s.w - p);
    const std::size_t y = oy(rng_);
    const std::size_t x = ox(rng_);
    const Tensor hc = crop(img.hr, y, x, p, p);
    std::copy(hc.data().begin(), hc.data().end(), hr.begin() + b * 3 * p * p);
    if (masked) {
      const Tensor mc = crop(*img.mask, y, x, p, p);
      std::copy(mc.data().begin(), mc.data().end(), mask.begin() + b * p * p);
    }
  }
  Batch batch;
  batch.hr = Tensor::from_data({batch_size_, 3, p, p}, std::move(hr));
  batch.lr = degrade(batch.hr, degradation_, rng_);
  if (masked) batch.mask = Tensor::from_data({batch_size_, 1, p, p}, std::move(mask));
  return batch;
}

// ---- Dual-branch run -----------------------------------------------------------

namespace {

std::string iter_name(std::size_t it) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%06zu", it);
  return buf;
}

void save_branch(const std::filesystem::path& dir, const std::string& stem, const BranchState& g,
                 const BranchState& b) {
  std::filesystem::create_directories(dir);
  save(g.generator, dir / (stem + "general_gen.pbsr"));
  save(g.discriminator, dir / (stem + "general_disc.pbsr"));
  save(b.generator, dir / (stem + "blur_gen.pbsr"));
  save(b.discriminator, dir / (stem + "blur_disc.pbsr"));
}

// Discriminators of the two branches differ in their first layer, so only the
// entries with matching extents take part in a discriminator fusion event.
std::optional<FusionLog> fuse_discriminators(ParamSet& general, ParamSet& blur, double lambda0,
                                             std::size_t iteration) {
  ParamSet a, b;
  for (const auto& [name, array] : general.entries()) {
    if (blur.contains(name) && blur.at(name).extents == array.extents) {
      a.insert(name, array);
      b.insert(name, blur.at(name));
    }
  }
  if (a.empty()) return std::nullopt;
  InterpolatedPair pair = cross_interpolate(a, b, adaptive_lambda(a, b, lambda0), iteration);
  for (auto& [name, array] : pair.general.entries()) general.set(name, std::move(array));
  for (auto& [name, array] : pair.blur.entries()) blur.set(name, std::move(array));
  pair.log.network = "discriminator";
  return pair.log;
}

}  // namespace

DualResult run_dual_branch(const DualConfig& config, std::vector<TrainingImage> general_data,
                           std::vector<TrainingImage> blur_data, const IterationHook& hook) {
  const TrainConfig& tc = config.train;
  tc.validate();
  config.fusion.validate();
  if (general_data.empty() || blur_data.empty()) throw std::invalid_argument("both training pools must be non-empty");
  for (const TrainingImage& img : general_data) {
    if (img.mask) throw std::invalid_argument("general pool must not carry blur maps");
  }
  for (const TrainingImage& img : blur_data) {
    if (!img.mask) throw std::invalid_argument("blur pool sample '" + img.id + "' has no blur map");
  }

  const std::uint64_t gen_seed = derive_seed(tc.seed, std::string_view("init.generator"));
  DualResult r;
  r.general = make_branch(Branch::general, config.generator, config.discriminator, gen_seed,
                          derive_seed(tc.seed, std::string_view("init.disc.general")));
  r.blur = make_branch(Branch::blur, config.generator, config.discriminator, gen_seed,
                       derive_seed(tc.seed, std::string_view("init.disc.blur")));

  BatchSampler general_sampler(std::move(general_data), tc.batch_size, tc.hr_patch, config.degradation,
                               derive_seed(tc.seed, std::string_view("sampler.general")));
  BatchSampler blur_sampler(std::move(blur_data), tc.batch_size, tc.hr_patch, config.degradation,
                            derive_seed(tc.seed, std::string_view("sampler.blur")));

  const bool write = !config.out_dir.empty();
  const std::filesystem::path ckpt_dir = config.out_dir / "checkpoints";

  for (std::size_t it = 1; it <= tc.total_iters; ++it) {
    r.losses.push_back({it, Branch::general, train_step(r.general, general_sampler.next(), tc)});
    r.routing.insert(r.routing.end(), tc.batch_size, Branch::general);
    r.losses.push_back({it, Branch::blur, train_step(r.blur, blur_sampler.next(), tc)});
    r.routing.insert(r.routing.end(), tc.batch_size, Branch::blur);

    if (config.fusion.enabled && should_fuse(it, config.fusion.k)) {
      const double lambda = adaptive_lambda(r.general.generator, r.blur.generator, config.fusion.lambda0);
      InterpolatedPair pair = cross_interpolate(r.general.generator, r.blur.generator, lambda, it);
      r.general.generator = std::move(pair.general);
      r.blur.generator = std::move(pair.blur);
      r.fusion_logs.push_back(pair.log);
      if (config.fusion.scope == FusionScope::generator_and_discriminator) {
        if (auto log = fuse_discriminators(r.general.discriminator, r.blur.discriminator, config.fusion.lambda0, it)) {
          r.fusion_logs.push_back(*log);
        }
      }
    }

    if (write && config.checkpoint_every != 0 && it % config.checkpoint_every == 0) {
      save_branch(ckpt_dir, iter_name(it) + "_", r.general, r.blur);
    }
    if (hook) hook(it, r.general, r.blur);
  }

  if (write) {
    save_branch(config.out_dir, "", r.general, r.blur);
    save(final_fuse(r.general.generator, r.blur.generator), config.out_dir / "fused_gen.pbsr");
    write_loss_csv(config.out_dir / "losses.csv", r.losses);
    write_fusion_csv(config.out_dir / "fusion.csv", r.fusion_logs);
  }
  return r;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows) {
  std::ostringstream os;
  os << "iteration,branch,d_loss,g_l1,g_adv,d_skipped,g_skipped\n";
  for (const LossRow& row : rows) {
    os << row.iteration << ',' << to_string(row.branch) << ',' << fmt(row.step.d_loss) << ',' << fmt(row.step.g_l1)
       << ',' << fmt(row.step.g_adv) << ',' << int(row.step.d_skipped) << ',' << int(row.step.g_skipped) << '\n';
  }
  write_text(path, os.str());
}

void write_fusion_csv(const std::filesystem::path& path, const std::vector<FusionLog>& rows) {
  std::ostringstream os;
  os << "iteration,network,lambda,cos_before,cos_after,diff_norm_before,diff_norm_after,mean_drift\n";
  for (const FusionLog& l : rows) {
    os << l.iteration << ',' << l.network << ',' << fmt(l.lambda) << ',' << fmt(l.cos_before) << ','
       << fmt(l.cos_after) << ',' << fmt(l.diff_norm_before) << ',' << fmt(l.diff_norm_after) << ',' << l.mean_drift
       << '\n';
  }
  write_text(path, os.str());
}

}  // namespace pbsr
