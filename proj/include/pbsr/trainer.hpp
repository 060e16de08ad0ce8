// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pbsr/dataset.hpp"
#include "pbsr/degradation.hpp"
#include "pbsr/fusion.hpp"
#include "pbsr/models.hpp"
#include "pbsr/param_set.hpp"
#include "pbsr/rng.hpp"
#include "pbsr/tensor.hpp"

namespace pbsr {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  std::size_t batch_size = 4;
  /// HR crop side; must be a positive multiple of 4.
  std::size_t hr_patch = 32;
  std::size_t total_iters = 2000;
  double adv_weight = 0.05;
  double l1_weight = 1.0;
  /// max(0, .) around both hinge terms. false evaluates the unclamped sum.
  bool clamp_hinge = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// First and second Adam moments, aligned with the ParamSet they update.
struct AdamMoments {
  ParamSet m;
  ParamSet v;

  static AdamMoments zeros_like(const ParamSet& params);
};

struct BranchState {
  ParamSet generator;
  ParamSet discriminator;
  AdamMoments generator_moments;
  AdamMoments discriminator_moments;
  std::uint64_t t = 0;

  bool conditional() const;
};

enum class Branch { general, blur };
std::string to_string(Branch b);

/// Generator from `gen_seed` (shared by both branches when the seeds match)
/// and a discriminator whose input channels follow the branch: 3 for general,
/// 4 (image + blur map) for blur.
BranchState make_branch(Branch branch, const GeneratorConfig& gen, DiscriminatorConfig disc, std::uint64_t gen_seed,
                        std::uint64_t disc_seed);

// ---- Losses ------------------------------------------------------------------

/// mean h(1 - real) + mean h(1 + fake), h = relu when `clamp`, identity otherwise.
template <typename T>
BasicTensor<T> hinge_d_loss(const BasicTensor<T>& real_logits, const BasicTensor<T>& fake_logits, bool clamp);

template <typename T>
BasicTensor<T> conditional_d_loss(const DiscriminatorConfig& config, const Weights<T>& d, const BasicTensor<T>& hr,
                                  const BasicTensor<T>& sr, const BasicTensor<T>& mask_hr, bool clamp);
double conditional_d_loss(const ParamSet& d, const Tensor& hr, const Tensor& sr, const Tensor& mask_hr, bool clamp);

template <typename T>
BasicTensor<T> unconditional_d_loss(const DiscriminatorConfig& config, const Weights<T>& d, const BasicTensor<T>& hr,
                                    const BasicTensor<T>& sr, bool clamp);
double unconditional_d_loss(const ParamSet& d, const Tensor& hr, const Tensor& sr, bool clamp);

template <typename T>
struct GeneratorLoss {
  BasicTensor<T> total;
  double l1 = 0.0;
  double adv = 0.0;
};

/// l1_weight * mean|g_out - hr| + adv_weight * (-mean D(g_out | mask)).
/// Gradients flow into g_out only if `d` does not require them.
template <typename T>
GeneratorLoss<T> generator_loss(const BasicTensor<T>& g_out, const BasicTensor<T>& hr, const DiscriminatorConfig& config,
                                const Weights<T>& d, const std::optional<BasicTensor<T>>& mask, double l1_weight,
                                double adv_weight);

// ---- Optimizer ---------------------------------------------------------------

/// Bias-corrected Adam update in place. `t` is the 1-based step number.
/// Non-finite gradients throw NumericError before anything is modified.
void adam_step(ParamSet& params, const ParamSet& grads, AdamMoments& moments, std::uint64_t t, double lr, double beta1,
               double beta2, double eps = 1e-8);

// ---- Steps -------------------------------------------------------------------

struct Batch {
  Tensor lr;
  Tensor hr;
  std::optional<Tensor> mask;
};

struct StepRecord {
  std::uint64_t t = 0;
  double d_loss = 0.0;
  double g_l1 = 0.0;
  double g_adv = 0.0;
  bool d_skipped = false;
  bool g_skipped = false;
};

/// One discriminator update on the detached generator output, then one
/// generator update against the refreshed discriminator. A batch mask is
/// required for a conditional branch and rejected otherwise. A NumericError
/// in either phase skips that update and is flagged in the record.
StepRecord train_step(BranchState& branch, const Batch& batch, const TrainConfig& config);

// ---- Data --------------------------------------------------------------------

struct TrainingImage {
  std::string id;
  Tensor hr;                  // (1,3,H,W)
  std::optional<Tensor> mask; // (1,1,H,W)
};

/// Loads samples of `split` (rejected ones excluded). With `with_masks` false
/// the masks are not read.
std::vector<TrainingImage> load_training_images(const DatasetManifest& manifest, const std::string& split,
                                                bool with_masks);

/// Draws random HR crops and synthesizes their LR
/// inputs. Epochs are reshuffled; the sampler never runs dry.
class BatchSampler {
 public:
  BatchSampler(std::vector<TrainingImage> images, std::size_t batch_size, std::size_t hr_patch,
               DegradationConfig degradation, std::uint64_t seed);

  Batch next();
  std::size_t size() const { return images_.size(); }

 private:
  std::vector<TrainingImage> images_;
  std::size_t batch_size_;
  std::size_t patch_;
  DegradationConfig degradation_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// ---- Dual-branch run -----------------------------------------------------------

struct LossRow {
  std::size_t iteration = 0;
  Branch branch = Branch::general;
  StepRecord step;
};

struct DualConfig {
  TrainConfig train;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  FusionConfig fusion;
  DegradationConfig degradation;
  /// 0 disables periodic checkpoints.
  std::size_t checkpoint_every = 0;
  /// Empty disables all file output.
  std::filesystem::path out_dir;
};

struct DualResult {
  BranchState general;
  BranchState blur;
  std::vector<LossRow> losses;
  std::vector<FusionLog> fusion_logs;
  std::vector<Branch> routing;
};

using IterationHook = std::function<void(std::size_t iteration, const BranchState& general, const BranchState& blur)>;

/// Each iteration routes one batch to the general branch and one to the blur
/// branch, then applies the fusion schedule. `hook` runs after that.
DualResult run_dual_branch(const DualConfig& config, std::vector<TrainingImage> general_data,
                           std::vector<TrainingImage> blur_data, const IterationHook& hook = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows);
void write_fusion_csv(const std::filesystem::path& path, const std::vector<FusionLog>& rows);

}  // namespace pbsr
