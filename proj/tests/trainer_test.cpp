// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pbsr/errors.hpp"
#include "pbsr/trainer.hpp"
#include "test_util.hpp"

using namespace pbsr;
using pbsr::testing::uniform;

namespace {

DiscriminatorConfig small_disc(std::size_t in_channels) {
  DiscriminatorConfig c;
  c.in_channels = in_channels;
  c.base_channels = 4;
  c.n_downsamples = 2;
  return c;
}

GeneratorConfig small_gen() {
  GeneratorConfig c;
  c.base_channels = 4;
  c.n_residual_blocks = 1;
  return c;
}

Tensor binary_mask(Shape shape, std::uint64_t seed) {
  Tensor m = uniform(shape, seed, 0, 1);
  for (float& v : m.mutable_data()) v = v < 0.5f ? 0.0f : 1.0f;
  return m;
}

ParamSet zero_like(ParamSet p) {
  for (auto& [_, a] : p.entries()) std::fill(a.values.begin(), a.values.end(), 0.0f);
  return p;
}

// Direct per-element evaluation of the unclamped two-term hinge sum.
double brute_force_loss(const Tensor& real, const Tensor& fake) {
  const Shape s = real.shape();
  double a = 0.0, b = 0.0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t h = 0; h < s.h; ++h)
        for (std::size_t w = 0; w < s.w; ++w) {
          a += 1.0 - double(real.at(n, c, h, w));
          b += 1.0 + double(fake.at(n, c, h, w));
        }
  const double whc = double(s.numel());
  return a / whc + b / whc;
}

std::vector<TrainingImage> pool(std::size_t count, std::uint64_t seed, bool masked, std::size_t side = 32) {
  Rng rng(seed);
  std::vector<TrainingImage> out;
  for (std::size_t i = 0; i < count; ++i) {
    TrainingImage img{"img" + std::to_string(i), synthesize_texture(side, side, rng), std::nullopt};
    if (masked) {
      std::vector<float> m(side * side);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) m[y * side + x] = x < side / 2 ? 0.0f : 1.0f;
      img.mask = Tensor::from_data({1, 1, side, side}, std::move(m));
    }
    out.push_back(std::move(img));
  }
  return out;
}

DualConfig toy_config(std::size_t iters) {
  DualConfig c;
  c.train.total_iters = iters;
  c.train.batch_size = 2;
  c.train.hr_patch = 16;
  c.train.seed = 5;
  c.train.lr = 1e-3;
  c.generator = small_gen();
  c.discriminator = small_disc(3);
  return c;
}

bool same_state(const BranchState& a, const BranchState& b) {
  return a.generator == b.generator && a.discriminator == b.discriminator &&
         a.generator_moments.m == b.generator_moments.m && a.generator_moments.v == b.generator_moments.v &&
         a.discriminator_moments.m == b.discriminator_moments.m &&
         a.discriminator_moments.v == b.discriminator_moments.v && a.t == b.t;
}

}  // namespace

// ---- Hinge losses ----------------------------------------------------------------

TEST(HingeLoss, ZeroLogitsGiveTwo) {
  const Tensor z = Tensor::zeros({2, 1, 3, 3});
  EXPECT_DOUBLE_EQ(hinge_d_loss(z, z, true).item(), 2.0);
  EXPECT_DOUBLE_EQ(hinge_d_loss(z, z, false).item(), 2.0);
}

TEST(HingeLoss, PerfectDiscriminatorClamped) {
  EXPECT_DOUBLE_EQ(hinge_d_loss(Tensor::full({1, 1, 4, 4}, 1.0f), Tensor::full({1, 1, 4, 4}, -1.0f), true).item(), 0.0);
}

TEST(HingeLoss, ConfidentDiscriminatorBothModes) {
  const Tensor real = Tensor::full({1, 1, 4, 4}, 3.0f);
  const Tensor fake = Tensor::full({1, 1, 4, 4}, -3.0f);
  EXPECT_DOUBLE_EQ(hinge_d_loss(real, fake, false).item(), -4.0);
  EXPECT_DOUBLE_EQ(hinge_d_loss(real, fake, true).item(), 0.0);
}

TEST(HingeLoss, ClampedIsNonNegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor real = uniform({2, 1, 5, 5}, seed, -4, 4);
    const Tensor fake = uniform({2, 1, 5, 5}, seed + 100, -4, 4);
    EXPECT_GE(hinge_d_loss(real, fake, true).item(), 0.0f);
  }
}

TEST(HingeLoss, ShapeMismatch) {
  EXPECT_THROW(hinge_d_loss(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 3}), true), std::invalid_argument);
}

TEST(ConditionalDLoss, ZeroDiscriminatorGivesTwo) {
  const ParamSet d = zero_like(build_discriminator(small_disc(4), 1));
  const Tensor hr = uniform({1, 3, 16, 16}, 1, 0, 1);
  const Tensor sr = uniform({1, 3, 16, 16}, 2, 0, 1);
  const Tensor m = binary_mask({1, 1, 16, 16}, 3);
  EXPECT_DOUBLE_EQ(conditional_d_loss(d, hr, sr, m, true), 2.0);
  EXPECT_DOUBLE_EQ(conditional_d_loss(d, hr, sr, m, false), 2.0);
}

TEST(ConditionalDLoss, UnclampedMatchesBruteForceOnRandomCases) {
  const DiscriminatorConfig c = small_disc(4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ParamSet d = build_discriminator(c, seed);
    const Tensor hr = uniform({2, 3, 16, 16}, 10 + seed, 0, 1);
    const Tensor sr = uniform({2, 3, 16, 16}, 50 + seed, 0, 1);
    const Tensor m = binary_mask({2, 1, 16, 16}, 90 + seed);
    const Tensor real = discriminator_forward(d, hr, m);
    const Tensor fake = discriminator_forward(d, sr, m);
    EXPECT_NEAR(conditional_d_loss(d, hr, sr, m, false), brute_force_loss(real, fake), 1e-6) << "seed " << seed;
  }
}

TEST(ConditionalDLoss, RejectsMismatchedShapes) {
  const ParamSet d = build_discriminator(small_disc(4), 1);
  EXPECT_THROW(conditional_d_loss(d, uniform({1, 3, 16, 16}, 1), uniform({1, 3, 8, 16}, 1),
                                  binary_mask({1, 1, 16, 16}, 1), true),
               std::invalid_argument);
  EXPECT_THROW(conditional_d_loss(d, uniform({1, 3, 16, 16}, 1), uniform({1, 3, 16, 16}, 2),
                                  binary_mask({1, 1, 4, 4}, 1), true),
               std::invalid_argument);
}

TEST(UnconditionalDLoss, ZeroAndPerfect) {
  const ParamSet d = zero_like(build_discriminator(small_disc(3), 1));
  const Tensor hr = uniform({1, 3, 16, 16}, 1, 0, 1);
  EXPECT_DOUBLE_EQ(unconditional_d_loss(d, hr, hr, true), 2.0);
  ParamSet perfect = d;
  perfect.at("disc.out.bias").values = {1.0f};
  // Constant logits of +1 for every input: the real term vanishes, the fake term is 2.
  EXPECT_DOUBLE_EQ(unconditional_d_loss(perfect, hr, hr, true), 2.0);
}

TEST(UnconditionalDLoss, EqualsConditionalWithSilencedMaskChannel) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParamSet cond = build_discriminator(small_disc(4), seed);
    ParamSet uncond = build_discriminator(small_disc(3), seed);
    for (const auto& [name, array] : cond.entries()) {
      if (name != "disc.down.00.weight") uncond.set(name, array);
    }
    Array& w4 = cond.at("disc.down.00.weight");
    Array& w3 = uncond.at("disc.down.00.weight");
    const std::size_t cout = w4.extents[0], k2 = 16;
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t i = 0; i < k2; ++i) {
        for (std::size_t ci = 0; ci < 3; ++ci) w3.values[(o * 3 + ci) * k2 + i] = w4.values[(o * 4 + ci) * k2 + i];
        w4.values[(o * 4 + 3) * k2 + i] = 0.0f;
      }
    }
    const Tensor hr = uniform({1, 3, 16, 16}, seed + 1, 0, 1);
    const Tensor sr = uniform({1, 3, 16, 16}, seed + 2, 0, 1);
    const Tensor m = binary_mask({1, 1, 16, 16}, seed + 3);
    for (bool clamp : {true, false}) {
      EXPECT_NEAR(unconditional_d_loss(uncond, hr, sr, clamp), conditional_d_loss(cond, hr, sr, m, clamp), 1e-6);
    }
  }
}

// ---- Generator loss --------------------------------------------------------------

TEST(GeneratorLoss, PerfectOutputAndSilentDiscriminator) {
  const DiscriminatorConfig c = small_disc(3);
  const Weights<float> d = make_weights<float>(zero_like(build_discriminator(c, 0)), false);
  const Tensor hr = uniform({1, 3, 16, 16}, 1, 0, 1);
  const GeneratorLoss<float> l = generator_loss(hr, hr, c, d, std::optional<Tensor>(), 1.0, 0.05);
  EXPECT_EQ(l.total.item(), 0.0f);
  EXPECT_EQ(l.l1, 0.0);
  EXPECT_EQ(l.adv, 0.0);
}

TEST(GeneratorLoss, L1OfConstantImages) {
  const DiscriminatorConfig c = small_disc(4);
  const Weights<float> d = make_weights<float>(zero_like(build_discriminator(c, 0)), false);
  const GeneratorLoss<float> l =
      generator_loss(Tensor::full({2, 3, 8, 8}, 0.0f), Tensor::full({2, 3, 8, 8}, 1.0f), c, d,
                     std::optional<Tensor>(Tensor::full({2, 1, 8, 8}, 1.0f)), 1.0, 0.05);
  EXPECT_DOUBLE_EQ(l.l1, 1.0);
  EXPECT_DOUBLE_EQ(l.total.item(), 1.0);
}

TEST(GeneratorLoss, AdversarialTermIsNegatedMeanLogit) {
  const DiscriminatorConfig c = small_disc(3);
  ParamSet p = zero_like(build_discriminator(c, 0));
  p.at("disc.out.bias").values = {0.75f};
  const Tensor hr = uniform({1, 3, 8, 8}, 4, 0, 1);
  const GeneratorLoss<float> l =
      generator_loss(hr, hr, c, make_weights<float>(p, false), std::optional<Tensor>(), 1.0, 0.5);
  EXPECT_DOUBLE_EQ(l.adv, -0.75);
  EXPECT_FLOAT_EQ(l.total.item(), -0.375f);
}

TEST(GeneratorLoss, GradCheckWithRespectToGeneratorWeights) {
  const GeneratorConfig gc = small_gen();
  const DiscriminatorConfig dc = small_disc(4);
  const ParamSet dparams = build_discriminator(dc, 9);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ParamSet g = build_generator(gc, 20 + seed);
    std::vector<std::string> names;
    std::vector<Tensor> inputs;
    for (const auto& [name, array] : g.entries()) {
      names.push_back(name);
      const bool probe = name == "gen.head.weight" || name == "gen.tail.weight" || name == "gen.res.00.conv1.bias";
      inputs.push_back(to_tensor(array, probe));
    }
    const Tensor lr = uniform({1, 3, 4, 4}, 30 + seed, 0, 1);
    const Tensor hr = uniform({1, 3, 16, 16}, 40 + seed, 0, 1);
    const Tensor mask = binary_mask({1, 1, 16, 16}, 50 + seed);
    const auto op = [&](auto t) {
      using S = span_scalar_t<decltype(t)>;
      Weights<S> w;
      for (std::size_t i = 0; i < names.size(); ++i) w.emplace(names[i], t[i]);
      const Weights<S> d = make_weights<S>(dparams, false);
      const auto out = generator_forward(gc, w, tensor_cast<S>(lr));
      return generator_loss(out, tensor_cast<S>(hr), dc, d, std::optional(tensor_cast<S>(mask)), 1.0, 0.05).total;
    };
    const GradCheckReport r = grad_check_report(op, inputs, {.epsilon = 1e-5, .seed = seed, .max_coords = 12});
    EXPECT_LT(r.max_error, 1e-3) << "seed " << seed;
    EXPECT_LE(r.excluded * 4, r.probed + r.excluded) << "seed " << seed;
  }
}

// ---- Adam -------------------------------------------------------------------------

TEST(Adam, ZeroGradientsDecayMomentsOnly) {
  ParamSet p = pbsr::testing::random_params(1, {{"w", {3, 2}}});
  const ParamSet before = p;
  AdamMoments mom = AdamMoments::zeros_like(p);
  for (float& v : mom.m.at("w").values) v = 0.5f;
  for (float& v : mom.v.at("w").values) v = 0.25f;
  adam_step(p, zero_like(p), mom, 3, 1e-3, 0.9, 0.99);
  for (float v : mom.m.at("w").values) EXPECT_FLOAT_EQ(v, 0.45f);
  for (float v : mom.v.at("w").values) EXPECT_FLOAT_EQ(v, 0.2475f);
  // Decayed first moments still move the parameters; zero moments do not.
  AdamMoments zero = AdamMoments::zeros_like(before);
  ParamSet q = before;
  adam_step(q, zero_like(q), zero, 1, 1e-3, 0.9, 0.99);
  EXPECT_EQ(q, before);
}

TEST(Adam, SingleScalarClosedForm) {
  ParamSet p;
  p.insert("w", Array{{1}, {0.0f}});
  ParamSet g;
  g.insert("w", Array{{1}, {1.0f}});
  AdamMoments m = AdamMoments::zeros_like(p);
  const double lr = 1e-4, b1 = 0.9, b2 = 0.99, eps = 1e-8;
  adam_step(p, g, m, 1, lr, b1, b2, eps);
  const double mhat = ((1 - b1) * 1.0) / (1 - b1);
  const double vhat = ((1 - b2) * 1.0) / (1 - b2);
  const double expected = -lr * mhat / (std::sqrt(vhat) + eps);
  EXPECT_EQ(p.at("w").values[0], static_cast<float>(expected));
  EXPECT_NEAR(p.at("w").values[0], -lr, 1e-9);
}

TEST(Adam, MatchesReferenceOverSeveralSteps) {
  ParamSet p;
  p.insert("w", Array{{2}, {0.3f, -0.7f}});
  AdamMoments m = AdamMoments::zeros_like(p);
  double w[2] = {0.3, -0.7}, mm[2] = {0, 0}, vv[2] = {0, 0};
  const double grads[4][2] = {{0.5, -1.0}, {0.25, 2.0}, {-0.125, 0.0}, {1.0, -0.5}};
  for (int t = 1; t <= 4; ++t) {
    ParamSet g;
    g.insert("w", Array{{2}, {float(grads[t - 1][0]), float(grads[t - 1][1])}});
    adam_step(p, g, m, t, 1e-2, 0.9, 0.99);
    for (int i = 0; i < 2; ++i) {
      mm[i] = 0.9 * mm[i] + 0.1 * grads[t - 1][i];
      vv[i] = 0.99 * vv[i] + 0.01 * grads[t - 1][i] * grads[t - 1][i];
      w[i] -= 1e-2 * (mm[i] / (1 - std::pow(0.9, t))) / (std::sqrt(vv[i] / (1 - std::pow(0.99, t))) + 1e-8);
    }
  }
  EXPECT_NEAR(p.at("w").values[0], w[0], 1e-6);
  EXPECT_NEAR(p.at("w").values[1], w[1], 1e-6);
}

TEST(Adam, NonFiniteGradientLeavesStateUntouched) {
  ParamSet p = pbsr::testing::random_params(2, {{"a", {4}}, {"b", {2}}});
  ParamSet g = zero_like(p);
  g.at("a").values[0] = 1.0f;
  g.at("b").values[1] = std::numeric_limits<float>::quiet_NaN();
  AdamMoments m = AdamMoments::zeros_like(p);
  const ParamSet before = p;
  EXPECT_THROW(adam_step(p, g, m, 1, 1e-3, 0.9, 0.99), NumericError);
  EXPECT_EQ(p, before);
  EXPECT_EQ(m.m, zero_like(p));
  g.at("b").values[1] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(adam_step(p, g, m, 1, 1e-3, 0.9, 0.99), NumericError);
}

TEST(Adam, ContractErrors) {
  ParamSet p = pbsr::testing::random_params(2, {{"a", {4}}});
  AdamMoments m = AdamMoments::zeros_like(p);
  EXPECT_THROW(adam_step(p, p, m, 0, 1e-3, 0.9, 0.99), std::invalid_argument);
  ParamSet other = pbsr::testing::random_params(2, {{"a", {5}}});
  EXPECT_THROW(adam_step(p, other, m, 1, 1e-3, 0.9, 0.99), std::invalid_argument);
}

TEST(Adam, Deterministic) {
  const ParamSet p0 = pbsr::testing::random_params(3, {{"a", {16}}});
  const ParamSet g = pbsr::testing::random_params(4, {{"a", {16}}});
  ParamSet a = p0, b = p0;
  AdamMoments ma = AdamMoments::zeros_like(p0), mb = AdamMoments::zeros_like(p0);
  for (std::uint64_t t = 1; t <= 5; ++t) {
    adam_step(a, g, ma, t, 1e-3, 0.9, 0.99);
    adam_step(b, g, mb, t, 1e-3, 0.9, 0.99);
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(ma.v, mb.v);
}

// ---- train_step ---------------------------------------------------------------------

namespace {

Batch make_batch(std::uint64_t seed, bool masked) {
  Batch b;
  b.hr = uniform({2, 3, 16, 16}, seed, 0, 1);
  b.lr = box_downsample(b.hr, 4);
  if (masked) b.mask = binary_mask({2, 1, 16, 16}, seed + 1);
  return b;
}

}  // namespace

TEST(TrainStep, SameInputsSameState) {
  TrainConfig cfg;
  BranchState a = make_branch(Branch::blur, small_gen(), small_disc(3), 1, 2);
  BranchState b = make_branch(Branch::blur, small_gen(), small_disc(3), 1, 2);
  for (std::uint64_t s = 0; s < 2; ++s) {
    const Batch batch = make_batch(s, true);
    const StepRecord ra = train_step(a, batch, cfg);
    const StepRecord rb = train_step(b, batch, cfg);
    EXPECT_EQ(ra.d_loss, rb.d_loss);
    EXPECT_EQ(ra.g_l1, rb.g_l1);
  }
  EXPECT_TRUE(same_state(a, b));
  EXPECT_EQ(a.t, 2u);
}

TEST(TrainStep, BranchMaskContract) {
  TrainConfig cfg;
  BranchState general = make_branch(Branch::general, small_gen(), small_disc(4), 1, 2);
  BranchState blur = make_branch(Branch::blur, small_gen(), small_disc(3), 1, 2);
  EXPECT_FALSE(general.conditional());
  EXPECT_TRUE(blur.conditional());
  EXPECT_THROW(train_step(general, make_batch(1, true), cfg), std::invalid_argument);
  EXPECT_THROW(train_step(blur, make_batch(1, false), cfg), std::invalid_argument);
  EXPECT_EQ(general.t, 0u);
}

TEST(TrainStep, DiscriminatorUpdateLeavesGeneratorUntouched) {
  TrainConfig cfg;
  cfg.l1_weight = 0.0;
  cfg.adv_weight = 0.0;
  BranchState s = make_branch(Branch::blur, small_gen(), small_disc(3), 1, 2);
  const ParamSet g0 = s.generator;
  const ParamSet d0 = s.discriminator;
  train_step(s, make_batch(3, true), cfg);
  EXPECT_EQ(s.generator, g0);
  EXPECT_NE(s.discriminator, d0);
}

TEST(TrainStep, DetachedOutputCarriesNoGeneratorGradient) {
  const GeneratorConfig gc = small_gen();
  const DiscriminatorConfig dc = small_disc(4);
  const Weights<float> g = make_weights<float>(build_generator(gc, 1), true);
  const Weights<float> d = make_weights<float>(build_discriminator(dc, 1), true);
  const Batch b = make_batch(4, true);
  const Tensor sr = generator_forward(gc, g, b.lr).detach();
  conditional_d_loss(dc, d, b.hr, sr, *b.mask, true).backward();
  for (const auto& [name, t] : g) EXPECT_FALSE(t.has_grad()) << name;
  EXPECT_TRUE(d.at("disc.out.weight").has_grad());
}

TEST(TrainStep, L1OnlyUpdatesOverfitOneBatch) {
  TrainConfig cfg;
  cfg.adv_weight = 0.0;
  cfg.lr = 1e-3;
  BranchState s = make_branch(Branch::general, small_gen(), small_disc(3), 7, 8);
  const Batch batch = make_batch(11, false);
  const double first = train_step(s, batch, cfg).g_l1;
  double last = first;
  for (int i = 0; i < 30; ++i) last = train_step(s, batch, cfg).g_l1;
  EXPECT_LT(last, first);
}

TEST(TrainStep, ClampedDiscriminatorLossNeverNegative) {
  TrainConfig cfg;
  cfg.lr = 1e-2;
  BranchState s = make_branch(Branch::blur, small_gen(), small_disc(3), 1, 2);
  for (std::uint64_t i = 0; i < 15; ++i) EXPECT_GE(train_step(s, make_batch(i, true), cfg).d_loss, 0.0);
}

TEST(TrainStep, NonFiniteBatchSkipsUpdates) {
  TrainConfig cfg;
  BranchState s = make_branch(Branch::general, small_gen(), small_disc(3), 1, 2);
  const BranchState before = s;
  Batch b = make_batch(1, false);
  b.lr.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  const StepRecord r = train_step(s, b, cfg);
  EXPECT_TRUE(r.d_skipped);
  EXPECT_TRUE(r.g_skipped);
  EXPECT_EQ(s.generator, before.generator);
  EXPECT_EQ(s.discriminator, before.discriminator);
  EXPECT_EQ(s.t, 1u);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.adv_weight = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.hr_patch = 30;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// ---- Sampling -----------------------------------------------------------------------

TEST(BatchSampler, ShapesAndAlignedMasks) {
  std::vector<TrainingImage> imgs = pool(3, 1, true, 40);
  BatchSampler s(imgs, 5, 16, DegradationConfig{}, 9);
  for (int i = 0; i < 4; ++i) {
    const Batch b = s.next();
    EXPECT_EQ(b.hr.shape(), (Shape{5, 3, 16, 16}));
    EXPECT_EQ(b.lr.shape(), (Shape{5, 3, 4, 4}));
    ASSERT_TRUE(b.mask.has_value());
    EXPECT_EQ(b.mask->shape(), (Shape{5, 1, 16, 16}));
    for (float v : b.mask->data()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  }
}

TEST(BatchSampler, DeterministicAndNeverExhausted) {
  BatchSampler a(pool(2, 1, false), 3, 16, DegradationConfig{}, 4);
  BatchSampler b(pool(2, 1, false), 3, 16, DegradationConfig{}, 4);
  for (int i = 0; i < 10; ++i) {
    const Batch x = a.next(), y = b.next();
    EXPECT_TRUE(std::equal(x.lr.data().begin(), x.lr.data().end(), y.lr.data().begin()));
    EXPECT_TRUE(std::equal(x.hr.data().begin(), x.hr.data().end(), y.hr.data().begin()));
  }
}

TEST(BatchSampler, RejectsBadPools) {
  EXPECT_THROW(BatchSampler({}, 2, 16, DegradationConfig{}, 0), std::invalid_argument);
  EXPECT_THROW(BatchSampler(pool(1, 1, false, 12), 2, 16, DegradationConfig{}, 0), std::invalid_argument);
  std::vector<TrainingImage> mixed = pool(2, 1, true);
  mixed[1].mask.reset();
  EXPECT_THROW(BatchSampler(mixed, 2, 16, DegradationConfig{}, 0), std::invalid_argument);
}

// ---- Dual-branch runs ---------------------------------------------------------------

TEST(DualBranch, TenIterationsWithKFiveFuseTwice) {
  DualConfig c = toy_config(10);
  c.fusion.k = 5;
  const DualResult r = run_dual_branch(c, pool(3, 1, false), pool(3, 2, true));
  ASSERT_EQ(r.fusion_logs.size(), 2u);
  EXPECT_EQ(r.fusion_logs[0].iteration, 5u);
  EXPECT_EQ(r.fusion_logs[1].iteration, 10u);
  EXPECT_EQ(r.losses.size(), 20u);
  for (const FusionLog& l : r.fusion_logs) {
    EXPECT_LT(l.diff_norm_after, l.diff_norm_before);
    EXPECT_GE(l.lambda, 0.985);
    EXPECT_LE(l.lambda, 0.995);
  }
}

TEST(DualBranch, EqualMixRouting) {
  DualConfig c = toy_config(6);
  const DualResult r = run_dual_branch(c, pool(2, 1, false), pool(2, 2, true));
  const std::size_t m = c.train.batch_size;
  ASSERT_EQ(r.routing.size(), 2 * m * 6);
  for (std::size_t start = 0; start + 2 * m <= r.routing.size(); start += 2 * m) {
    std::size_t general = 0;
    for (std::size_t i = start; i < start + 2 * m; ++i) general += r.routing[i] == Branch::general;
    EXPECT_EQ(general, m);
  }
}

TEST(DualBranch, DisabledFusionKeepsBranchesIsolated) {
  DualConfig c = toy_config(8);
  c.fusion.enabled = false;
  const DualResult a = run_dual_branch(c, pool(3, 1, false), pool(3, 2, true));
  const DualResult b = run_dual_branch(c, pool(3, 1, false), pool(3, 77, true));
  EXPECT_TRUE(a.fusion_logs.empty());
  EXPECT_TRUE(same_state(a.general, b.general));
  EXPECT_NE(a.blur.generator, b.blur.generator);
  DualConfig enabled = toy_config(8);
  enabled.fusion.k = 4;
  const DualResult e = run_dual_branch(enabled, pool(3, 1, false), pool(3, 2, true));
  EXPECT_NE(e.general.generator, a.general.generator);
}

TEST(DualBranch, GeneratorsStartIdenticalDiscriminatorsDiffer) {
  DualConfig c = toy_config(1);
  c.train.lr = 1e-12;
  c.fusion.enabled = false;
  std::vector<ParamSet> seen;
  run_dual_branch(c, pool(1, 1, false), pool(1, 2, true), [&](std::size_t, const BranchState& g, const BranchState& b) {
    seen.push_back(g.discriminator);
    seen.push_back(b.discriminator);
  });
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_EQ(seen[0].at("disc.down.00.weight").extents[1], 3u);
  EXPECT_EQ(seen[1].at("disc.down.00.weight").extents[1], 4u);
}

TEST(DualBranch, SeededRunIsBitReproducible) {
  DualConfig c = toy_config(200);
  c.fusion.k = 20;
  const DualResult a = run_dual_branch(c, pool(4, 1, false), pool(4, 2, true));
  const DualResult b = run_dual_branch(c, pool(4, 1, false), pool(4, 2, true));
  ASSERT_EQ(a.losses.size(), b.losses.size());
  for (std::size_t i = 0; i < a.losses.size(); ++i) {
    EXPECT_EQ(a.losses[i].step.d_loss, b.losses[i].step.d_loss);
    EXPECT_EQ(a.losses[i].step.g_l1, b.losses[i].step.g_l1);
    EXPECT_EQ(a.losses[i].step.g_adv, b.losses[i].step.g_adv);
  }
  EXPECT_TRUE(same_state(a.general, b.general));
  EXPECT_TRUE(same_state(a.blur, b.blur));
  ASSERT_EQ(a.fusion_logs.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(a.fusion_logs[i].lambda, b.fusion_logs[i].lambda);
}

TEST(DualBranch, DiscriminatorScopeFusesSharedEntries) {
  DualConfig c = toy_config(4);
  c.fusion.k = 2;
  c.fusion.scope = FusionScope::generator_and_discriminator;
  const DualResult r = run_dual_branch(c, pool(2, 1, false), pool(2, 2, true));
  ASSERT_EQ(r.fusion_logs.size(), 4u);
  EXPECT_EQ(r.fusion_logs[0].network, "generator");
  EXPECT_EQ(r.fusion_logs[1].network, "discriminator");
  EXPECT_LT(r.fusion_logs[1].diff_norm_after, r.fusion_logs[1].diff_norm_before);
}

TEST(DualBranch, ContractErrors) {
  const DualConfig c = toy_config(2);
  EXPECT_THROW(run_dual_branch(c, {}, pool(1, 2, true)), std::invalid_argument);
  EXPECT_THROW(run_dual_branch(c, pool(1, 1, true), pool(1, 2, true)), std::invalid_argument);
  EXPECT_THROW(run_dual_branch(c, pool(1, 1, false), pool(1, 2, false)), std::invalid_argument);
}

TEST(DualBranch, WritesLogsAndCheckpoints) {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "pbsr_trainer_test";
  std::filesystem::remove_all(dir);
  DualConfig c = toy_config(4);
  c.fusion.k = 2;
  c.checkpoint_every = 2;
  c.out_dir = dir;
  const DualResult r = run_dual_branch(c, pool(2, 1, false), pool(2, 2, true));
  for (const char* f : {"losses.csv", "fusion.csv", "general_gen.pbsr", "blur_gen.pbsr", "general_disc.pbsr",
                        "blur_disc.pbsr", "fused_gen.pbsr", "checkpoints/iter_000002_blur_gen.pbsr",
                        "checkpoints/iter_000004_general_disc.pbsr"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_EQ(load(dir / "general_gen.pbsr"), r.general.generator);
  std::ifstream in(dir / "losses.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "iteration,branch,d_loss,g_l1,g_adv,d_skipped,g_skipped");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 8u);
  std::filesystem::remove_all(dir);
}
