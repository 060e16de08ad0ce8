// SPDX-License-Identifier: Apache-2.0

#include "pbsr/grad_suite.hpp"

#include <functional>
#include <random>

#include "pbsr/rng.hpp"
#include "pbsr/tensor.hpp"
#include "pbsr/trainer.hpp"

namespace pbsr {

namespace {

Tensor random_input(Shape shape, Rng& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(shape.numel());
  for (float& x : v) x = u(rng);
  return Tensor::from_data(shape, std::move(v), true);
}

struct Case {
  std::string name;
  std::vector<Shape> shapes;
  std::function<GradCheckReport(std::span<const Tensor>, const GradCheckOptions&)> check;
};

template <typename Op>
Case make_case(std::string name, std::vector<Shape> shapes, Op op) {
  return {std::move(name), std::move(shapes),
          [op](std::span<const Tensor> in, const GradCheckOptions& o) { return grad_check_report(op, in, o); }};
}

template <typename S>
using Sc = span_scalar_t<S>;

std::vector<Case> cases() {
  std::vector<Case> c;
  c.push_back(make_case("conv2d.s1p1", {{1, 2, 5, 5}, {3, 2, 3, 3}, {1, 1, 1, 3}},
                        [](auto t) { return conv2d(t[0], t[1], t[2], 1, 1); }));
  c.push_back(make_case("conv2d.s2p1", {{1, 2, 6, 6}, {2, 2, 4, 4}, {1, 1, 1, 2}},
                        [](auto t) { return conv2d(t[0], t[1], t[2], 2, 1); }));
  c.push_back(make_case("conv2d.s1p0", {{2, 1, 4, 4}, {2, 1, 3, 3}, {1, 1, 1, 2}},
                        [](auto t) { return conv2d(t[0], t[1], t[2], 1, 0); }));
  c.push_back(make_case("leaky_relu", {{1, 2, 4, 4}},
                        [](auto t) { return leaky_relu(t[0], Sc<decltype(t)>(0.2)); }));
  c.push_back(make_case("relu", {{1, 2, 4, 4}}, [](auto t) { return relu(t[0]); }));
  c.push_back(make_case("resize_nearest.up", {{1, 2, 3, 3}},
                        [](auto t) { return resize_nearest(t[0], 2, ResizeDirection::up); }));
  c.push_back(make_case("resize_nearest.down", {{1, 2, 4, 4}},
                        [](auto t) { return resize_nearest(t[0], 2, ResizeDirection::down); }));
  c.push_back(make_case("reduce_mean", {{1, 3, 4, 4}}, [](auto t) { return reduce_mean(t[0]); }));
  c.push_back(make_case("add", {{1, 2, 3, 3}, {1, 2, 3, 3}}, [](auto t) { return add(t[0], t[1]); }));
  c.push_back(make_case("sub", {{1, 2, 3, 3}, {1, 2, 3, 3}}, [](auto t) { return sub(t[0], t[1]); }));
  c.push_back(make_case("mul", {{1, 2, 3, 3}, {1, 2, 3, 3}}, [](auto t) { return mul(t[0], t[1]); }));
  c.push_back(make_case("concat_channels", {{1, 2, 3, 3}, {1, 1, 3, 3}},
                        [](auto t) { return concat_channels(t[0], t[1]); }));
  c.push_back(make_case("scale", {{1, 2, 3, 3}}, [](auto t) { return scale(t[0], Sc<decltype(t)>(-0.7)); }));
  c.push_back(make_case("add_scalar", {{1, 2, 3, 3}}, [](auto t) { return add_scalar(t[0], Sc<decltype(t)>(0.3)); }));
  c.push_back(make_case("abs", {{1, 2, 3, 3}}, [](auto t) { return abs(t[0]); }));
  c.push_back(make_case("hinge_d_loss.clamped", {{1, 1, 4, 4}, {1, 1, 4, 4}},
                        [](auto t) { return hinge_d_loss(t[0], t[1], true); }));
  c.push_back(make_case("hinge_d_loss.literal", {{1, 1, 4, 4}, {1, 1, 4, 4}},
                        [](auto t) { return hinge_d_loss(t[0], t[1], false); }));
  c.push_back(make_case("l1_loss", {{1, 3, 4, 4}, {1, 3, 4, 4}},
                        [](auto t) { return reduce_mean(abs(sub(t[0], t[1]))); }));
  return c;
}

}  // namespace

std::vector<GradSuiteResult> run_grad_suite(std::size_t seeds) {
  std::vector<GradSuiteResult> out;
  for (const Case& c : cases()) {
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
      Rng rng(derive_seed(seed, std::string_view(c.name)));
      std::vector<Tensor> inputs;
      GradSuiteResult r;
      r.op = c.name;
      r.seed = seed;
      for (const Shape& s : c.shapes) {
        inputs.push_back(random_input(s, rng));
        r.input_elements += s.numel();
      }
      const GradCheckReport rep = c.check(inputs, {.seed = seed});
      r.max_error = rep.max_error;
      r.probed = rep.probed;
      r.excluded = rep.excluded;
      r.passed = rep.max_error < kGradSuiteTolerance && rep.excluded * 4 <= rep.probed + rep.excluded &&
                 r.input_elements <= kGradSuiteMaxElements && rep.probed > 0;
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace pbsr
