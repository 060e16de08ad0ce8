// SPDX-License-Identifier: Apache-2.0

#include "pbsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "pbsr/errors.hpp"
#include "pbsr/rng.hpp"

namespace pbsr {


std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

// ---- Tensor ----------------------------------------------------------------

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(shape, T{0}, requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  return from_data(shape, std::vector<T>(shape.numel(), value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (data.size() != shape.numel()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                                shape.str());
  }
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return BasicTensor(std::move(impl));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return full({1, 1, 1, 1}, value, requires_grad);
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  return impl_->shape;
}
template <typename T>
std::span<const T> BasicTensor<T>::data() const {
  return impl_->data;
}
template <typename T>
std::span<T> BasicTensor<T>::mutable_data() {
  return impl_->data;
}
template <typename T>
bool BasicTensor<T>::requires_grad() const {
  return impl_->requires_grad;
}
template <typename T>
bool BasicTensor<T>::has_grad() const {
  return !impl_->grad.empty();
}
template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  return impl_->grad;
}
template <typename T>
void BasicTensor<T>::zero_grad() {
  impl_->grad.clear();
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const Shape& s = shape();
  return impl_->data[((n * s.c + c) * s.h + h) * s.w + w];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from_data(shape(), impl_->data, false);
}
template <typename T>
BasicTensor<T> BasicTensor<T>::clone(bool requires_grad) const {
  return from_data(shape(), impl_->data, requires_grad);
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) throw std::invalid_argument("backward() without upstream needs a scalar, got " + shape().str());
  const T one{1};
  backward(std::span<const T>(&one, 1));
}

template <typename T>
void BasicTensor<T>::backward(std::span<const T> upstream) const {
  using Impl = detail::TensorImpl<T>;
  if (upstream.size() != numel()) throw std::invalid_argument("upstream gradient size mismatch");
  if (!impl_->requires_grad) return;

  // Post-order DFS gives a topological order; walk it in reverse.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack{{impl_.get(), 0}};
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Impl* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& root_grad = impl_->ensure_grad();
  for (std::size_t i = 0; i < upstream.size(); ++i) root_grad[i] += upstream[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl& node = **it;
    if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// ---- Op helpers ------------------------------------------------------------

namespace {

template <typename T>
bool any_requires_grad(std::initializer_list<const BasicTensor<T>*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const BasicTensor<T>* t) { return t->requires_grad(); });
}

// Creates an output node. When gradients are needed, links parents and
// installs the backward closure.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<const BasicTensor<T>*> inputs,
                           std::function<void(detail::TensorImpl<T>&)> backward_fn) {
  auto out = BasicTensor<T>::from_data(shape, std::move(data), false);
  if (any_requires_grad<T>(inputs)) {
    auto& impl = *out.impl();
    impl.requires_grad = true;
    for (const BasicTensor<T>* t : inputs) impl.parents.push_back(t->impl());
    impl.backward_fn = std::move(backward_fn);
  }
  return out;
}

template <typename T>
void require_defined(const BasicTensor<T>& t, const char* what) {
  if (!t.defined()) throw std::invalid_argument(std::string(what) + ": undefined tensor");
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

// ---- conv2d ----------------------------------------------------------------

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t padding) {
  require_defined(input, "conv2d");
  require_defined(kernel, "conv2d");
  require_defined(bias, "conv2d");
  const Shape is = input.shape();
  const Shape ks = kernel.shape();
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (ks.c != is.c) {
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(ks.c) + " input channels, input has " +
                                std::to_string(is.c));
  }
  if (bias.numel() != ks.n) throw std::invalid_argument("conv2d: bias must hold one value per output channel");
  const std::size_t ph = is.h + 2 * padding;
  const std::size_t pw = is.w + 2 * padding;
  if (ks.h == 0 || ks.w == 0 || ks.h > ph || ks.w > pw) {
    throw std::invalid_argument("conv2d: kernel " + ks.str() + " larger than padded input " + is.str());
  }
  if ((ph - ks.h) % stride != 0 || (pw - ks.w) % stride != 0) {
    throw std::invalid_argument("conv2d: output extent not exact for stride " + std::to_string(stride));
  }
  const Shape os{is.n, ks.n, (ph - ks.h) / stride + 1, (pw - ks.w) / stride + 1};

  const auto pad = static_cast<std::ptrdiff_t>(padding);
  const auto st = static_cast<std::ptrdiff_t>(stride);
  const auto in_h = static_cast<std::ptrdiff_t>(is.h);
  const auto in_w = static_cast<std::ptrdiff_t>(is.w);
  const auto out_w = static_cast<std::ptrdiff_t>(os.w);

  // Range of output columns whose input column ox*stride - pad + kx lies in
  // [0, in_w).
  auto col_range = [=](std::ptrdiff_t kx) {
    const std::ptrdiff_t off = kx - pad;
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + st - 1) / st;
    std::ptrdiff_t hi = in_w - off <= 0 ? 0 : (in_w - off - 1) / st + 1;
    return std::pair{lo, std::min(hi, out_w)};
  };

  std::vector<T> out(os.numel());
  const T* x = input.data().data();
  const T* k = kernel.data().data();
  const T* b = bias.data().data();
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t co = 0; co < os.c; ++co) {
      T* o = out.data() + (n * os.c + co) * os.plane();
      std::fill(o, o + os.plane(), b[co]);
      for (std::size_t ci = 0; ci < is.c; ++ci) {
        const T* xin = x + (n * is.c + ci) * is.plane();
        const T* kk = k + (co * ks.c + ci) * ks.plane();
        for (std::size_t ky = 0; ky < ks.h; ++ky) {
          for (std::size_t kx = 0; kx < ks.w; ++kx) {
            const T wv = kk[ky * ks.w + kx];
            const auto [lo, hi] = col_range(static_cast<std::ptrdiff_t>(kx));
            for (std::size_t oy = 0; oy < os.h; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * st - pad + static_cast<std::ptrdiff_t>(ky);
              if (iy < 0 || iy >= in_h) continue;
              const T* row = xin + iy * in_w + static_cast<std::ptrdiff_t>(kx) - pad;
              T* orow = o + oy * os.w;
              if (st == 1) {
                for (std::ptrdiff_t ox = lo; ox < hi; ++ox) orow[ox] += wv * row[ox];
              } else {
                for (std::ptrdiff_t ox = lo; ox < hi; ++ox) orow[ox] += wv * row[ox * st];
              }
            }
          }
        }
      }
    }
  }

  return make_result<T>(os, std::move(out), {&input, &kernel, &bias}, [=](detail::TensorImpl<T>& self) {
    auto& in_impl = *self.parents[0];
    auto& k_impl = *self.parents[1];
    auto& b_impl = *self.parents[2];
    const T* go = self.grad.data();
    const T* xv = in_impl.data.data();
    const T* kv = k_impl.data.data();
    T* gx = in_impl.requires_grad ? in_impl.ensure_grad().data() : nullptr;
    T* gk = k_impl.requires_grad ? k_impl.ensure_grad().data() : nullptr;
    if (b_impl.requires_grad) {
      T* gb = b_impl.ensure_grad().data();
      for (std::size_t n = 0; n < os.n; ++n) {
        for (std::size_t co = 0; co < os.c; ++co) {
          const T* g = go + (n * os.c + co) * os.plane();
          double acc = 0.0;
          for (std::size_t i = 0; i < os.plane(); ++i) acc += g[i];
          gb[co] += static_cast<T>(acc);
        }
      }
    }
    if (!gx && !gk) return;
    for (std::size_t n = 0; n < os.n; ++n) {
      for (std::size_t co = 0; co < os.c; ++co) {
        const T* g = go + (n * os.c + co) * os.plane();
        for (std::size_t ci = 0; ci < is.c; ++ci) {
          const std::size_t in_off = (n * is.c + ci) * is.plane();
          const std::size_t k_off = (co * ks.c + ci) * ks.plane();
          for (std::size_t ky = 0; ky < ks.h; ++ky) {
            for (std::size_t kx = 0; kx < ks.w; ++kx) {
              const T wv = kv[k_off + ky * ks.w + kx];
              const auto [lo, hi] = col_range(static_cast<std::ptrdiff_t>(kx));
              T kacc = T{0};
              for (std::size_t oy = 0; oy < os.h; ++oy) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy) * st - pad + static_cast<std::ptrdiff_t>(ky);
                if (iy < 0 || iy >= in_h) continue;
                const std::ptrdiff_t base = iy * in_w + static_cast<std::ptrdiff_t>(kx) - pad;
                const T* grow = g + oy * os.w;
                if (gk) {
                  const T* row = xv + in_off + base;
                  for (std::ptrdiff_t ox = lo; ox < hi; ++ox) kacc += grow[ox] * row[ox * st];
                }
                if (gx) {
                  T* row = gx + in_off + base;
                  for (std::ptrdiff_t ox = lo; ox < hi; ++ox) row[ox * st] += wv * grow[ox];
                }
              }
              if (gk) gk[k_off + ky * ks.w + kx] += kacc;
            }
          }
        }
      }
    }
  });
}

// ---- Elementwise -----------------------------------------------------------

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& input, T slope) {
  require_defined(input, "leaky_relu");
  if (!(slope >= T{0} && slope < T{1})) throw std::invalid_argument("leaky_relu: slope must lie in [0, 1)");
  const auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isnan(x[i])) throw NumericError("leaky_relu: NaN input at index " + std::to_string(i));
    out[i] = x[i] > T{0} ? x[i] : slope * x[i];
  }
  return make_result<T>(input.shape(), std::move(out), {&input}, [slope](detail::TensorImpl<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += p.data[i] > T{0} ? self.grad[i] : slope * self.grad[i];
  });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::TensorImpl<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::TensorImpl<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::TensorImpl<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  require_defined(a, "scale");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result<T>(a.shape(), std::move(out), {&a}, [factor](detail::TensorImpl<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T value) {
  require_defined(a, "add_scalar");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + value;
  return make_result<T>(a.shape(), std::move(out), {&a}, [](detail::TensorImpl<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& a) {
  require_defined(a, "abs");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.data()[i]);
  return make_result<T>(a.shape(), std::move(out), {&a}, [](detail::TensorImpl<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = p.data[i];
      g[i] += x > T{0} ? self.grad[i] : (x < T{0} ? -self.grad[i] : T{0});
    }
  });
}

template <typename T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& input) {
  require_defined(input, "reduce_mean");
  const auto x = input.data();
  if (x.empty()) throw std::invalid_argument("reduce_mean: empty tensor");
  double acc = 0.0;
  for (T v : x) acc += v;
  const double count = static_cast<double>(x.size());
  return make_result<T>({1, 1, 1, 1}, {static_cast<T>(acc / count)}, {&input}, [count](detail::TensorImpl<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T share = static_cast<T>(self.grad[0] / count);
    for (T& v : g) v += share;
  });
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_defined(a, "concat_channels");
  require_defined(b, "concat_channels");
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw std::invalid_argument("concat_channels: N/H/W mismatch " + sa.str() + " vs " + sb.str());
  }
  const Shape so{sa.n, sa.c + sb.c, sa.h, sa.w};
  const std::size_t la = sa.c * sa.plane();
  const std::size_t lb = sb.c * sb.plane();
  std::vector<T> out(so.numel());
  for (std::size_t n = 0; n < so.n; ++n) {
    std::copy_n(a.data().begin() + n * la, la, out.begin() + n * (la + lb));
    std::copy_n(b.data().begin() + n * lb, lb, out.begin() + n * (la + lb) + la);
  }
  return make_result<T>(so, std::move(out), {&a, &b}, [=](detail::TensorImpl<T>& self) {
    for (std::size_t which = 0; which < 2; ++which) {
      auto& p = *self.parents[which];
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      const std::size_t len = which == 0 ? la : lb;
      const std::size_t off = which == 0 ? 0 : la;
      for (std::size_t n = 0; n < so.n; ++n) {
        const T* src = self.grad.data() + n * (la + lb) + off;
        T* dst = g.data() + n * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    }
  });
}

// ---- Resize ----------------------------------------------------------------

template <typename T>
BasicTensor<T> resize_nearest(const BasicTensor<T>& input, std::size_t factor, ResizeDirection direction) {
  require_defined(input, "resize_nearest");
  if (factor == 0) throw std::invalid_argument("resize_nearest: factor must be positive");
  const Shape is = input.shape();
  const std::size_t f = factor;
  const bool up = direction == ResizeDirection::up;
  if (!up && (is.h % f != 0 || is.w % f != 0)) {
    throw std::invalid_argument("resize_nearest: extents " + is.str() + " not divisible by " + std::to_string(f));
  }
  const Shape os = up ? Shape{is.n, is.c, is.h * f, is.w * f} : Shape{is.n, is.c, is.h / f, is.w / f};
  // Each output pixel reads exactly one input pixel.
  auto source = [=](std::size_t plane, std::size_t oy, std::size_t ox) {
    return up ? plane * is.plane() + (oy / f) * is.w + ox / f : plane * is.plane() + (oy * f) * is.w + ox * f;
  };
  std::vector<T> out(os.numel());
  const auto x = input.data();
  const std::size_t planes = is.n * is.c;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      for (std::size_t ox = 0; ox < os.w; ++ox) out[p * os.plane() + oy * os.w + ox] = x[source(p, oy, ox)];
    }
  }
  return make_result<T>(os, std::move(out), {&input}, [=](detail::TensorImpl<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        for (std::size_t ox = 0; ox < os.w; ++ox) g[source(p, oy, ox)] += self.grad[p * os.plane() + oy * os.w + ox];
      }
    }
  });
}

#define PBSR_INSTANTIATE_OPS(T)                                                                                  \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,  \
                                 std::size_t);                                                                      \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                                     \
  template BasicTensor<T> resize_nearest(const BasicTensor<T>&, std::size_t, ResizeDirection);                      \
  template BasicTensor<T> reduce_mean(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                        \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                        \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                        \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                          \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                                     \
  template BasicTensor<T> abs(const BasicTensor<T>&);

PBSR_INSTANTIATE_OPS(float)
PBSR_INSTANTIATE_OPS(double)
#undef PBSR_INSTANTIATE_OPS

// ---- grad_check --------------------------------------------------------------

GradCheckReport grad_check_report(const Tensor64Fn& f, std::span<const Tensor> inputs,
                                  const GradCheckOptions& options) {
  std::vector<Tensor64> wide;
  for (const auto& t : inputs) wide.push_back(tensor_cast<double>(t, t.requires_grad()));

  const Tensor64 out = f(wide);
  std::vector<double> projection(out.numel());
  {
    Rng rng(derive_seed(options.seed, std::uint64_t{0x6AC}));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& r : projection) r = dist(rng);
  }
  out.backward(projection);

  std::vector<Tensor64> probe;
  for (const auto& t : wide) probe.push_back(t.detach());
  auto objective = [&]() {
    const Tensor64 y = f(probe);
    double acc = 0.0;
    const auto v = y.data();
    for (std::size_t i = 0; i < v.size(); ++i) acc += projection[i] * v[i];
    return acc;
  };

  Rng pick(derive_seed(options.seed, std::uint64_t{0xC0DE}));
  const double h = options.epsilon;
  GradCheckReport report;
  for (std::size_t k = 0; k < wide.size(); ++k) {
    const Tensor64& t = wide[k];
    if (!t.requires_grad()) continue;
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (options.max_coords > 0 && options.max_coords < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(options.max_coords);
    }
    auto values = probe[k].mutable_data();
    auto central = [&](std::size_t i, double step) {
      const double original = values[i];
      values[i] = original + step;
      const double f_plus = objective();
      values[i] = original - step;
      const double f_minus = objective();
      values[i] = original;
      return (f_plus - f_minus) / (2.0 * step);
    };
    auto relative = [](double a, double b) { return std::fabs(a - b) / std::max(1e-6, std::fabs(a) + std::fabs(b)); };
    for (std::size_t i : coords) {
      const double numeric = central(i, h);
      if (options.exclude_kinks && relative(numeric, central(i, h / 2)) > options.kink_tolerance) {
        ++report.excluded;
        continue;
      }
      const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
      report.max_error = std::max(report.max_error, relative(analytic, numeric));
      ++report.probed;
    }
  }
  return report;
}

}  // namespace pbsr
