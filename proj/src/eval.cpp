// SPDX-License-Identifier: Apache-2.0

#include "pbsr/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "pbsr/errors.hpp"
#include "pbsr/image_io.hpp"
#include "pbsr/models.hpp"

namespace pbsr {

std::string to_string(Region r) {
  switch (r) {
    case Region::all: return "all";
    case Region::blur: return "blur";
    case Region::focus: return "focus";
  }
  return "?";
}

namespace {

struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
  double at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

void require_pair(const Tensor& a, const Tensor& b, const char* op) {
  const Shape s = a.shape();
  if (s != b.shape()) throw std::invalid_argument(std::string(op) + ": " + s.str() + " vs " + b.shape().str());
  if (s.n != 1 || (s.c != 1 && s.c != 3)) throw std::invalid_argument(std::string(op) + ": expected (1,1|3,H,W)");
}

// Luma in double for RGB input; single-channel input is used as is.
Plane gray(const Tensor& t) {
  const Shape s = t.shape();
  Plane p{s.h, s.w, std::vector<double>(s.plane())};
  const auto v = t.data();
  for (std::size_t i = 0; i < s.plane(); ++i) {
    p.v[i] = s.c == 1 ? v[i] : 0.299 * v[i] + 0.587 * v[s.plane() + i] + 0.114 * v[2 * s.plane() + i];
  }
  return p;
}

// Per-pixel selection flags; empty optional mask selects everything.
std::vector<char> selection(const Shape& s, const std::optional<Tensor>& mask, Region region) {
  std::vector<char> sel(s.plane(), 1);
  if (!mask) {
    if (region != Region::all) throw std::invalid_argument("a region other than 'all' needs a mask");
    return sel;
  }
  const Shape ms = mask->shape();
  if (ms.n != 1 || ms.c != 1 || ms.h != s.h || ms.w != s.w) {
    throw std::invalid_argument("mask " + ms.str() + " does not match image " + s.str());
  }
  const auto m = mask->data();
  for (std::size_t i = 0; i < sel.size(); ++i) {
    if (m[i] != 0.0f && m[i] != 1.0f) throw std::invalid_argument("mask not binary");
    sel[i] = region == Region::all || (region == Region::blur ? m[i] == 0.0f : m[i] == 1.0f);
  }
  return sel;
}

std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

template <typename F>
RegionValues regions(F&& metric, const Tensor& mask) {
  RegionValues r;
  r.all = *metric(std::optional<Tensor>(mask), Region::all);
  r.blur = metric(std::optional<Tensor>(mask), Region::blur);
  r.focus = metric(std::optional<Tensor>(mask), Region::focus);
  return r;
}

std::array<double, kSsimWindow * kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow * kSsimWindow> w{};
  const double c = (kSsimWindow - 1) / 2.0;
  double sum = 0.0;
  for (std::size_t y = 0; y < kSsimWindow; ++y) {
    for (std::size_t x = 0; x < kSsimWindow; ++x) {
      const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
      w[y * kSsimWindow + x] = std::exp(-d2 / (2.0 * kSsimSigma * kSsimSigma));
      sum += w[y * kSsimWindow + x];
    }
  }
  for (double& v : w) v /= sum;
  return w;
}

Plane prewitt_magnitude(const Plane& g) {
  Plane out{g.h, g.w, std::vector<double>(g.v.size())};
  const auto H = static_cast<std::ptrdiff_t>(g.h), W = static_cast<std::ptrdiff_t>(g.w);
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) { return g.v[reflect(y, H) * W + reflect(x, W)]; };
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double gx = 0.0, gy = 0.0;
      for (std::ptrdiff_t d = -1; d <= 1; ++d) {
        gx += at(y + d, x - 1) - at(y + d, x + 1);
        gy += at(y - 1, x + d) - at(y + 1, x + d);
      }
      gx /= 3.0;
      gy /= 3.0;
      out.v[y * W + x] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

}  // namespace

// ---- Metrics --------------------------------------------------------------------

std::optional<double> psnr(const Tensor& a, const Tensor& b, const std::optional<Tensor>& mask, Region region) {
  require_pair(a, b, "psnr");
  const Shape s = a.shape();
  const std::vector<char> sel = selection(s, mask, region);
  const auto x = a.data(), y = b.data();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      if (!sel[i]) continue;
      const double d = double(x[c * s.plane() + i]) - y[c * s.plane() + i];
      sum += d * d;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  const double mse = sum / static_cast<double>(count);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

RegionValues psnr_regions(const Tensor& a, const Tensor& b, const Tensor& mask) {
  return regions([&](const std::optional<Tensor>& m, Region r) { return psnr(a, b, m, r); }, mask);
}

std::optional<double> ssim(const Tensor& a, const Tensor& b, const std::optional<Tensor>& mask, Region region) {
  require_pair(a, b, "ssim");
  const Shape s = a.shape();
  if (s.h < kSsimWindow || s.w < kSsimWindow) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const std::vector<char> sel = selection(s, mask, region);
  const Plane ga = gray(a), gb = gray(b);
  static const auto win = gaussian_window();
  const std::size_t r = kSsimWindow / 2;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t cy = r; cy + r < s.h; ++cy) {
    for (std::size_t cx = r; cx + r < s.w; ++cx) {
      if (!sel[cy * s.w + cx]) continue;
      double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
      for (std::size_t dy = 0; dy < kSsimWindow; ++dy) {
        for (std::size_t dx = 0; dx < kSsimWindow; ++dx) {
          const double wt = win[dy * kSsimWindow + dx];
          const double va = ga.at(cy - r + dy, cx - r + dx);
          const double vb = gb.at(cy - r + dy, cx - r + dx);
          ma += wt * va;
          mb += wt * vb;
          aa += wt * va * va;
          bb += wt * vb * vb;
          ab += wt * va * vb;
        }
      }
      const double var_a = aa - ma * ma, var_b = bb - mb * mb, cov = ab - ma * mb;
      total += ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) /
               ((ma * ma + mb * mb + kSsimC1) * (var_a + var_b + kSsimC2));
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return total / static_cast<double>(count);
}

RegionValues ssim_regions(const Tensor& a, const Tensor& b, const Tensor& mask) {
  RegionValues r;
  r.all = ssim(a, b, mask, Region::all).value_or(0.0);
  r.blur = ssim(a, b, mask, Region::blur);
  r.focus = ssim(a, b, mask, Region::focus);
  return r;
}

std::optional<double> gmsd(const Tensor& a, const Tensor& b, const std::optional<Tensor>& mask, Region region) {
  require_pair(a, b, "gmsd");
  const Shape s = a.shape();
  if (s.h < 2 || s.w < 2) throw std::invalid_argument("gmsd: image must be at least 2x2");
  const std::vector<char> sel = selection(s, mask, region);
  const Plane ma = prewitt_magnitude(gray(a)), mb = prewitt_magnitude(gray(b));
  std::vector<double> gms;
  for (std::size_t i = 0; i < sel.size(); ++i) {
    if (!sel[i]) continue;
    gms.push_back((2 * ma.v[i] * mb.v[i] + kGmsdC) / (ma.v[i] * ma.v[i] + mb.v[i] * mb.v[i] + kGmsdC));
  }
  if (gms.empty()) return std::nullopt;
  double mean = 0.0;
  for (double g : gms) mean += g;
  mean /= static_cast<double>(gms.size());
  double var = 0.0;
  for (double g : gms) var += (g - mean) * (g - mean);
  return std::sqrt(var / static_cast<double>(gms.size()));
}

RegionValues gmsd_regions(const Tensor& a, const Tensor& b, const Tensor& mask) {
  return regions([&](const std::optional<Tensor>& m, Region r) { return gmsd(a, b, m, r); }, mask);
}

// ---- Discriminator loss maps ------------------------------------------------------

DiscLossMap disc_loss_map(const ParamSet& d, const Tensor& hr, const Tensor& sr, const Tensor& mask, bool clamp) {
  const Shape s = hr.shape();
  if (sr.shape() != s) throw std::invalid_argument("disc_loss_map: hr and sr differ in shape");
  const Shape ms = mask.shape();
  if (ms.n != s.n || ms.c != 1 || ms.h != s.h || ms.w != s.w) throw std::invalid_argument("disc_loss_map: bad mask");
  const DiscriminatorConfig cfg = DiscriminatorConfig::from_params(d);
  const std::optional<Tensor> cond = cfg.conditional() ? std::optional<Tensor>(mask) : std::nullopt;
  const Tensor real = discriminator_forward(d, hr, cond);
  const Tensor fake = discriminator_forward(d, sr, cond);
  const Shape gs = real.shape();
  if (s.h % gs.h != 0 || s.w % gs.w != 0 || s.h / gs.h != s.w / gs.w) {
    throw std::invalid_argument("disc_loss_map: logits grid does not tile the image");
  }
  const std::size_t f = s.h / gs.h;

  DiscLossMap out;
  std::vector<float> grid(gs.numel()), gmask(gs.numel());
  const auto rv = real.data(), fv = fake.data(), mv = mask.data();
  std::size_t blur_cells = 0, focus_cells = 0;
  double all_sum = 0.0;
  for (std::size_t n = 0; n < gs.n; ++n) {
    for (std::size_t y = 0; y < gs.h; ++y) {
      for (std::size_t x = 0; x < gs.w; ++x) {
        const std::size_t i = (n * gs.h + y) * gs.w + x;
        double a = 1.0 - rv[i], b = 1.0 + fv[i];
        if (clamp) {
          a = std::max(0.0, a);
          b = std::max(0.0, b);
        }
        const double term = a + b;
        double block = 0.0;
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx) block += mv[(n * s.h + y * f + dy) * s.w + x * f + dx];
        const bool sharp = block / double(f * f) >= 0.5;
        grid[i] = static_cast<float>(term);
        gmask[i] = sharp ? 1.0f : 0.0f;
        all_sum += term;
        if (sharp) {
          out.focus_sum += term;
          ++focus_cells;
        } else {
          out.blur_sum += term;
          ++blur_cells;
        }
      }
    }
  }
  const double cells = static_cast<double>(gs.numel());
  out.all_mean = all_sum / cells;
  if (blur_cells) out.blur_mean = out.blur_sum / double(blur_cells);
  if (focus_cells) out.focus_mean = out.focus_sum / double(focus_cells);
  out.blur_fraction = double(blur_cells) / cells;
  out.grid = Tensor::from_data(gs, std::move(grid));
  out.grid_mask = Tensor::from_data(gs, std::move(gmask));
  out.image = resize_nearest(out.grid, f, ResizeDirection::up);
  return out;
}

void write_false_color_png(const std::filesystem::path& path, const Tensor& map, double lo, double hi) {
  const Shape s = map.shape();
  if (s.n != 1 || s.c != 1) throw std::invalid_argument("false-colour map must be (1,1,H,W)");
  if (!(hi > lo)) throw std::invalid_argument("false-colour range is empty");
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {0, 0, 4}, {87, 16, 110}, {188, 55, 84}, {249, 142, 9}, {252, 255, 164}}};
  Raster r{s.w, s.h, 3, std::vector<std::uint8_t>(s.plane() * 3)};
  const auto v = map.data();
  for (std::size_t i = 0; i < s.plane(); ++i) {
    if (!std::isfinite(v[i])) throw NumericError("false-colour map contains a non-finite value");
    const double t = std::clamp((v[i] - lo) / (hi - lo), 0.0, 1.0) * (stops.size() - 1);
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
    const double frac = t - double(k);
    for (std::size_t c = 0; c < 3; ++c) {
      r.pixels[i * 3 + c] =
          static_cast<std::uint8_t>(std::lround(stops[k][c] + frac * (stops[k + 1][c] - stops[k][c])));
    }
  }
  write_file_atomic(path, encode_png(r));
}

// ---- Reports ---------------------------------------------------------------------

SuperResolver generator_resolver(const ParamSet& generator) {
  return [generator](const Tensor& lr) { return generator_forward(generator, lr); };
}

SuperResolver nearest_resolver() {
  return [](const Tensor& lr) { return nearest_x4(lr); };
}

std::vector<AggregateRow> aggregate(const std::vector<MetricRow>& rows) {
  struct Acc {
    std::size_t count = 0, blur_n = 0, focus_n = 0;
    double all = 0, blur = 0, focus = 0;
  };
  std::map<std::tuple<std::string, std::string, std::string, std::string>, Acc> groups;
  for (const MetricRow& r : rows) {
    Acc& a = groups[{r.blur_type, r.size_category, r.intensity, r.metric}];
    ++a.count;
    a.all += r.values.all;
    if (r.values.blur) {
      a.blur += *r.values.blur;
      ++a.blur_n;
    }
    if (r.values.focus) {
      a.focus += *r.values.focus;
      ++a.focus_n;
    }
  }
  std::vector<AggregateRow> out;
  for (const auto& [key, a] : groups) {
    AggregateRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), a.count, {}, {}, 0.0};
    row.all_mean = a.all / double(a.count);
    if (a.blur_n) row.blur_mean = a.blur / double(a.blur_n);
    if (a.focus_n) row.focus_mean = a.focus / double(a.focus_n);
    out.push_back(std::move(row));
  }
  return out;
}

namespace {

Tensor clip01(const Tensor& t) {
  std::vector<float> v(t.data().begin(), t.data().end());
  for (float& x : v) x = std::clamp(x, 0.0f, 1.0f);
  return Tensor::from_data(t.shape(), std::move(v));
}

}  // namespace

MetricReport eval_report(const SuperResolver& model, const DatasetManifest& manifest, const DegradationConfig& degradation,
                         const std::string& split) {
  degradation.validate();
  MetricReport report;
  for (const BlurSample& s : manifest.select(split)) {
    Tensor hr = read_rgb(manifest.hr_file(s));
    Tensor mask = read_mask(manifest.mask_file(s));
    const std::size_t f = degradation.factor;
    const std::size_t h = hr.shape().h / f * f, w = hr.shape().w / f * f;
    if (h == 0 || w == 0) throw std::invalid_argument("sample '" + s.id + "' is smaller than the scale factor");
    hr = crop(hr, 0, 0, h, w);
    mask = crop(mask, 0, 0, h, w);
    const Tensor sr = clip01(model(degrade_sample(hr, degradation, s.id)));
    if (sr.shape() != hr.shape()) {
      throw std::invalid_argument("model output " + sr.shape().str() + " does not match " + hr.shape().str());
    }
    const std::string size = to_string(size_category(blur_area_fraction(mask)));
    auto add = [&](const char* metric, RegionValues v) {
      report.rows.push_back({s.id, to_string(s.blur_type), size, to_string(s.intensity), metric, v});
    };
    add("psnr", psnr_regions(sr, hr, mask));
    add("ssim", ssim_regions(sr, hr, mask));
    add("gmsd", gmsd_regions(sr, hr, mask));
  }
  report.aggregates = aggregate(report.rows);
  return report;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const MetricReport& report) {
  std::ostringstream os;
  os << "sample_id,blur_type,size_category,intensity,metric,blur_value,focus_value,all_value\n";
  for (const MetricRow& r : report.rows) {
    os << r.sample_id << ',' << r.blur_type << ',' << r.size_category << ',' << r.intensity << ',' << r.metric << ','
       << opt(r.values.blur) << ',' << opt(r.values.focus) << ',' << num(r.values.all) << '\n';
  }
  write_text(path, os.str());
}

void write_aggregate_csv(const std::filesystem::path& path, const MetricReport& report) {
  std::ostringstream os;
  os << "blur_type,size_category,intensity,metric,count,blur_mean,focus_mean,all_mean\n";
  for (const AggregateRow& r : report.aggregates) {
    os << r.blur_type << ',' << r.size_category << ',' << r.intensity << ',' << r.metric << ',' << r.count << ','
       << opt(r.blur_mean) << ',' << opt(r.focus_mean) << ',' << num(r.all_mean) << '\n';
  }
  write_text(path, os.str());
}

}  // namespace pbsr
