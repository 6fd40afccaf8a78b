#include "afflow/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace afflow {

namespace {

struct Plane {
  std::size_t h, w;
  std::span<const double> v;
};

Plane plane(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.size() == 2) return {s[0], s[1], t.values()};
  if (s.size() == 3 && s[0] == 1) return {s[1], s[2], t.values()};
  throw std::invalid_argument("metrics expect a single-channel image, got " + shape_str(s));
}

std::pair<Plane, Plane> planes(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("metric shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return {plane(a), plane(b)};
}

// Separable "valid" filtering with the window taps.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& taps) {
  const std::size_t k = taps.size(), oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * img[y * w + x + t];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

// Shared SSIM/UQI body; when stabilised is false, degenerate windows are
// skipped.
double structural(const Tensor& a, const Tensor& b, const SsimParams& p, bool stabilised) {
  const auto [pa, pb] = planes(a, b);
  if (pa.h < p.window || pa.w < p.window) {
    throw std::invalid_argument(fmt::format("image {}x{} is smaller than the {}x{} window", pa.h, pa.w, p.window,
                                            p.window));
  }
  const auto taps = gaussian_window(p.window, p.sigma);
  const std::size_t n = pa.v.size();
  std::vector<double> x(pa.v.begin(), pa.v.end()), y(pb.v.begin(), pb.v.end());
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, pa.h, pa.w, taps), my = filter_valid(y, pa.h, pa.w, taps);
  const auto sxx = filter_valid(xx, pa.h, pa.w, taps), syy = filter_valid(yy, pa.h, pa.w, taps);
  const auto sxy = filter_valid(xy, pa.h, pa.w, taps);

  const double c1 = stabilised ? (p.k1 * p.range) * (p.k1 * p.range) : 0.0;
  const double c2 = stabilised ? (p.k2 * p.range) * (p.k2 * p.range) : 0.0;
  // Below this a flat window's variance is rounding noise.
  constexpr double kFloor = 1e-14;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double va = sxx[i] - mx[i] * mx[i], vb = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    const double lum_den = mx[i] * mx[i] + my[i] * my[i] + c1;
    const double con_den = va + vb + c2;
    if (!stabilised && (lum_den <= kFloor || con_den <= kFloor)) continue;
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) / (lum_den * con_den);
    ++used;
  }
  if (used == 0) return std::equal(pa.v.begin(), pa.v.end(), pb.v.begin()) ? 1.0 : 0.0;
  return total / static_cast<double>(used);
}

}  // namespace

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> t(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    t[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    s += t[i];
  }
  for (double& v : t) v /= s;
  return t;
}

double psnr(const Tensor& a, const Tensor& ref) {
  const auto [pa, pb] = planes(a, ref);
  double err = 0.0;
  for (std::size_t i = 0; i < pa.v.size(); ++i) err += (pb.v[i] - pa.v[i]) * (pb.v[i] - pa.v[i]);
  if (err == 0.0) return kPsnrCap;
  const double peak = *std::max_element(pb.v.begin(), pb.v.end());
  if (!(peak > 0.0)) throw std::domain_error("psnr: reference image has no positive peak");
  const double db = 20.0 * std::log10(peak * std::sqrt(static_cast<double>(pa.v.size())) / std::sqrt(err));
  return std::min(db, kPsnrCap);
}

double ssim(const Tensor& a, const Tensor& ref, const SsimParams& p) { return structural(a, ref, p, true); }
double uqi(const Tensor& a, const Tensor& ref, const SsimParams& p) { return structural(a, ref, p, false); }

ImageScore score_image(const std::string& id, const Tensor& a, const Tensor& ref) {
  return {id, psnr(a, ref), ssim(a, ref), uqi(a, ref)};
}

MetricReport summarize(std::vector<ImageScore> scores) {
  MetricReport r;
  r.images = std::move(scores);
  r.mean.id = "mean";
  for (const auto& s : r.images) {
    r.mean.psnr += s.psnr;
    r.mean.ssim += s.ssim;
    r.mean.uqi += s.uqi;
  }
  if (!r.images.empty()) {
    const double n = static_cast<double>(r.images.size());
    r.mean.psnr /= n;
    r.mean.ssim /= n;
    r.mean.uqi /= n;
  }
  return r;
}

void write_report(const std::filesystem::path& path, const MetricReport& r) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "id,psnr,ssim,uqi\n";
  for (const auto& s : r.images) os << fmt::format("{},{},{},{}\n", s.id, s.psnr, s.ssim, s.uqi);
  os << fmt::format("{},{},{},{}\n", r.mean.id, r.mean.psnr, r.mean.ssim, r.mean.uqi);
}

}  // namespace afflow
