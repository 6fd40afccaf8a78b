#include "afflow/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "afflow/rng.hpp"

namespace afflow {

std::string to_string(MotionKind kind) {
  return kind == MotionKind::RigidConstant ? "rigid" : "sinusoidal";
}

MotionKind motion_kind_from_string(const std::string& s) {
  if (s == "rigid" || s == "rigid-constant") return MotionKind::RigidConstant;
  if (s == "sinusoidal" || s == "sinusoidal-respiratory") return MotionKind::Sinusoidal;
  throw std::invalid_argument("unknown motion kind '" + s + "'");
}

MotionTrajectory make_trajectory(const MotionSpec& spec, std::size_t lines) {
  if (!(spec.amplitude >= 0.0)) throw std::invalid_argument("motion amplitude must be >= 0");
  if (!(spec.period >= 2.0)) throw std::invalid_argument("motion period must be >= 2 lines");
  if (!(spec.fraction >= 0.0 && spec.fraction <= 1.0)) {
    throw std::invalid_argument("corrupted-line fraction must lie in [0, 1]");
  }
  if (lines == 0) throw std::invalid_argument("trajectory needs at least one line");

  MotionTrajectory t;
  t.spec = spec;
  t.p.assign(lines, 0.0);
  t.q.assign(lines, 0.0);
  t.corrupted.assign(lines, false);

  const auto moving = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(lines)));
  const std::size_t protect = lines - moving;
  const std::size_t lo = lines / 2 - std::min(lines / 2, protect / 2);
  const std::size_t hi = lo + protect;

  Rng rng(derive_seed(spec.seed, 0x7472616a));
  const double psi = 2.0 * std::numbers::pi * rng.uniform();
  const double w = 2.0 * std::numbers::pi / spec.period;
  for (std::size_t v = 0; v < lines; ++v) {
    if (v >= lo && v < hi) continue;
    t.corrupted[v] = true;
    if (spec.kind == MotionKind::RigidConstant) {
      t.p[v] = spec.amplitude * std::cos(spec.phase0);
      t.q[v] = spec.amplitude * std::sin(spec.phase0);
    } else {
      const double arg = w * static_cast<double>(v);
      t.p[v] = spec.amplitude * std::sin(arg + spec.phase0);
      t.q[v] = spec.amplitude * std::sin(arg + psi);
    }
  }
  return t;
}

void apply_phase_error(ComplexGrid& k, const MotionTrajectory& traj) {
  const std::size_t H = k.height, W = k.width;
  if (traj.p.size() != H || traj.q.size() != H) {
    throw std::invalid_argument("trajectory has " + std::to_string(traj.p.size()) +
                                " lines, k-space has " + std::to_string(H));
  }
  const auto centred = [](std::size_t i, std::size_t n) {
    return static_cast<double>(i < n / 2 ? static_cast<std::ptrdiff_t>(i)
                                         : static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(n));
  };
  for (std::size_t r = 0; r < H; ++r) {
    const std::size_t v = (r + H / 2) % H;
    const double p = traj.p[v], q = traj.q[v];
    if (p == 0.0 && q == 0.0) continue;
    const double ky = centred(r, H) / static_cast<double>(H);
    for (std::size_t u = 0; u < W; ++u) {
      const double kx = centred(u, W) / static_cast<double>(W);
      const double phi = 2.0 * std::numbers::pi * (kx * p + ky * q);
      k.at(r, u) *= std::complex<double>(std::cos(phi), -std::sin(phi));
    }
  }
}

namespace {

std::pair<std::size_t, std::size_t> image_extents(const Tensor& img) {
  const Shape& s = img.shape();
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 3 && s[0] == 1) return {s[1], s[2]};
  throw std::invalid_argument("expected a single-channel image, got shape " + shape_str(s));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

}  // namespace

ComplexGrid to_grid(const Tensor& image) {
  const auto [H, W] = image_extents(image);
  ComplexGrid g(H, W, Domain::Image);
  const auto v = image.values();
  for (std::size_t i = 0; i < v.size(); ++i) g.data[i] = v[i];
  return g;
}

Tensor corrupt_kspace(const Tensor& clean, const MotionTrajectory& traj) {
  ComplexGrid k = fft2(to_grid(clean));
  apply_phase_error(k, traj);
  const ComplexGrid img = ifft2(k);
  std::vector<double> out(img.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(img.data[i].real(), 0.0, 1.0);
  return Tensor(clean.shape(), std::move(out));
}

Tensor compose_artifact(const Tensor& clean, const Tensor& residual, double lambda) {
  require_same_shape(clean, residual, "compose_artifact");
  const auto j = clean.values(), r = residual.values();
  std::vector<double> out(j.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = j[i] + r[i] - lambda * (j[i] * r[i]);
  return Tensor(clean.shape(), std::move(out));
}

Tensor decompose_artifact(const Tensor& corrupted, const Tensor& clean, double lambda) {
  require_same_shape(corrupted, clean, "decompose_artifact");
  const auto I = corrupted.values(), j = clean.values();
  std::size_t singular = 0;
  for (double v : j) singular += std::abs(1.0 - lambda * v) <= 1e-6;
  if (singular) {
    throw std::domain_error("decompose_artifact: 1 - lambda*J vanishes at " + std::to_string(singular) +
                            " pixel(s)");
  }
  std::vector<double> out(j.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (I[i] - j[i]) / (1.0 - lambda * j[i]);
  return Tensor(clean.shape(), std::move(out));
}

}  // namespace afflow
