#include "afflow/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "afflow/rng.hpp"

namespace afflow {

namespace {

struct Ellipse {
  double value, a, b, x0, y0, theta_deg;
};

// Toft's modified intensities.
constexpr std::array<Ellipse, 10> kSheppLogan{{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0},
    {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0},
    {-0.2, 0.11, 0.31, 0.22, 0.0, -18},
    {-0.2, 0.16, 0.41, -0.22, 0.0, 18},
    {0.1, 0.21, 0.25, 0.0, 0.35, 0},
    {0.1, 0.046, 0.046, 0.0, 0.1, 0},
    {0.1, 0.046, 0.046, 0.0, -0.1, 0},
    {0.1, 0.046, 0.023, -0.08, -0.605, 0},
    {0.1, 0.023, 0.023, 0.0, -0.606, 0},
    {0.1, 0.023, 0.046, 0.06, -0.605, 0},
}};

Tensor render(const std::array<Ellipse, 10>& ellipses, std::size_t side) {
  constexpr int kSub = 2;
  std::vector<double> img(side * side, 0.0);
  const double n = static_cast<double>(side);
  for (const Ellipse& e : ellipses) {
    const double th = e.theta_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    for (std::size_t i = 0; i < side; ++i) {
      for (std::size_t j = 0; j < side; ++j) {
        int hits = 0;
        for (int si = 0; si < kSub; ++si) {
          for (int sj = 0; sj < kSub; ++sj) {
            // Image row 0 is the top (+y).
            const double y = 1.0 - 2.0 * (static_cast<double>(i) + (si + 0.5) / kSub) / n;
            const double x = 2.0 * (static_cast<double>(j) + (sj + 0.5) / kSub) / n - 1.0;
            const double dx = x - e.x0, dy = y - e.y0;
            const double u = (dx * c + dy * s) / e.a;
            const double v = (-dx * s + dy * c) / e.b;
            hits += (u * u + v * v) <= 1.0;
          }
        }
        img[i * side + j] += e.value * hits / double(kSub * kSub);
      }
    }
  }
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  return Tensor(Shape{1, side, side}, std::move(img));
}

}  // namespace

Tensor shepp_logan(std::size_t side) { return render(kSheppLogan, side); }

Tensor random_phantom(std::size_t side, Rng& rng) {
  auto ellipses = kSheppLogan;
  const double zoom = rng.uniform(0.8, 1.0);
  const double rot = rng.uniform(-12.0, 12.0);
  const double shift_x = rng.uniform(-0.06, 0.06), shift_y = rng.uniform(-0.06, 0.06);
  const double th = rot * std::numbers::pi / 180.0;
  for (std::size_t k = 0; k < ellipses.size(); ++k) {
    Ellipse& e = ellipses[k];
    const double stretch = k < 2 ? 1.0 : rng.uniform(0.8, 1.25);
    e.a *= zoom * stretch;
    e.b *= zoom * (k < 2 ? 1.0 : rng.uniform(0.8, 1.25));
    const double x = e.x0 * zoom, y = e.y0 * zoom;
    e.x0 = x * std::cos(th) - y * std::sin(th) + shift_x;
    e.y0 = x * std::sin(th) + y * std::cos(th) + shift_y;
    e.theta_deg += rot + (k < 2 ? 0.0 : rng.uniform(-10.0, 10.0));
    if (k >= 2) e.value *= rng.uniform(0.6, 2.5);
  }
  return render(ellipses, side);
}

}  // namespace afflow
