#pragma once

// Respiratory motion corruption as per-line k-space phase error, and the
// nonlinear content/artifact composition I = J + R - lambda * J * R.

#include <cstdint>
#include <string>
#include <vector>

#include "afflow/fft.hpp"
#include "afflow/tensor.hpp"

namespace afflow {

enum class MotionKind { RigidConstant, Sinusoidal };

std::string to_string(MotionKind kind);
MotionKind motion_kind_from_string(const std::string& s);

struct MotionSpec {
  MotionKind kind = MotionKind::Sinusoidal;
  double amplitude = 1.0;  // A, pixels
  double period = 16.0;    // T, phase-encode lines
  double phase0 = 0.0;     // phi0, radians
  double fraction = 0.6;   // f, share of lines corrupted
  std::uint64_t seed = 0;
};

// p[v], q[v] are displacements (pixels) while line v is acquired. Lines are
// acquired in centred order: line v has normalised frequency (v - H/2) / H,
// so v = H/2 is DC.
struct MotionTrajectory {
  MotionSpec spec;
  std::vector<double> p;
  std::vector<double> q;
  std::vector<bool> corrupted;
};

// Sinusoidal: p[v] = A sin(2 pi v / T + phi0), q[v] = A sin(2 pi v / T + psi)
// with psi drawn from the seed. Rigid: p = A cos(phi0), q = A sin(phi0).
// Only the outer round(f H) lines move; the remaining central band, which
// always holds DC when non-empty, stays at zero displacement.
MotionTrajectory make_trajectory(const MotionSpec& spec, std::size_t lines);

// Multiplies each k-space sample by exp(-i 2 pi (kx p + ky q)).
void apply_phase_error(ComplexGrid& kspace, const MotionTrajectory& traj);

// J: 1 x H x W or H x W in [0, 1]. Returns Re(ifft2(phase-modulated
// fft2(J))) clamped to [0, 1], same shape as J.
Tensor corrupt_kspace(const Tensor& clean, const MotionTrajectory& traj);

Tensor compose_artifact(const Tensor& clean, const Tensor& residual, double lambda);
// R = (I - J) / (1 - lambda J). Throws std::domain_error naming the number
// of pixels where |1 - lambda J| <= 1e-6.
Tensor decompose_artifact(const Tensor& corrupted, const Tensor& clean, double lambda);

ComplexGrid to_grid(const Tensor& image);

}  // namespace afflow
