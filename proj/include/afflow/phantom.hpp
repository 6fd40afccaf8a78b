#pragma once

#include <cstddef>

#include "afflow/tensor.hpp"

namespace afflow {

class Rng;

// Modified Shepp-Logan head phantom, 1 x side x side in [0, 1]. With a
// generator the ellipses are randomly scaled, rotated, shifted and
// re-weighted so that every call yields a distinct plausible slice.
Tensor shepp_logan(std::size_t side);
Tensor random_phantom(std::size_t side, Rng& rng);

}  // namespace afflow
