#pragma once

// Binary greyscale PGM ("P5"), 8-bit or 16-bit (big-endian) samples.

#include <filesystem>

#include "afflow/tensor.hpp"

namespace afflow {

// Returns 1 x H x W scaled to [0, 1] by the file's maxval.
Tensor read_pgm(const std::filesystem::path& path);

// Writes a 1 x H x W or H x W image, clamped to [0, 1], with maxval 255
// (8-bit) or 65535 (16-bit).
void write_pgm(const std::filesystem::path& path, const Tensor& image, bool sixteen_bit = false);

}  // namespace afflow
