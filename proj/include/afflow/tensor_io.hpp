#pragma once

// "AFT1" tensor files: magic "AFT1", u32 ndim, ndim u32 extents, then the
// row-major float64 payload. All integers and floats little-endian.

#include <filesystem>
#include <iosfwd>

#include "afflow/tensor.hpp"

namespace afflow {

void write_aft(std::ostream& os, const Tensor& t);
Tensor read_aft(std::istream& is);

void save_aft(const std::filesystem::path& path, const Tensor& t);
Tensor load_aft(const std::filesystem::path& path);

}  // namespace afflow
