#include "afflow/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace afflow {

namespace {

constexpr std::array<char, 4> kMagic{'A', 'F', 'T', '1'};
constexpr std::uint32_t kMaxRank = 16;

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw std::runtime_error("AFT1: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_aft(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
  for (double v : t.values()) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b.data(), 8);
  }
  if (!os) throw std::runtime_error("AFT1: write failed");
}

Tensor read_aft(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic) throw std::runtime_error("AFT1: bad magic");
  const std::uint32_t rank = get_u32(is);
  if (rank > kMaxRank) throw std::runtime_error("AFT1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = get_u32(is);
    if (e == 0) throw std::runtime_error("AFT1: zero extent");
  }
  std::vector<double> data(shape_numel(shape));
  std::vector<unsigned char> raw(data.size() * 8);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw std::runtime_error("AFT1: truncated payload");
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[i * 8 + b]) << (8 * b);
    data[i] = std::bit_cast<double>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_aft(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_aft(os, t);
}

Tensor load_aft(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_aft(is);
}

}  // namespace afflow
