#include "afflow/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace afflow {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string token(std::istream& is) {
  std::string t;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!t.empty()) break;
      continue;
    }
    t.push_back(static_cast<char>(c));
  }
  return t;
}

std::size_t header_number(std::istream& is, const std::filesystem::path& path, const char* what) {
  const std::string t = token(is);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw std::runtime_error(path.string() + ": bad PGM " + what + " '" + t + "'");
  }
  return std::stoul(t);
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  if (token(is) != "P5") throw std::runtime_error(path.string() + ": not a binary PGM (P5)");
  const std::size_t w = header_number(is, path, "width");
  const std::size_t h = header_number(is, path, "height");
  const std::size_t maxval = header_number(is, path, "maxval");
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw std::runtime_error(path.string() + ": unsupported PGM header");
  }
  const std::size_t bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(w * h * bytes);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw std::runtime_error(path.string() + ": truncated PGM");
  std::vector<double> data(w * h);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const unsigned v = bytes == 2 ? (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1] : raw[i];
    data[i] = std::min(1.0, static_cast<double>(v) / static_cast<double>(maxval));
  }
  return Tensor(Shape{1, h, w}, std::move(data));
}

void write_pgm(const std::filesystem::path& path, const Tensor& image, bool sixteen_bit) {
  const Shape& s = image.shape();
  if (!(s.size() == 2 || (s.size() == 3 && s[0] == 1))) {
    throw std::invalid_argument("write_pgm: expected a single-channel image, got " + shape_str(s));
  }
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const unsigned maxval = sixteen_bit ? 65535 : 255;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << w << ' ' << h << '\n' << maxval << '\n';
  std::vector<unsigned char> raw;
  raw.reserve(w * h * (sixteen_bit ? 2 : 1));
  for (double v : image.values()) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
    if (sixteen_bit) raw.push_back(static_cast<unsigned char>(q >> 8));
    raw.push_back(static_cast<unsigned char>(q & 0xff));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace afflow
