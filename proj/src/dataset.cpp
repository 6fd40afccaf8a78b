#include "afflow/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "afflow/log.hpp"
#include "afflow/parallel.hpp"
#include "afflow/pgm.hpp"
#include "afflow/phantom.hpp"
#include "afflow/rng.hpp"
#include "afflow/tensor_io.hpp"

namespace afflow {

namespace {

// Box-filter resampling of one axis: output cell i averages the source over
// [i * n / m, (i + 1) * n / m).
std::vector<double> resample_axis(const std::vector<double>& src, std::size_t rows, std::size_t n, std::size_t m) {
  std::vector<double> out(rows * m, 0.0);
  const double ratio = static_cast<double>(n) / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double lo = i * ratio, hi = (i + 1) * ratio;
    for (auto j = static_cast<std::size_t>(lo); j < n && static_cast<double>(j) < hi; ++j) {
      const double wgt = (std::min(hi, j + 1.0) - std::max(lo, double(j))) / ratio;
      if (wgt <= 0.0) continue;
      for (std::size_t r = 0; r < rows; ++r) out[r * m + i] += wgt * src[r * n + j];
    }
  }
  return out;
}

std::vector<double> transpose_rows(const std::vector<double>& a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(a.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

struct Source {
  std::string stem;
  Tensor image;
};

}  // namespace

Tensor crop_and_resize(const Tensor& image, std::size_t side) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 1) throw std::invalid_argument("crop_and_resize: expected 1 x H x W");
  const std::size_t H = s[1], W = s[2], n = std::min(H, W);
  const std::size_t y0 = (H - n) / 2, x0 = (W - n) / 2;
  std::vector<double> sq(n * n);
  const auto v = image.values();
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) sq[y * n + x] = v[(y0 + y) * W + x0 + x];
  if (n == side) return Tensor(Shape{1, side, side}, std::move(sq));
  auto rows = resample_axis(sq, n, n, side);               // n x side
  auto cols = resample_axis(transpose_rows(rows, n, side), side, n, side);  // side x side, transposed
  return Tensor(Shape{1, side, side}, transpose_rows(cols, side, side));
}

std::vector<PairRecord> make_dataset(const std::filesystem::path& input_dir, const SimConfig& cfg,
                                     const std::filesystem::path& out_dir) {
  if (!is_power_of_two(cfg.side)) throw std::invalid_argument("image side must be a power of two");
  if (cfg.variants == 0) throw std::invalid_argument("variants must be >= 1");
  if (cfg.amplitude_min > cfg.amplitude_max || cfg.period_min > cfg.period_max) {
    throw std::invalid_argument("empty amplitude or period range");
  }

  std::vector<Source> sources;
  if (!input_dir.empty()) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(input_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        sources.push_back({f.stem().string(), crop_and_resize(read_pgm(f), cfg.side)});
      } catch (const std::exception& ex) {
        logging::warn(fmt::format("skipping {}: {}", f.string(), ex.what()));
      }
    }
  } else {
    for (std::size_t k = 0; k < cfg.phantoms; ++k) {
      Rng rng(derive_seed(cfg.seed, (1ULL << 32) + k));
      sources.push_back({fmt::format("phantom{:04}", k), random_phantom(cfg.side, rng)});
    }
  }
  if (sources.empty()) throw std::runtime_error("dataset is empty: no readable clean images");

  std::filesystem::create_directories(out_dir);
  const std::size_t total = sources.size() * cfg.variants;
  std::vector<PairRecord> records(total);
  parallel_for(0, total, [&](std::size_t i) {
    const Source& src = sources[i / cfg.variants];
    MotionSpec m;
    m.kind = cfg.kind;
    m.fraction = cfg.fraction;
    m.seed = derive_seed(cfg.seed, i);
    Rng rng(m.seed);
    m.amplitude = rng.uniform(cfg.amplitude_min, cfg.amplitude_max);
    m.period = rng.uniform(cfg.period_min, cfg.period_max);
    m.phase0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const std::string id = fmt::format("{}_v{}", src.stem, i % cfg.variants);
    const Tensor corrupt = corrupt_kspace(src.image, make_trajectory(m, cfg.side));
    save_aft(out_dir / (id + "_corrupt.aft"), corrupt);
    save_aft(out_dir / (id + "_clean.aft"), src.image);
    records[i] = {id, m};
  });

  std::ofstream manifest(out_dir / "manifest.tsv", std::ios::binary);
  for (const PairRecord& r : records) {
    manifest << fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\n", r.id, to_string(r.motion.kind), r.motion.amplitude,
                            r.motion.period, r.motion.phase0, r.motion.fraction, r.motion.seed);
  }
  if (!manifest) throw std::runtime_error("failed writing manifest in " + out_dir.string());
  return records;
}

std::vector<PairRecord> read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.tsv");
  if (!is) throw std::runtime_error("no manifest.tsv in " + dir.string());
  std::vector<PairRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    PairRecord r;
    std::string kind;
    if (!(ls >> r.id >> kind >> r.motion.amplitude >> r.motion.period >> r.motion.phase0 >> r.motion.fraction >>
          r.motion.seed)) {
      throw std::runtime_error(fmt::format("{}/manifest.tsv:{}: malformed line", dir.string(), lineno));
    }
    r.motion.kind = motion_kind_from_string(kind);
    out.push_back(std::move(r));
  }
  if (out.empty()) throw std::runtime_error("manifest in " + dir.string() + " lists no pairs");
  return out;
}

std::vector<Pair> load_pairs(const std::filesystem::path& dir) {
  std::vector<Pair> pairs;
  for (const PairRecord& r : read_manifest(dir)) {
    Pair p{r.id, load_aft(dir / (r.id + "_corrupt.aft")), load_aft(dir / (r.id + "_clean.aft"))};
    if (p.corrupt.shape() != p.clean.shape()) throw std::runtime_error("pair " + r.id + " has mismatched shapes");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace afflow
