#pragma once

// Paired (corrupted, clean) datasets on disk:
//   manifest.tsv          one line per pair: id kind A T phi0 f seed
//   {id}_corrupt.aft      1 x S x S corrupted image
//   {id}_clean.aft        1 x S x S clean image

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afflow/sim.hpp"
#include "afflow/tensor.hpp"

namespace afflow {

struct SimConfig {
  std::size_t side = 64;
  std::size_t phantoms = 16;  // synthetic clean images when no input dir
  std::size_t variants = 1;   // corrupted versions per clean image
  MotionKind kind = MotionKind::Sinusoidal;
  double amplitude_min = 0.5;
  double amplitude_max = 2.0;
  double period_min = 8.0;
  double period_max = 24.0;
  double fraction = 0.6;
  std::uint64_t seed = 1;
};

struct PairRecord {
  std::string id;
  MotionSpec motion;
};

struct Pair {
  std::string id;
  Tensor corrupt;
  Tensor clean;
};

// Centre-crops to a square and area-resamples to side x side.
Tensor crop_and_resize(const Tensor& image, std::size_t side);

// Clean images come from the *.pgm files of input_dir (sorted by name;
// unreadable files are skipped with a warning) or, when input_dir is empty,
// from config.phantoms random phantoms. Output is a pure function of
// (inputs, config). Throws if no pair could be produced.
std::vector<PairRecord> make_dataset(const std::filesystem::path& input_dir, const SimConfig& config,
                                     const std::filesystem::path& out_dir);

std::vector<PairRecord> read_manifest(const std::filesystem::path& dir);
std::vector<Pair> load_pairs(const std::filesystem::path& dir);

}  // namespace afflow
