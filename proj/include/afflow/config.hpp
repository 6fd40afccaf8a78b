#pragma once

// Run configuration as "section.key = value" text. Files may contain blank
// lines and '#' comments; unknown keys and malformed values are rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "afflow/dataset.hpp"
#include "afflow/model.hpp"
#include "afflow/train.hpp"

namespace afflow {

struct RestoreConfig {
  double tau = 0.0;
  std::string checkpoint;
  std::string input;
};

struct EvalConfig {
  std::string data;
  std::string restored;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string sim_input;  // directory of clean PGMs; empty for phantoms
  SimConfig sim;
  ModelConfig model;
  TrainConfig train;
  RestoreConfig restore;
  EvalConfig eval;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Both return the keys that were assigned, in file order.
  std::vector<std::string> parse(const std::string& text, const std::string& origin = "<config>");
  std::vector<std::string> load_file(const std::filesystem::path& path);
  // Every key, sorted, one "key = value" line each.
  std::string to_text() const;
};

// Model-only subset ("flow.*", "encoder.*") used inside checkpoints.
std::map<std::string, std::string> model_config_values(const ModelConfig& m);
ModelConfig model_config_from_values(const std::map<std::string, std::string>& values);

}  // namespace afflow
