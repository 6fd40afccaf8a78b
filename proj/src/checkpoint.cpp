#include "afflow/checkpoint.hpp"

#include <fmt/format.h>

#include <fstream>
#include <map>
#include <stdexcept>

#include "afflow/config.hpp"
#include "afflow/tensor_io.hpp"

namespace afflow {

namespace {

constexpr const char* kMagic = "AFCK1";

std::string read_line(std::istream& is, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path.string() + ": truncated checkpoint header");
  return line;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainState* state) {
  std::map<std::string, std::string> header = model_config_values(model.config());
  header["actnorm.initialized"] = model.actnorm_initialized() ? "1" : "0";
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, t] : model.params()) tensors.emplace(name, t);
  if (state) {
    header["state.seed"] = fmt::format("{}", state->seed);
    header["state.step"] = fmt::format("{}", state->step);
    header["state.consecutive_skips"] = fmt::format("{}", state->consecutive_skips);
    header["adam.t"] = fmt::format("{}", state->adam.t);
    header["adam.lr"] = fmt::format("{}", state->adam.config.lr);
    header["adam.beta1"] = fmt::format("{}", state->adam.config.beta1);
    header["adam.beta2"] = fmt::format("{}", state->adam.config.beta2);
    header["adam.eps"] = fmt::format("{}", state->adam.config.eps);
    for (const auto& [name, m] : state->adam.m) tensors.emplace("adam/m/" + name, Tensor(Shape{m.size()}, m));
    for (const auto& [name, v] : state->adam.v) tensors.emplace("adam/v/" + name, Tensor(Shape{v.size()}, v));
  }

  // Write to a sibling and rename so an interrupted save never leaves a
  // truncated checkpoint behind.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << kMagic << '\n';
    for (const auto& [k, v] : header) os << k << " = " << v << '\n';
    os << "tensors " << tensors.size() << '\n';
    for (const auto& [name, t] : tensors) {
      os << name << '\n';
      write_aft(os, t);
    }
    if (!os) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  if (read_line(is, path) != kMagic) throw std::runtime_error(path.string() + ": not an AFCK checkpoint");

  std::map<std::string, std::string> model_keys, other;
  std::size_t count = 0;
  for (;;) {
    const std::string line = read_line(is, path);
    if (line.starts_with("tensors ")) {
      count = std::stoul(line.substr(8));
      break;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw std::runtime_error(path.string() + ": malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    (key.starts_with("flow.") || key.starts_with("encoder.") ? model_keys : other)[key] = value;
  }
  std::map<std::string, Tensor> tensors;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = read_line(is, path);
    tensors[name] = read_aft(is);
  }

  LoadedCheckpoint out{Model(model_config_from_values(model_keys), 0), std::nullopt};
  for (const auto& [name, param] : out.model.params()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error(path.string() + ": missing parameter " + name);
    if (it->second.shape() != param.shape()) {
      throw std::runtime_error(fmt::format("{}: parameter {} has shape {}, configuration implies {}", path.string(),
                                           name, shape_str(it->second.shape()), shape_str(param.shape())));
    }
    Tensor dst = param;
    std::copy(it->second.values().begin(), it->second.values().end(), dst.mutable_values().begin());
    tensors.erase(it);
  }
  out.model.set_actnorm_initialized(other.count("actnorm.initialized") && other.at("actnorm.initialized") == "1");

  if (other.count("state.step")) {
    TrainState st;
    st.seed = std::stoull(other.at("state.seed"));
    st.step = std::stoull(other.at("state.step"));
    st.consecutive_skips = std::stoul(other.at("state.consecutive_skips"));
    st.adam.t = std::stoull(other.at("adam.t"));
    st.adam.config.lr = std::stod(other.at("adam.lr"));
    st.adam.config.beta1 = std::stod(other.at("adam.beta1"));
    st.adam.config.beta2 = std::stod(other.at("adam.beta2"));
    st.adam.config.eps = std::stod(other.at("adam.eps"));
    for (auto& [name, t] : tensors) {
      const bool is_m = name.starts_with("adam/m/"), is_v = name.starts_with("adam/v/");
      if (!is_m && !is_v) throw std::runtime_error(path.string() + ": unexpected tensor " + name);
      (is_m ? st.adam.m : st.adam.v)[name.substr(7)].assign(t.values().begin(), t.values().end());
    }
    out.state = std::move(st);
  } else if (!tensors.empty()) {
    throw std::runtime_error(path.string() + ": unexpected tensor " + tensors.begin()->first);
  }
  return out;
}

}  // namespace afflow
