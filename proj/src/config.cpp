#include "afflow/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace afflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument(fmt::format("{}: expected a non-negative integer, got '{}'", key, v));
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (v.empty() || pos != v.size()) throw std::invalid_argument(fmt::format("{}: expected a number, got '{}'", key, v));
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::invalid_argument(fmt::format("{}: expected true/false, got '{}'", key, v));
}

struct Binding {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <class M>
Binding size_binding(M m) {
  return {[m](const RunConfig& c) { return fmt::format("{}", m(c)); },
          [m](RunConfig& c, const std::string& k, const std::string& v) { m(c) = parse_u64(k, v); }};
}
template <class M>
Binding real_binding(M m) {
  return {[m](const RunConfig& c) { return fmt::format("{}", m(c)); },
          [m](RunConfig& c, const std::string& k, const std::string& v) { m(c) = parse_double(k, v); }};
}
template <class M>
Binding text_binding(M m) {
  return {[m](const RunConfig& c) { return m(c); },
          [m](RunConfig& c, const std::string&, const std::string& v) { m(c) = v; }};
}
template <class M>
Binding bool_binding(M m) {
  return {[m](const RunConfig& c) { return std::string(m(c) ? "true" : "false"); },
          [m](RunConfig& c, const std::string& k, const std::string& v) { m(c) = parse_bool(k, v); }};
}

#define AF_FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = {
      {"run.seed", size_binding(AF_FIELD(seed))},
      {"sim.input", text_binding(AF_FIELD(sim_input))},
      {"sim.side", size_binding(AF_FIELD(sim.side))},
      {"sim.phantoms", size_binding(AF_FIELD(sim.phantoms))},
      {"sim.variants", size_binding(AF_FIELD(sim.variants))},
      {"sim.kind",
       {[](const RunConfig& c) { return to_string(c.sim.kind); },
        [](RunConfig& c, const std::string&, const std::string& v) { c.sim.kind = motion_kind_from_string(v); }}},
      {"sim.amplitude_min", real_binding(AF_FIELD(sim.amplitude_min))},
      {"sim.amplitude_max", real_binding(AF_FIELD(sim.amplitude_max))},
      {"sim.period_min", real_binding(AF_FIELD(sim.period_min))},
      {"sim.period_max", real_binding(AF_FIELD(sim.period_max))},
      {"sim.fraction", real_binding(AF_FIELD(sim.fraction))},
      {"flow.levels", size_binding(AF_FIELD(model.flow.levels))},
      {"flow.steps", size_binding(AF_FIELD(model.flow.steps))},
      {"flow.hidden", size_binding(AF_FIELD(model.flow.hidden))},
      {"flow.lambda0", real_binding(AF_FIELD(model.flow.lambda0))},
      {"flow.decay", real_binding(AF_FIELD(model.flow.decay))},
      {"flow.eps_inv", real_binding(AF_FIELD(model.flow.eps_inv))},
      {"flow.in_channels", size_binding(AF_FIELD(model.flow.in_channels))},
      {"encoder.blocks", size_binding(AF_FIELD(model.encoder.blocks))},
      {"encoder.features", size_binding(AF_FIELD(model.encoder.features))},
      {"train.lr", real_binding(AF_FIELD(train.lr))},
      {"train.beta1", real_binding(AF_FIELD(train.beta1))},
      {"train.beta2", real_binding(AF_FIELD(train.beta2))},
      {"train.batch", size_binding(AF_FIELD(train.batch))},
      {"train.iters", size_binding(AF_FIELD(train.iters))},
      {"train.eval_interval", size_binding(AF_FIELD(train.eval_interval))},
      {"train.max_skips", size_binding(AF_FIELD(train.max_skips))},
      {"train.dequantize", bool_binding(AF_FIELD(train.dequantize))},
      {"train.data", text_binding(AF_FIELD(train.data))},
      {"train.heldout", text_binding(AF_FIELD(train.heldout))},
      {"restore.tau", real_binding(AF_FIELD(restore.tau))},
      {"restore.checkpoint", text_binding(AF_FIELD(restore.checkpoint))},
      {"restore.input", text_binding(AF_FIELD(restore.input))},
      {"eval.data", text_binding(AF_FIELD(eval.data))},
      {"eval.restored", text_binding(AF_FIELD(eval.restored))},
  };
  return table;
}

#undef AF_FIELD

const Binding& binding(const std::string& key) {
  const auto& t = bindings();
  auto it = t.find(key);
  if (it == t.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  return it->second;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { binding(key).set(*this, key, value); }

std::string RunConfig::get(const std::string& key) const { return binding(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, b] : bindings()) out.push_back(name);
    return out;
  }();
  return k;
}

std::vector<std::string> RunConfig::parse(const std::string& text, const std::string& origin) {
  std::vector<std::string> assigned;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(fmt::format("{}:{}: expected 'key = value'", origin, lineno));
    const std::string key = trim(line.substr(0, eq));
    try {
      set(key, trim(line.substr(eq + 1)));
      assigned.push_back(key);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(fmt::format("{}:{}: {}", origin, lineno, e.what()));
    }
  }
  return assigned;
}

std::vector<std::string> RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& key : keys()) out += key + " = " + get(key) + "\n";
  return out;
}

std::map<std::string, std::string> model_config_values(const ModelConfig& m) {
  RunConfig c;
  c.model = m;
  std::map<std::string, std::string> out;
  for (const auto& key : RunConfig::keys()) {
    if (key.starts_with("flow.") || key.starts_with("encoder.")) out[key] = c.get(key);
  }
  return out;
}

ModelConfig model_config_from_values(const std::map<std::string, std::string>& values) {
  RunConfig c;
  for (const auto& [key, value] : values) {
    if (!(key.starts_with("flow.") || key.starts_with("encoder."))) {
      throw std::invalid_argument("unexpected model config key '" + key + "'");
    }
    c.set(key, value);
  }
  for (const auto& [key, value] : model_config_values(c.model)) {
    if (!values.count(key)) throw std::invalid_argument("model config lacks '" + key + "'");
  }
  return c.model;
}

}  // namespace afflow
