#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "otas/errors.hpp"
#include "otas/loss.hpp"
#include "otas/model.hpp"
#include "otas/synth.hpp"
#include "otas/train.hpp"

namespace otas {

/// Flat key=value run configuration shared by every subcommand.
struct RunConfig {
  ModelConfig model;  // input_dim and num_classes come from the data
  LossConfig loss;
  TrainOptions train;
  double theta = 0.9;
  double sigma = 1.0 / 16;
  std::string mode = "semi";
  double frame_interval_ms = 1000.0 / 15;
  bool online_gru_rerun = false;
  SynthConfig synth;

  RunConfig() { model.sync(); }

  void validate() const {
    loss.validate();
    if (!(theta >= 0 && theta <= 1)) throw ConfigError("theta must be in [0,1]");
    if (!(sigma > 0 && sigma < 1)) throw ConfigError("sigma must be in (0,1)");
    if (mode != "online" && mode != "semi") throw ConfigError("mode must be online or semi");
    if (!(train.lr > 0)) throw ConfigError("lr must be positive");
    if (!(frame_interval_ms > 0)) throw ConfigError("frame_interval_ms must be positive");
    if (model.use_cfa) model.cfa.validate();
    synth.validate();
  }
};

namespace detail {

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  if constexpr (std::is_floating_point_v<N>) {
    std::size_t used = 0;
    try {
      out = static_cast<N>(std::stod(v, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("key '" + key + "': '" + v + "' is not a number");
    return out;
  } else {
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
      throw ConfigError("key '" + key + "': '" + v + "' is not a non-negative integer");
    return out;
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

inline std::string fmt(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<std::pair<std::string, Field>>& fields() {
  using C = RunConfig;
  static const std::vector<std::pair<std::string, Field>> f = [] {
    std::vector<std::pair<std::string, Field>> v;
    auto sz = [&](const char* k, std::size_t& (*ref)(C&)) {
      v.push_back({k, {[ref, k](C& c, const std::string& s) { ref(c) = parse_number<std::size_t>(k, s); },
                       [ref](const C& c) { return std::to_string(ref(const_cast<C&>(c))); }}});
    };
    auto u64 = [&](const char* k, std::uint64_t& (*ref)(C&)) {
      v.push_back({k, {[ref, k](C& c, const std::string& s) { ref(c) = parse_number<std::uint64_t>(k, s); },
                       [ref](const C& c) { return std::to_string(ref(const_cast<C&>(c))); }}});
    };
    auto dbl = [&](const char* k, double& (*ref)(C&)) {
      v.push_back({k, {[ref, k](C& c, const std::string& s) { ref(c) = parse_number<double>(k, s); },
                       [ref](const C& c) { return fmt(ref(const_cast<C&>(c))); }}});
    };
    auto flag = [&](const char* k, bool& (*ref)(C&)) {
      v.push_back({k, {[ref, k](C& c, const std::string& s) { ref(c) = parse_bool(k, s); },
                       [ref](const C& c) { return std::string(ref(const_cast<C&>(c)) ? "true" : "false"); }}});
    };
    sz("w", [](C& c) -> std::size_t& { return c.model.window; });
    sz("hidden_dim", [](C& c) -> std::size_t& { return c.model.hidden_dim; });
    sz("iterations", [](C& c) -> std::size_t& { return c.model.cfa.iterations; });
    sz("heads", [](C& c) -> std::size_t& { return c.model.cfa.attn_heads; });
    sz("td_heads", [](C& c) -> std::size_t& { return c.model.cfa.decoder_heads; });
    sz("td_layers", [](C& c) -> std::size_t& { return c.model.cfa.decoder_layers; });
    sz("window_count", [](C& c) -> std::size_t& { return c.model.cfa.window_count; });
    sz("ffn_mult", [](C& c) -> std::size_t& { return c.model.cfa.ffn_mult; });
    flag("pre_norm", [](C& c) -> bool& { return c.model.cfa.pre_norm; });
    sz("tcn_layers", [](C& c) -> std::size_t& { return c.model.tcn_layers; });
    sz("tcn_kernel", [](C& c) -> std::size_t& { return c.model.tcn_kernel; });
    flag("use_gru", [](C& c) -> bool& { return c.model.use_gru; });
    flag("use_cfa", [](C& c) -> bool& { return c.model.use_cfa; });
    flag("use_memory", [](C& c) -> bool& { return c.model.use_memory; });
    dbl("lambda", [](C& c) -> double& { return c.loss.lambda; });
    dbl("tau", [](C& c) -> double& { return c.loss.tau; });
    dbl("lr", [](C& c) -> double& { return c.train.lr; });
    sz("epochs", [](C& c) -> std::size_t& { return c.train.epochs; });
    dbl("theta", [](C& c) -> double& { return c.theta; });
    dbl("sigma", [](C& c) -> double& { return c.sigma; });
    v.push_back({"mode", {[](C& c, const std::string& s) { c.mode = s == "semi-online" ? "semi" : s; },
                          [](const C& c) { return c.mode; }}});
    u64("seed", [](C& c) -> std::uint64_t& { return c.train.seed; });
    dbl("frame_interval_ms", [](C& c) -> double& { return c.frame_interval_ms; });
    flag("online_gru_rerun", [](C& c) -> bool& { return c.online_gru_rerun; });
    sz("activities", [](C& c) -> std::size_t& { return c.synth.activities; });
    sz("actions", [](C& c) -> std::size_t& { return c.synth.actions; });
    sz("input_dim", [](C& c) -> std::size_t& { return c.synth.input_dim; });
    sz("train_videos", [](C& c) -> std::size_t& { return c.synth.train_videos; });
    sz("test_videos", [](C& c) -> std::size_t& { return c.synth.test_videos; });
    sz("min_length", [](C& c) -> std::size_t& { return c.synth.min_length; });
    sz("max_length", [](C& c) -> std::size_t& { return c.synth.max_length; });
    sz("template_length", [](C& c) -> std::size_t& { return c.synth.template_length; });
    dbl("skip_prob", [](C& c) -> double& { return c.synth.skip_prob; });
    dbl("swap_prob", [](C& c) -> double& { return c.synth.swap_prob; });
    dbl("duration_sigma", [](C& c) -> double& { return c.synth.duration_sigma; });
    dbl("separation", [](C& c) -> double& { return c.synth.separation; });
    dbl("noise", [](C& c) -> double& { return c.synth.noise; });
    dbl("drift", [](C& c) -> double& { return c.synth.drift; });
    dbl("overlap", [](C& c) -> double& { return c.synth.overlap; });
    u64("data_seed", [](C& c) -> std::uint64_t& { return c.synth.seed; });
    return v;
  }();
  return f;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& [name, _] : detail::fields()) k.push_back(name);
  return k;
}

/// Applies one key; unknown keys are rejected by name.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [name, f] : detail::fields())
    if (name == key) {
      f.set(c, value);
      c.model.sync();
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

inline std::string format_run_config(const RunConfig& c) {
  std::string out;
  for (const auto& [name, f] : detail::fields()) out += name + "=" + f.get(c) + "\n";
  return out;
}

}  // namespace otas
