#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/loss.hpp"
#include "cellinr/nn/networks.hpp"
#include "cellinr/sampler.hpp"
#include "cellinr/volume.hpp"
#include "cellinr/volume_io.hpp"

namespace cellinr {

// Where the TV neighbour predictions come from: extra blind-convolution
// predictions at +1 voxel offsets, or direct centre queries of the fine net
// (the field that render_volume outputs).
enum class TvSource { blind, center };

inline const char* to_string(TvSource s) { return s == TvSource::blind ? "blind" : "center"; }
inline TvSource parse_tv_source(const std::string& s) {
  if (s == "blind") return TvSource::blind;
  if (s == "center") return TvSource::center;
  throw PreconditionError("unknown tv source '" + s + "'");
}

inline constexpr std::int64_t kMaxItersCap = 500000;

struct TrainConfig {
  int epsilon = 10;
  double h = 1.0;
  int n_samples = 27;
  double d_ex = 0.25;
  int batch_size = 4096;
  std::int64_t max_iters = 50000;
  double lr_start = 2e-3;
  double lr_end = 2e-5;
  double weight_decay = 1e-6;
  double lambda_tv = 0.15;
  double sigma_s = 1.0;
  int otsu_bins = 256;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_interval = 1000;
  std::int64_t log_interval = 100;
  SignalLossMode signal_loss_mode = SignalLossMode::masked;
  TvSource tv_source = TvSource::blind;
  int hidden_layers = 8;
  int hidden_width = 256;
  int kernel_inject_layer = 7;
  // Ablation switches: without structure amplification the mask is all ones;
  // without the blind spot the fine net is fitted directly at each voxel.
  bool structure_amplification = true;
  bool blind_spot = true;
  bool plateau_stop = false;
  std::int64_t plateau_window = 2000;
  double plateau_tol = 1e-4;
  // Targets per work item. Fixes RNG streams and reduction order, so results do
  // not depend on `workers`.
  int task_targets = 32;
  int workers = 1;

  [[nodiscard]] nn::NetConfig net() const { return {epsilon, hidden_layers, hidden_width, kernel_inject_layer}; }
  [[nodiscard]] SamplerParams sampler() const { return {h, n_samples, d_ex}; }

  void validate() const {
    require(epsilon >= 1, "epsilon must be >= 1");
    require(h > 0, "h must be > 0");
    require(n_samples >= 1, "n_samples must be >= 1");
    require(d_ex >= 0 && d_ex < h, "d_ex must lie in [0, h)");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(max_iters >= 0 && max_iters <= kMaxItersCap, "max_iters must lie in [0, 500000]");
    require(lr_start > 0 && lr_end > 0 && lr_start >= lr_end, "need lr_start >= lr_end > 0");
    require(weight_decay >= 0, "weight_decay must be >= 0");
    require(lambda_tv >= 0, "lambda_tv must be >= 0");
    require(sigma_s >= 0, "sigma_s must be >= 0");
    require(otsu_bins >= 2, "otsu_bins must be >= 2");
    require(checkpoint_interval >= 1 && log_interval >= 1, "intervals must be >= 1");
    require(hidden_layers >= 1 && hidden_width >= 1, "network shape must be positive");
    require(kernel_inject_layer >= 0 && kernel_inject_layer <= hidden_layers, "kernel_inject_layer out of range");
    require(plateau_window >= 1 && plateau_tol >= 0, "bad plateau rule");
    require(task_targets >= 1, "task_targets must be >= 1");
    require(workers >= 1, "workers must be >= 1");
  }
};

namespace detail {

struct ConfigField {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
  bool affects_result = true;
};

template <class V>
V parse_number(const std::string& key, const std::string& text) {
  std::istringstream s(text);
  V v{};
  if (!(s >> v) || !(s >> std::ws).eof()) throw PreconditionError("bad value for " + key + ": '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw PreconditionError("bad boolean for " + key + ": '" + text + "'");
}

template <class V>
std::string print_number(V v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
#define CELLINR_NUM(name)                                                                   \
  {#name, {[](const TrainConfig& c) { return print_number(c.name); },                       \
           [](TrainConfig& c, const std::string& v) { c.name = parse_number<decltype(c.name)>(#name, v); }}}
#define CELLINR_BOOL(name)                                                                  \
  {#name, {[](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); },     \
           [](TrainConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }}}
  static const std::vector<std::pair<std::string, ConfigField>> fields = {
      CELLINR_NUM(epsilon), CELLINR_NUM(h), CELLINR_NUM(n_samples), CELLINR_NUM(d_ex), CELLINR_NUM(batch_size),
      CELLINR_NUM(max_iters), CELLINR_NUM(lr_start), CELLINR_NUM(lr_end), CELLINR_NUM(weight_decay),
      CELLINR_NUM(lambda_tv), CELLINR_NUM(sigma_s), CELLINR_NUM(otsu_bins), CELLINR_NUM(seed),
      CELLINR_NUM(checkpoint_interval), CELLINR_NUM(log_interval),
      {"signal_loss_mode",
       {[](const TrainConfig& c) { return std::string(to_string(c.signal_loss_mode)); },
        [](TrainConfig& c, const std::string& v) { c.signal_loss_mode = parse_signal_loss_mode(v); }}},
      {"tv_source",
       {[](const TrainConfig& c) { return std::string(to_string(c.tv_source)); },
        [](TrainConfig& c, const std::string& v) { c.tv_source = parse_tv_source(v); }}},
      CELLINR_NUM(hidden_layers), CELLINR_NUM(hidden_width), CELLINR_NUM(kernel_inject_layer),
      CELLINR_BOOL(structure_amplification), CELLINR_BOOL(blind_spot), CELLINR_BOOL(plateau_stop),
      CELLINR_NUM(plateau_window), CELLINR_NUM(plateau_tol), CELLINR_NUM(task_targets),
      {"workers",
       {[](const TrainConfig& c) { return print_number(c.workers); },
        [](TrainConfig& c, const std::string& v) { c.workers = parse_number<int>("workers", v); }, false}},
  };
#undef CELLINR_NUM
#undef CELLINR_BOOL
  return fields;
}

}  // namespace detail

inline std::map<std::string, std::string> to_key_values(const TrainConfig& c) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, f] : detail::config_fields()) kv[k] = f.get(c);
  return kv;
}

// Applies key/value overrides; unknown keys are rejected.
inline void apply_key_values(TrainConfig& c, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    bool found = false;
    for (const auto& [name, f] : detail::config_fields())
      if (name == k) {
        f.set(c, v);
        found = true;
        break;
      }
    if (!found) throw PreconditionError("unknown config key '" + k + "'");
  }
}

// Human-readable `key = value` document in field order.
inline std::string serialize(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, f] : detail::config_fields()) out += k + " = " + f.get(c) + "\n";
  return out;
}

inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  apply_key_values(base, detail::read_key_values(in));
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

// Hash over every field that influences the trained result (`workers` excluded).
inline std::uint64_t config_hash(const TrainConfig& c) {
  Fnv1a h;
  for (const auto& [k, f] : detail::config_fields())
    if (f.affects_result) {
      h.update(k);
      h.update(f.get(c));
    }
  return h.digest();
}

}  // namespace cellinr
