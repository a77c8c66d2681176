#pragma once

// Declarative run configuration shared by every CLI subcommand. Loaded from
// a JSON object; unknown keys are rejected so typos fail loudly.

#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turbotest/core.hpp"
#include "turbotest/engine.hpp"
#include "turbotest/eval.hpp"
#include "turbotest/label.hpp"
#include "turbotest/learn/gbdt.hpp"
#include "turbotest/learn/mlp.hpp"
#include "turbotest/learn/model_file.hpp"
#include "turbotest/synth.hpp"
#include "turbotest/util.hpp"

namespace turbotest {

struct SweepConfig {
  std::vector<std::string> bbr{"1", "2", "3", "5", "7"};
  std::vector<std::string> static_caps{"10MB", "25MB", "50MB", "100MB", "250MB", "1GB"};
  std::vector<std::string> tsh{"20", "25", "30", "35"};
  std::vector<std::string> cis{"0.6", "0.8", "0.85", "0.9", "0.95", "1.0"};
  int tsh_window_ms = heuristics::kDefaultTshWindowMs;
  double cis_fraction = heuristics::kDefaultCisFraction;
};

struct SelectConfig {
  double bound = eval::kDefaultErrorBound;
  std::vector<double> percentiles = eval::kDefaultPercentiles;
  /// Select and report on the same traces instead of disjoint halves.
  bool in_sample = false;
};

struct RunConfig {
  std::uint64_t seed = 1;
  synth::GenSpec synth;
  learn::GbdtParams gbdt;
  learn::MlpParams mlp;
  std::vector<double> epsilons = label::kDefaultEpsilons;
  int stride_ms = kStrideMs;
  /// 1 labels with the regressor itself; k >= 2 cross-fits over k folds.
  std::size_t label_folds = 1;
  bool labels_with_features = false;
  engine::GuardConfig guard;
  SweepConfig sweep;
  SelectConfig select;

  void validate() const {
    synth.validate();
    gbdt.validate();
    mlp.validate();
    if (epsilons.empty()) throw DataError("config: epsilons must not be empty");
    for (double e : epsilons) {
      if (!(e > 0.0)) throw DataError("config: epsilons must be positive");
    }
    if (stride_ms <= 0 || stride_ms % kWindowMs != 0) throw DataError("config: stride_ms must be a positive multiple of 100");
    if (label_folds < 1) throw DataError("config: label_folds must be >= 1");
    if (!(guard.max_cov > 0.0) || guard.window_ms < kWindowMs) throw DataError("config: guard settings invalid");
  }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw DataError("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw DataError("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void take(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw DataError("config: bad value for " + where + "." + key);
  }
}

inline std::string_view mode_name(synth::Mode m) { return m == synth::Mode::kBalanced ? "balanced" : "natural"; }

inline synth::Mode parse_mode(const std::string& s) {
  if (s == "balanced") return synth::Mode::kBalanced;
  if (s == "natural") return synth::Mode::kNatural;
  throw DataError("config: synth.mode must be 'balanced' or 'natural'");
}

inline void read_synth(const json& j, synth::GenSpec& g) {
  check_keys(j,
             {"n_traces", "seed", "mode", "preset", "tier_weights", "capacity_min_mbps", "capacity_max_mbps",
              "rtt_bin_weights", "rtt_min_ms", "rtt_max_ms", "queue_inflation_min", "queue_inflation_max",
              "ramp_tau_min_s", "ramp_tau_max_s", "ramp_rtt_exponent", "ar_coef_min", "ar_coef_max",
              "noise_rel_std_min", "noise_rel_std_max", "event_rate_hz", "level_shift_rate_hz", "loss_rate_min",
              "loss_rate_max", "pipe_full_rounds", "pipe_full_repeat_rounds", "duration_us", "cadence_ms",
              "cadence_jitter", "max_attempts"},
             "synth");
  // The preset sets the baseline; explicit keys then override it.
  if (auto it = j.find("preset"); it != j.end()) {
    const auto n = g.n_traces;
    const auto seed = g.seed;
    const auto mode = g.mode;
    g = synth::GenSpec::by_preset(it->get<std::string>());
    g.n_traces = n;
    g.seed = seed;
    g.mode = mode;
  }
  const std::string w = "synth";
  take(j, "n_traces", g.n_traces, w);
  take(j, "seed", g.seed, w);
  if (auto it = j.find("mode"); it != j.end()) g.mode = parse_mode(it->get<std::string>());
  if (auto it = j.find("tier_weights"); it != j.end()) {
    if (it->is_null()) g.tier_weights.reset();
    else g.tier_weights = it->get<std::array<double, kTierCount>>();
  }
  take(j, "capacity_min_mbps", g.capacity_min_mbps, w);
  take(j, "capacity_max_mbps", g.capacity_max_mbps, w);
  take(j, "rtt_bin_weights", g.rtt_bin_weights, w);
  take(j, "rtt_min_ms", g.rtt_min_ms, w);
  take(j, "rtt_max_ms", g.rtt_max_ms, w);
  take(j, "queue_inflation_min", g.queue_inflation_min, w);
  take(j, "queue_inflation_max", g.queue_inflation_max, w);
  take(j, "ramp_tau_min_s", g.ramp_tau_min_s, w);
  take(j, "ramp_tau_max_s", g.ramp_tau_max_s, w);
  take(j, "ramp_rtt_exponent", g.ramp_rtt_exponent, w);
  take(j, "ar_coef_min", g.ar_coef_min, w);
  take(j, "ar_coef_max", g.ar_coef_max, w);
  take(j, "noise_rel_std_min", g.noise_rel_std_min, w);
  take(j, "noise_rel_std_max", g.noise_rel_std_max, w);
  take(j, "event_rate_hz", g.event_rate_hz, w);
  take(j, "level_shift_rate_hz", g.level_shift_rate_hz, w);
  take(j, "loss_rate_min", g.loss_rate_min, w);
  take(j, "loss_rate_max", g.loss_rate_max, w);
  take(j, "pipe_full_rounds", g.pipe_full_rounds, w);
  take(j, "pipe_full_repeat_rounds", g.pipe_full_repeat_rounds, w);
  take(j, "duration_us", g.duration_us, w);
  take(j, "cadence_ms", g.cadence_ms, w);
  take(j, "cadence_jitter", g.cadence_jitter, w);
  take(j, "max_attempts", g.max_attempts, w);
}

inline json write_synth(const synth::GenSpec& g) {
  json j{{"n_traces", g.n_traces},
         {"seed", g.seed},
         {"mode", mode_name(g.mode)},
         {"preset", g.preset},
         {"tier_weights", g.tier_weights ? json(*g.tier_weights) : json(nullptr)},
         {"capacity_min_mbps", g.capacity_min_mbps},
         {"capacity_max_mbps", g.capacity_max_mbps},
         {"rtt_bin_weights", g.rtt_bin_weights},
         {"rtt_min_ms", g.rtt_min_ms},
         {"rtt_max_ms", g.rtt_max_ms},
         {"queue_inflation_min", g.queue_inflation_min},
         {"queue_inflation_max", g.queue_inflation_max},
         {"ramp_tau_min_s", g.ramp_tau_min_s},
         {"ramp_tau_max_s", g.ramp_tau_max_s},
         {"ramp_rtt_exponent", g.ramp_rtt_exponent},
         {"ar_coef_min", g.ar_coef_min},
         {"ar_coef_max", g.ar_coef_max},
         {"noise_rel_std_min", g.noise_rel_std_min},
         {"noise_rel_std_max", g.noise_rel_std_max},
         {"event_rate_hz", g.event_rate_hz},
         {"level_shift_rate_hz", g.level_shift_rate_hz},
         {"loss_rate_min", g.loss_rate_min},
         {"loss_rate_max", g.loss_rate_max},
         {"pipe_full_rounds", g.pipe_full_rounds},
         {"pipe_full_repeat_rounds", g.pipe_full_repeat_rounds},
         {"duration_us", g.duration_us},
         {"cadence_ms", g.cadence_ms},
         {"cadence_jitter", g.cadence_jitter},
         {"max_attempts", g.max_attempts}};
  return j;
}

inline void read_gbdt(const json& j, learn::GbdtParams& p) {
  check_keys(j, {"max_depth", "n_trees", "learning_rate", "min_samples_leaf", "subsample", "l2", "objective",
                 "rel_gamma", "seed"},
             "gbdt");
  const std::string w = "gbdt";
  take(j, "max_depth", p.max_depth, w);
  take(j, "n_trees", p.n_trees, w);
  take(j, "learning_rate", p.learning_rate, w);
  take(j, "min_samples_leaf", p.min_samples_leaf, w);
  take(j, "subsample", p.subsample, w);
  take(j, "l2", p.l2, w);
  if (auto it = j.find("objective"); it != j.end()) p.objective = learn::parse_objective(it->get<std::string>());
  take(j, "rel_gamma", p.rel_gamma, w);
  take(j, "seed", p.seed, w);
}

inline void read_mlp(const json& j, learn::MlpParams& p) {
  check_keys(j, {"hidden", "learning_rate", "batch_size", "epochs", "dropout", "weight_decay", "pos_weight", "seed"},
             "mlp");
  const std::string w = "mlp";
  take(j, "hidden", p.hidden, w);
  take(j, "learning_rate", p.learning_rate, w);
  take(j, "batch_size", p.batch_size, w);
  take(j, "epochs", p.epochs, w);
  take(j, "dropout", p.dropout, w);
  take(j, "weight_decay", p.weight_decay, w);
  take(j, "pos_weight", p.pos_weight, w);
  take(j, "seed", p.seed, w);
}

}  // namespace detail

/// Applies the keys present in `j` on top of `cfg`. A top-level "seed"
/// seeds the generator and both learners unless a section sets its own.
inline void apply_config(RunConfig& cfg, const nlohmann::json& j) {
  using detail::take;
  detail::check_keys(j, {"seed", "synth", "gbdt", "mlp", "epsilons", "stride_ms", "label_folds",
                         "labels_with_features", "guard", "sweep", "select"},
                     "config");
  if (auto it = j.find("seed"); it != j.end()) {
    take(j, "seed", cfg.seed, "config");
    cfg.synth.seed = cfg.gbdt.seed = cfg.mlp.seed = cfg.seed;
  }
  if (auto it = j.find("synth"); it != j.end()) detail::read_synth(*it, cfg.synth);
  if (auto it = j.find("gbdt"); it != j.end()) detail::read_gbdt(*it, cfg.gbdt);
  if (auto it = j.find("mlp"); it != j.end()) detail::read_mlp(*it, cfg.mlp);
  take(j, "epsilons", cfg.epsilons, "config");
  take(j, "stride_ms", cfg.stride_ms, "config");
  take(j, "label_folds", cfg.label_folds, "config");
  take(j, "labels_with_features", cfg.labels_with_features, "config");
  if (auto it = j.find("guard"); it != j.end()) {
    detail::check_keys(*it, {"enabled", "max_cov", "window_ms"}, "guard");
    take(*it, "enabled", cfg.guard.enabled, "guard");
    take(*it, "max_cov", cfg.guard.max_cov, "guard");
    take(*it, "window_ms", cfg.guard.window_ms, "guard");
  }
  if (auto it = j.find("sweep"); it != j.end()) {
    detail::check_keys(*it, {"bbr", "static", "tsh", "cis", "tsh_window_ms", "cis_fraction"}, "sweep");
    take(*it, "bbr", cfg.sweep.bbr, "sweep");
    take(*it, "static", cfg.sweep.static_caps, "sweep");
    take(*it, "tsh", cfg.sweep.tsh, "sweep");
    take(*it, "cis", cfg.sweep.cis, "sweep");
    take(*it, "tsh_window_ms", cfg.sweep.tsh_window_ms, "sweep");
    take(*it, "cis_fraction", cfg.sweep.cis_fraction, "sweep");
  }
  if (auto it = j.find("select"); it != j.end()) {
    detail::check_keys(*it, {"bound", "percentiles", "in_sample"}, "select");
    take(*it, "bound", cfg.select.bound, "select");
    take(*it, "percentiles", cfg.select.percentiles, "select");
    take(*it, "in_sample", cfg.select.in_sample, "select");
  }
  cfg.validate();
}

inline RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, path + ": " + e.what());
  }
  apply_config(cfg, j);
  return cfg;
}

/// Full resolved configuration; key order is fixed so the dump is canonical.
inline nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"synth", detail::write_synth(c.synth)},
          {"gbdt", learn::detail::to_json(c.gbdt)},
          {"mlp", learn::detail::to_json(c.mlp)},
          {"epsilons", c.epsilons},
          {"stride_ms", c.stride_ms},
          {"label_folds", c.label_folds},
          {"labels_with_features", c.labels_with_features},
          {"guard", {{"enabled", c.guard.enabled}, {"max_cov", c.guard.max_cov}, {"window_ms", c.guard.window_ms}}},
          {"sweep",
           {{"bbr", c.sweep.bbr},
            {"static", c.sweep.static_caps},
            {"tsh", c.sweep.tsh},
            {"cis", c.sweep.cis},
            {"tsh_window_ms", c.sweep.tsh_window_ms},
            {"cis_fraction", c.sweep.cis_fraction}}},
          {"select",
           {{"bound", c.select.bound}, {"percentiles", c.select.percentiles}, {"in_sample", c.select.in_sample}}}};
}

inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
  return buf;
}

}  // namespace turbotest
