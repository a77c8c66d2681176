#pragma once

// Seeded synthetic speed-test traces with known ground truth.
//
// The model is phenomenological: a saturating ramp toward a capacity C with
// AR(1) multiplicative noise, dropout/burst events and persistent level
// shifts. RTT inflates with utilisation, cwnd tracks rate x RTT and a
// BBR-style plateau detector drives the pipe-full counter.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "turbotest/core.hpp"
#include "turbotest/traceio.hpp"
#include "turbotest/util.hpp"

namespace turbotest::synth {

enum class Mode { kNatural, kBalanced };

struct GenSpec {
  std::size_t n_traces = 100;
  std::uint64_t seed = 1;
  Mode mode = Mode::kNatural;
  /// Natural mode: optional per-tier target proportions (rejection sampled).
  std::optional<std::array<double, kTierCount>> tier_weights;
  std::string preset = "default";

  double capacity_min_mbps = 1.0;
  double capacity_max_mbps = 1000.0;

  std::array<double, kRttBinCount> rtt_bin_weights{0.25, 0.25, 0.25, 0.15, 0.10};
  double rtt_min_ms = 4.0;
  double rtt_max_ms = 400.0;
  double queue_inflation_min = 0.05;
  double queue_inflation_max = 0.8;

  /// Ramp time constant: log-uniform draw scaled by (rtt / 40 ms)^exponent.
  double ramp_tau_min_s = 0.1;
  double ramp_tau_max_s = 2.5;
  double ramp_rtt_exponent = 0.5;

  double ar_coef_min = 0.85;
  double ar_coef_max = 0.97;
  double noise_rel_std_min = 0.02;
  double noise_rel_std_max = 0.25;

  double event_rate_hz = 0.1;  // dropouts and bursts
  double level_shift_rate_hz = 0.03;
  double loss_rate_min = 1e-5;
  double loss_rate_max = 5e-4;

  /// Plateau rule: no 25% growth of the max-filtered delivery rate over this
  /// many rounds registers a pipe-full event; later events need a full
  /// probing cycle of rounds.
  int pipe_full_rounds = 3;
  int pipe_full_repeat_rounds = 8;

  std::int64_t duration_us = kNominalDurationUs;
  int cadence_ms = 10;
  double cadence_jitter = 0.2;
  int max_attempts = 400;

  static GenSpec hard() {
    GenSpec s;
    s.preset = "hard";
    s.capacity_min_mbps = 1.0;
    s.capacity_max_mbps = 25.0;
    s.rtt_bin_weights = {0.0, 0.0, 0.2, 0.4, 0.4};
    s.ramp_tau_min_s = 0.8;
    s.ramp_tau_max_s = 4.0;
    s.ar_coef_min = 0.97;
    s.ar_coef_max = 0.995;
    s.noise_rel_std_min = 0.2;
    s.noise_rel_std_max = 0.45;
    s.event_rate_hz = 0.5;
    s.level_shift_rate_hz = 0.3;
    s.loss_rate_min = 1e-4;
    s.loss_rate_max = 3e-3;
    return s;
  }

  static GenSpec by_preset(const std::string& name) {
    if (name == "default") return GenSpec{};
    if (name == "hard") return hard();
    throw DataError("unknown generator preset '" + name + "'");
  }

  void validate() const {
    auto range = [](double lo, double hi, const char* what) {
      if (!(lo > 0.0) || !(hi >= lo)) throw DataError(std::string("generator range '") + what + "' is empty or nonpositive");
    };
    range(capacity_min_mbps, capacity_max_mbps, "capacity");
    range(rtt_min_ms, rtt_max_ms, "rtt");
    range(ramp_tau_min_s, ramp_tau_max_s, "ramp_tau");
    if (ar_coef_min < 0.0 || ar_coef_max >= 1.0 || ar_coef_max < ar_coef_min) throw DataError("ar_coef range invalid");
    if (noise_rel_std_min < 0.0 || noise_rel_std_max < noise_rel_std_min) throw DataError("noise range invalid");
    if (event_rate_hz < 0.0 || level_shift_rate_hz < 0.0) throw DataError("event rates must be nonnegative");
    if (duration_us <= 0 || cadence_ms <= 0) throw DataError("duration and cadence must be positive");
    double rtt_total = 0.0;
    for (double w : rtt_bin_weights) rtt_total += w;
    if (!(rtt_total > 0.0)) throw DataError("rtt_bin_weights must have positive mass");
    if (tier_weights) {
      double total = 0.0;
      for (double w : *tier_weights) total += w;
      if (!(total > 0.0)) throw DataError("tier_weights must have positive mass");
    }
  }
};

/// Per-trace draws; exposed for diagnostics and tests.
struct TraceParams {
  double capacity_mbps = 0.0;
  double base_rtt_ms = 0.0;
  double queue_inflation = 0.0;
  double ramp_tau_s = 0.0;
  double ar_coef = 0.0;
  double noise_rel_std = 0.0;
  double loss_rate = 0.0;
  struct Event {
    double start_s, end_s, multiplier;
    bool dropout;
  };
  std::vector<Event> events;
  struct Shift {
    double at_s, factor;
  };
  std::vector<Shift> shifts;
};

namespace detail {

inline constexpr std::array<double, kTierCount + 1> kTierBounds{1.0, 25.0, 100.0, 200.0, 400.0, 1e9};
inline constexpr std::array<double, kRttBinCount + 1> kRttBounds{0.0, 24.0, 52.0, 115.0, 234.0, 1e9};

inline TraceParams draw_params(const GenSpec& spec, Rng& rng, std::optional<int> target_tier) {
  TraceParams p;
  double cap_lo = spec.capacity_min_mbps;
  double cap_hi = spec.capacity_max_mbps;
  if (target_tier) {
    // Ramp and noise pull the realised mean below C, so allow some headroom.
    cap_lo = std::max(cap_lo, kTierBounds[*target_tier]);
    cap_hi = std::min(cap_hi, kTierBounds[*target_tier + 1] * 1.5);
    if (cap_hi < cap_lo) throw DataError("tier " + std::to_string(*target_tier) + " unreachable with capacity range");
  }
  p.capacity_mbps = rng.log_uniform(cap_lo, cap_hi);

  const std::size_t bin = rng.categorical(spec.rtt_bin_weights);
  const double rtt_lo = std::max(spec.rtt_min_ms, kRttBounds[bin]);
  const double rtt_hi = std::min(spec.rtt_max_ms, kRttBounds[bin + 1]);
  p.base_rtt_ms = rtt_hi > rtt_lo ? rng.log_uniform(rtt_lo, rtt_hi) : rtt_lo;
  p.queue_inflation = rng.uniform(spec.queue_inflation_min, spec.queue_inflation_max);

  const double tau = rng.log_uniform(spec.ramp_tau_min_s, spec.ramp_tau_max_s) *
                     std::pow(p.base_rtt_ms / 40.0, spec.ramp_rtt_exponent);
  p.ramp_tau_s = std::clamp(tau, spec.ramp_tau_min_s, spec.ramp_tau_max_s);
  p.ar_coef = rng.uniform(spec.ar_coef_min, spec.ar_coef_max);
  p.noise_rel_std = spec.noise_rel_std_max > 0.0
                        ? (spec.noise_rel_std_min > 0.0 ? rng.log_uniform(spec.noise_rel_std_min, spec.noise_rel_std_max)
                                                        : rng.uniform(0.0, spec.noise_rel_std_max))
                        : 0.0;
  p.loss_rate = rng.log_uniform(spec.loss_rate_min, spec.loss_rate_max);

  const double duration_s = static_cast<double>(spec.duration_us) * 1e-6;
  const std::uint64_t n_events = rng.poisson(spec.event_rate_hz * duration_s);
  for (std::uint64_t i = 0; i < n_events; ++i) {
    TraceParams::Event e{};
    e.start_s = rng.uniform(0.0, duration_s);
    e.dropout = rng.uniform() < 0.7;
    e.multiplier = e.dropout ? rng.uniform(0.1, 0.5) : rng.uniform(1.2, 1.6);
    e.end_s = e.start_s + (e.dropout ? rng.uniform(0.1, 0.6) : rng.uniform(0.05, 0.3));
    p.events.push_back(e);
  }
  const std::uint64_t n_shifts = rng.poisson(spec.level_shift_rate_hz * duration_s);
  for (std::uint64_t i = 0; i < n_shifts; ++i) {
    p.shifts.push_back({rng.uniform(0.0, duration_s), rng.log_uniform(0.6, 1.5)});
  }
  std::sort(p.shifts.begin(), p.shifts.end(), [](const auto& a, const auto& b) { return a.at_s < b.at_s; });
  return p;
}

/// BBR-style full-pipe estimator driven by round-level delivery rates.
class PlateauDetector {
 public:
  PlateauDetector(int first_rounds, int repeat_rounds) : first_rounds_(first_rounds), repeat_rounds_(repeat_rounds) {}

  /// Account bytes delivered up to time t; `rtt_s` sets round length.
  void observe(double t_s, double delivered_bytes, double rtt_s) {
    round_bytes_ += delivered_bytes;
    if (t_s - round_start_s_ < rtt_s) return;
    const double rate = round_bytes_ / std::max(t_s - round_start_s_, 1e-9);
    history_[static_cast<std::size_t>(rounds_ % history_.size())] = rate;
    ++rounds_;
    double max_bw = 0.0;
    for (std::size_t i = 0; i < std::min<std::uint64_t>(rounds_, history_.size()); ++i) max_bw = std::max(max_bw, history_[i]);
    if (max_bw >= 1.25 * full_bw_) {
      full_bw_ = max_bw;
      flat_rounds_ = 0;
    } else if (++flat_rounds_ >= (events_ == 0 ? first_rounds_ : repeat_rounds_)) {
      ++events_;
      flat_rounds_ = 0;
      full_bw_ = max_bw;
    }
    round_start_s_ = t_s;
    round_bytes_ = 0.0;
  }

  std::uint64_t events() const { return events_; }

 private:
  int first_rounds_;
  int repeat_rounds_;
  std::array<double, 10> history_{};
  std::uint64_t rounds_ = 0;
  double round_start_s_ = 0.0;
  double round_bytes_ = 0.0;
  double full_bw_ = 0.0;
  int flat_rounds_ = 0;
  std::uint64_t events_ = 0;
};

inline Trace render(const GenSpec& spec, const TraceParams& p, std::string id, Rng& rng) {
  const double duration_s = static_cast<double>(spec.duration_us) * 1e-6;
  const double tau = p.ramp_tau_s;
  // Integral of (1 - exp(-t/tau)) over [a, b].
  auto ramp_integral = [tau](double a, double b) {
    return (b - a) - tau * (std::exp(-a / tau) - std::exp(-b / tau));
  };

  std::vector<Snapshot> snaps;
  snaps.reserve(static_cast<std::size_t>(spec.duration_us / (spec.cadence_ms * 1000)) + 2);
  Snapshot cur;
  cur.rtt_us = std::max<std::int64_t>(1, std::llround(p.base_rtt_ms * 1000.0));
  cur.cwnd_bytes = 14600;
  snaps.push_back(cur);

  PlateauDetector detector(spec.pipe_full_rounds, spec.pipe_full_repeat_rounds);
  double noise = p.noise_rel_std * rng.normal();
  const double innovation = std::sqrt(std::max(0.0, 1.0 - p.ar_coef * p.ar_coef)) * p.noise_rel_std;
  double bytes_exact = 0.0;
  double t_prev = 0.0;
  std::size_t shift_idx = 0;
  double capacity = p.capacity_mbps;
  bool last = false;
  while (!last) {
    const double step_s = spec.cadence_ms * 1e-3 * (1.0 + spec.cadence_jitter * rng.uniform(-1.0, 1.0));
    double t = t_prev + step_s;
    if (t >= duration_s - 1e-4) {
      t = duration_s;
      last = true;
    }
    while (shift_idx < p.shifts.size() && p.shifts[shift_idx].at_s <= t) capacity *= p.shifts[shift_idx++].factor;

    double multiplier = 1.0;
    bool dropout = false;
    for (const auto& e : p.events) {
      if (t > e.start_s && t <= e.end_s) {
        multiplier *= e.multiplier;
        dropout = dropout || e.dropout;
      }
    }
    noise = p.ar_coef * noise + innovation * rng.normal();
    const double factor = std::max(0.05, 1.0 + noise) * multiplier;
    const double dt_s = t - t_prev;
    const double delivered = capacity * ramp_integral(t_prev, t) * factor * 1e6 / 8.0;  // bytes
    bytes_exact += delivered;
    const double rate_mbps = delivered * 8.0 / (dt_s * 1e6);
    const double utilisation = std::clamp(rate_mbps / p.capacity_mbps, 0.0, 2.0);

    const double rtt_ms = std::max(0.5 * p.base_rtt_ms, p.base_rtt_ms * (1.0 + p.queue_inflation * utilisation) *
                                                            (1.0 + 0.03 * rng.normal()) +
                                                            (dropout ? 0.3 * p.base_rtt_ms : 0.0));
    const double envelope = capacity * (1.0 - std::exp(-t / tau));
    const double cwnd = std::max(14600.0, 2.0 * envelope * 1e6 / 8.0 * rtt_ms * 1e-3 * (1.0 + 0.05 * rng.normal()));
    const double inflight = std::min(cwnd, rate_mbps * 1e6 / 8.0 * rtt_ms * 1e-3 * rng.uniform(0.9, 1.1));

    const double segments = delivered / 1460.0;
    const double loss = p.loss_rate * (dropout ? 60.0 : 1.0);
    const std::uint64_t lost = rng.poisson(segments * loss);
    detector.observe(t, delivered, rtt_ms * 1e-3);

    cur.t_us = last ? spec.duration_us : std::llround(t * 1e6);
    if (cur.t_us <= snaps.back().t_us) cur.t_us = snaps.back().t_us + 1;
    cur.bytes_acked = static_cast<std::uint64_t>(bytes_exact);
    cur.cwnd_bytes = static_cast<std::uint64_t>(cwnd);
    cur.bytes_in_flight = static_cast<std::uint64_t>(std::max(0.0, inflight));
    cur.rtt_us = std::max<std::int64_t>(1, std::llround(rtt_ms * 1000.0));
    cur.retrans += lost;
    cur.dup_acks += 3 * lost + rng.poisson(segments * p.loss_rate);
    cur.pipe_full = detector.events();
    snaps.push_back(cur);
    t_prev = t;
  }
  return Trace(std::move(id), std::move(snaps), spec.duration_us);
}

inline std::string trace_id(const GenSpec& spec, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return spec.preset + "-s" + std::to_string(spec.seed) + "-" + buf;
}

}  // namespace detail

struct GeneratedTrace {
  Trace trace;
  TraceParams params;
};

/// Deterministic in (spec, index); each index owns an independent stream.
inline GeneratedTrace gen_trace_detailed(const GenSpec& spec, std::size_t index) {
  spec.validate();
  Rng selector = Rng::derive({spec.seed, index, 0x7469657273ULL});
  std::optional<int> target;
  if (spec.mode == Mode::kBalanced) {
    target = static_cast<int>(index % kTierCount);
  } else if (spec.tier_weights) {
    target = static_cast<int>(selector.categorical(*spec.tier_weights));
  }
  const std::string id = detail::trace_id(spec, index);
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    Rng rng = Rng::derive({spec.seed, index, static_cast<std::uint64_t>(attempt)});
    TraceParams params = detail::draw_params(spec, rng, target);
    Trace trace = detail::render(spec, params, id, rng);
    if (!target || summarize(trace).speed_tier == *target) return {std::move(trace), std::move(params)};
  }
  throw DataError("trace " + id + ": could not realise speed tier " + std::to_string(*target) + " within " +
                  std::to_string(spec.max_attempts) + " attempts");
}

inline Trace gen_trace(const GenSpec& spec, std::size_t index) { return gen_trace_detailed(spec, index).trace; }

struct Corpus {
  std::vector<Trace> traces;
  std::vector<TraceSummary> summaries;
  std::string preset;
};

inline Corpus gen_corpus(const GenSpec& spec, unsigned jobs = 1) {
  spec.validate();
  std::vector<std::optional<Trace>> slots(spec.n_traces);
  parallel_for(spec.n_traces, jobs, [&](std::size_t i) { slots[i] = gen_trace(spec, i); });
  Corpus c;
  c.preset = spec.preset;
  c.traces.reserve(spec.n_traces);
  for (auto& s : slots) {
    c.summaries.push_back(summarize(*s));
    c.traces.push_back(std::move(*s));
  }
  return c;
}

inline std::string manifest_csv(const std::vector<TraceSummary>& summaries, const std::string& preset) {
  std::ostringstream out;
  out << "id,y_true_mbps,total_bytes,min_rtt_ms,tier,rtt_bin,preset\n";
  for (const TraceSummary& s : summaries) {
    out << s.id << ',' << format_double(s.y_true_mbps) << ',' << s.total_bytes << ',' << format_double(s.min_rtt_ms)
        << ',' << s.speed_tier << ',' << s.rtt_bin << ',' << preset << '\n';
  }
  return out.str();
}

/// Writes traces, index.csv and manifest.csv into `dir`.
inline void write_corpus(const std::filesystem::path& dir, const Corpus& corpus, unsigned jobs = 1) {
  write_corpus_traces(dir, corpus.traces, jobs);
  write_file((dir / "manifest.csv").string(), manifest_csv(corpus.summaries, corpus.preset));
}

}  // namespace turbotest::synth
