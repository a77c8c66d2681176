#pragma once

// Baseline stopping rules: static byte cap, BBR pipe-full count, throughput
// stability (TSH) and crucial-interval sampling (CIS).
//
// Every rule returns the stop time and the cumulative-average estimate at
// that point. A rule that never fires reports the full-run aggregate, so its
// relative error is exactly zero.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "turbotest/core.hpp"
#include "turbotest/traceio.hpp"
#include "turbotest/util.hpp"

namespace turbotest::heuristics {

inline constexpr double kDefaultCisFraction = 0.8;
inline constexpr int kDefaultTshWindowMs = 1000;

struct HeuristicResult {
  std::int64_t stop_time_ms = 0;
  double estimate_mbps = 0.0;
  bool stopped_early = false;
  std::uint64_t bytes_at_stop = 0;
  /// CIS only: midpoint of the crucial interval at the stop stride.
  double interval_midpoint_mbps = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline HeuristicResult full_run(const TraceSummary& s) {
  HeuristicResult r;
  r.stop_time_ms = s.duration_us / 1000;
  r.estimate_mbps = s.y_true_mbps;
  r.bytes_at_stop = s.total_bytes;
  return r;
}

/// Stop at stride t (ms). Stopping at or beyond the end is a full run.
inline HeuristicResult stop_at(const PreparedTrace& p, std::int64_t t_ms) {
  const std::size_t k = static_cast<std::size_t>(t_ms / p.windows.window_ms);
  if (t_ms * 1000 >= p.summary.duration_us || k >= p.windows.size()) return full_run(p.summary);
  HeuristicResult r;
  r.stop_time_ms = t_ms;
  r.estimate_mbps = p.windows.frames[k - 1][feature::kCumAvgThroughput];
  r.bytes_at_stop = p.windows.bytes_through[k - 1];
  r.stopped_early = true;
  return r;
}

}  // namespace detail

/// First snapshot whose cumulative bytes reach the cap.
inline HeuristicResult stop_static(const Trace& trace, std::uint64_t cap_bytes) {
  if (cap_bytes == 0) throw DomainError("static cap must be positive");
  const TraceSummary summary = summarize(trace);
  for (const Snapshot& s : trace.snapshots()) {
    if (s.bytes_acked < cap_bytes) continue;
    if (s.t_us >= trace.duration_us()) break;
    HeuristicResult r;
    r.stop_time_ms = (s.t_us + 999) / 1000;
    r.estimate_mbps = mbps(s.bytes_acked, s.t_us);
    r.bytes_at_stop = s.bytes_acked;
    r.stopped_early = true;
    return r;
  }
  return detail::full_run(summary);
}

/// Cap checked only at decision strides, matching the cadence of the other
/// rules.
inline HeuristicResult stop_static(const PreparedTrace& p, std::uint64_t cap_bytes, int stride_ms) {
  if (cap_bytes == 0) throw DomainError("static cap must be positive");
  for (std::int64_t t : decision_strides(p.windows.span_ms(), stride_ms)) {
    const std::size_t w = static_cast<std::size_t>(t / p.windows.window_ms);
    if (p.windows.bytes_through[w - 1] >= cap_bytes) return detail::stop_at(p, t);
  }
  return detail::full_run(p.summary);
}

/// Earliest stride whose cumulative pipe-full channel reaches k.
inline HeuristicResult stop_bbr(const PreparedTrace& p, int k, int stride_ms = kStrideMs) {
  if (k < 1) throw DomainError("bbr k must be >= 1");
  for (std::int64_t t : decision_strides(p.windows.span_ms(), stride_ms)) {
    const std::size_t w = static_cast<std::size_t>(t / p.windows.window_ms);
    if (p.windows.frames[w - 1][feature::kPipeFull] >= k) return detail::stop_at(p, t);
  }
  return detail::full_run(p.summary);
}

/// Earliest stride at which every window of the trailing stable_ms keeps its
/// instantaneous rate within tol_pct of the running average.
inline HeuristicResult stop_tsh(const PreparedTrace& p, double tol_pct, int stable_ms = kDefaultTshWindowMs,
                                int stride_ms = kStrideMs) {
  if (!(tol_pct > 0.0)) throw DomainError("tsh tolerance must be positive");
  if (stable_ms <= 0 || stable_ms % p.windows.window_ms != 0) {
    throw DomainError("tsh window must be a positive multiple of " + std::to_string(p.windows.window_ms) + " ms");
  }
  const std::size_t span = static_cast<std::size_t>(stable_ms / p.windows.window_ms);
  const double tol = tol_pct / 100.0;
  auto stable = [&](std::size_t w) {
    const Frame& f = p.windows.frames[w];
    const double avg = f[feature::kCumAvgThroughput];
    return avg > 0.0 && std::abs(f[feature::kInstThroughput] - avg) / avg <= tol;
  };
  for (std::int64_t t : decision_strides(p.windows.span_ms(), stride_ms)) {
    const std::size_t k = static_cast<std::size_t>(t / p.windows.window_ms);
    if (k < span) continue;
    bool ok = true;
    for (std::size_t w = k - span; w < k && ok; ++w) ok = stable(w);
    if (ok) return detail::stop_at(p, t);
  }
  return detail::full_run(p.summary);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  double midpoint() const { return 0.5 * (lo + hi); }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Shortest range covering at least `fraction` of the samples.
inline Interval crucial_interval(std::vector<double> samples, double fraction = kDefaultCisFraction) {
  if (samples.empty()) throw DomainError("crucial interval of an empty sample");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  const std::size_t m = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)), 1, n);
  Interval best{samples[0], samples[m - 1]};
  for (std::size_t i = 1; i + m <= n; ++i) {
    if (samples[i + m - 1] - samples[i] < best.width()) best = {samples[i], samples[i + m - 1]};
  }
  return best;
}

/// |A ∩ B| / |A ∪ B| on ranges; the union is the hull. Two identical
/// degenerate intervals are fully similar.
inline double interval_similarity(const Interval& a, const Interval& b) {
  const double hull = std::max(a.hi, b.hi) - std::min(a.lo, b.lo);
  if (hull <= 0.0) return 1.0;
  const double overlap = std::max(0.0, std::min(a.hi, b.hi) - std::max(a.lo, b.lo));
  return overlap / hull;
}

/// Earliest stride (from the second on) where consecutive crucial intervals
/// over all instantaneous samples so far reach similarity beta.
inline HeuristicResult stop_cis(const PreparedTrace& p, double beta, double fraction = kDefaultCisFraction,
                                int stride_ms = kStrideMs) {
  if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("cis beta must lie in (0, 1]");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("cis fraction must lie in (0, 1]");
  std::vector<double> samples;
  Interval prev{};
  bool have_prev = false;
  std::size_t taken = 0;
  for (std::int64_t t : decision_strides(p.windows.span_ms(), stride_ms)) {
    const std::size_t k = static_cast<std::size_t>(t / p.windows.window_ms);
    for (; taken < k; ++taken) samples.push_back(p.windows.frames[taken][feature::kInstThroughput]);
    const Interval cur = crucial_interval(samples, fraction);
    if (have_prev && interval_similarity(prev, cur) >= beta) {
      HeuristicResult r = detail::stop_at(p, t);
      r.interval_midpoint_mbps = cur.midpoint();
      return r;
    }
    prev = cur;
    have_prev = true;
  }
  return detail::full_run(p.summary);
}

// ---------------------------------------------------------------------------
// Name + parameter grammar, e.g. "static:cap=250MB", "bbr:k=5",
// "tsh:tol=25,window=1000", "cis:beta=0.9". Any rule also accepts stride=N.

enum class Kind { kStatic, kBbr, kTsh, kCis };

struct HeuristicSpec {
  Kind kind = Kind::kBbr;
  /// cap bytes, k, tolerance percent or beta depending on kind.
  double param = 1.0;
  int tsh_window_ms = kDefaultTshWindowMs;
  double cis_fraction = kDefaultCisFraction;
  int stride_ms = kStrideMs;
};

constexpr std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::kStatic: return "static";
    case Kind::kBbr: return "bbr";
    case Kind::kTsh: return "tsh";
    case Kind::kCis: return "cis";
  }
  return "unknown";
}

constexpr StopReason stop_reason(Kind k) {
  switch (k) {
    case Kind::kStatic: return StopReason::kStatic;
    case Kind::kBbr: return StopReason::kBbr;
    case Kind::kTsh: return StopReason::kTsh;
    case Kind::kCis: return StopReason::kCis;
  }
  return StopReason::kNone;
}

inline Kind parse_kind(std::string_view name) {
  for (Kind k : {Kind::kStatic, Kind::kBbr, Kind::kTsh, Kind::kCis}) {
    if (name == kind_name(k)) return k;
  }
  throw DataError("unknown heuristic '" + std::string(name) + "' (expected static, bbr, tsh or cis)");
}

/// Parses "250MB", "1.5GB", "1000" (bytes). Units are decimal.
inline std::uint64_t parse_bytes(std::string_view text) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr == begin) throw DataError("invalid byte count '" + std::string(text) + "'");
  std::string unit(ptr, end);
  for (char& c : unit) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  double scale = 1.0;
  if (unit.empty() || unit == "B") scale = 1.0;
  else if (unit == "KB") scale = 1e3;
  else if (unit == "MB") scale = 1e6;
  else if (unit == "GB") scale = 1e9;
  else throw DataError("unknown byte unit '" + unit + "' in '" + std::string(text) + "'");
  if (!(value > 0.0)) throw DataError("byte count must be positive: '" + std::string(text) + "'");
  return static_cast<std::uint64_t>(std::llround(value * scale));
}

inline double parse_number(std::string_view text, std::string_view key) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError("invalid value '" + std::string(text) + "' for " + std::string(key));
  }
  return v;
}

inline int parse_int(std::string_view text, std::string_view key) {
  const double v = parse_number(text, key);
  if (v != std::floor(v)) throw DataError(std::string(key) + " must be an integer");
  return static_cast<int>(v);
}

inline HeuristicSpec parse_heuristic(std::string_view text) {
  const auto colon = text.find(':');
  HeuristicSpec spec;
  spec.kind = parse_kind(text.substr(0, colon));
  bool have_main = false;
  std::string_view rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw DataError("expected key=value in '" + std::string(item) + "'");
    const std::string_view key = item.substr(0, eq);
    const std::string_view value = item.substr(eq + 1);
    if (key == "stride") {
      spec.stride_ms = parse_int(value, key);
    } else if (spec.kind == Kind::kStatic && key == "cap") {
      spec.param = static_cast<double>(parse_bytes(value));
      have_main = true;
    } else if (spec.kind == Kind::kBbr && key == "k") {
      spec.param = parse_int(value, key);
      have_main = true;
    } else if (spec.kind == Kind::kTsh && key == "tol") {
      spec.param = parse_number(value, key);
      have_main = true;
    } else if (spec.kind == Kind::kTsh && key == "window") {
      spec.tsh_window_ms = parse_int(value, key);
    } else if (spec.kind == Kind::kCis && key == "beta") {
      spec.param = parse_number(value, key);
      have_main = true;
    } else if (spec.kind == Kind::kCis && key == "fraction") {
      spec.cis_fraction = parse_number(value, key);
    } else {
      throw DataError("unknown parameter '" + std::string(key) + "' for " + std::string(kind_name(spec.kind)));
    }
  }
  if (!have_main) throw DataError("heuristic '" + std::string(text) + "' is missing its main parameter");
  if (spec.stride_ms <= 0 || spec.stride_ms % kWindowMs != 0) throw DataError("stride must be a positive multiple of 100 ms");
  return spec;
}

/// Name of the swept parameter for a kind.
constexpr std::string_view main_key(Kind k) {
  switch (k) {
    case Kind::kStatic: return "cap";
    case Kind::kBbr: return "k";
    case Kind::kTsh: return "tol";
    case Kind::kCis: return "beta";
  }
  return "";
}

inline std::string to_string(const HeuristicSpec& s) {
  std::string out(kind_name(s.kind));
  out += ':';
  out += main_key(s.kind);
  out += '=';
  out += s.kind == Kind::kStatic ? std::to_string(static_cast<std::uint64_t>(s.param)) : format_double(s.param);
  if (s.kind == Kind::kTsh && s.tsh_window_ms != kDefaultTshWindowMs) out += ",window=" + std::to_string(s.tsh_window_ms);
  if (s.kind == Kind::kCis && s.cis_fraction != kDefaultCisFraction) out += ",fraction=" + format_double(s.cis_fraction);
  if (s.stride_ms != kStrideMs) out += ",stride=" + std::to_string(s.stride_ms);
  return out;
}

inline HeuristicResult apply(const HeuristicSpec& s, const PreparedTrace& p) {
  switch (s.kind) {
    case Kind::kStatic: return stop_static(p, static_cast<std::uint64_t>(s.param), s.stride_ms);
    case Kind::kBbr: return stop_bbr(p, static_cast<int>(s.param), s.stride_ms);
    case Kind::kTsh: return stop_tsh(p, s.param, s.tsh_window_ms, s.stride_ms);
    case Kind::kCis: return stop_cis(p, s.param, s.cis_fraction, s.stride_ms);
  }
  throw DataError("unhandled heuristic kind");
}

inline TerminationOutcome to_outcome(const HeuristicResult& r, const HeuristicSpec& s, const TraceSummary& summary) {
  TerminationOutcome o;
  o.stop_time_ms = r.stop_time_ms;
  o.bytes_at_stop = r.bytes_at_stop;
  o.estimate_mbps = r.estimate_mbps;
  o.ran_to_completion = !r.stopped_early;
  o.reason = r.stopped_early ? stop_reason(s.kind) : StopReason::kEndOfTrace;
  o.rel_error = r.stopped_early ? rel_error(summary.y_true_mbps, r.estimate_mbps) : 0.0;
  return o;
}

}  // namespace turbotest::heuristics
