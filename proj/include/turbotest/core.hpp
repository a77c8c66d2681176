#pragma once

// Domain types shared by every module: raw telemetry snapshots, traces,
// resampled window series, ground-truth summaries and stop outcomes.
//
// Units: throughput in Mbps, raw time in microseconds, API time in ms.
// 8 * bytes / microseconds is exactly Mbps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace turbotest {

// ---------------------------------------------------------------------------
// Errors. Each family maps onto one CLI exit code.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input, invariant violations and out-of-range requests (exit 3).
struct DataError : Error {
  using Error::Error;
};

struct ParseError : DataError {
  ParseError(std::size_t line_no, const std::string& what)
      : DataError("line " + std::to_string(line_no) + ": " + what), line(line_no), detail(what) {}
  std::size_t line;
  std::string detail;
};

struct ValidationError : DataError {
  using DataError::DataError;
};

struct RangeError : DataError {
  using DataError::DataError;
};

struct DomainError : DataError {
  using DataError::DataError;
};

struct IoError : DataError {
  using DataError::DataError;
};

/// Model files, arity mismatches and training-input problems (exit 4).
struct ModelError : Error {
  using Error::Error;
};

/// Misuse of a stateful API (e.g. feeding a stopped session).
struct StateError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Constants.

inline constexpr std::size_t kFeatureCount = 13;
inline constexpr int kWindowMs = 100;
inline constexpr int kStrideMs = 500;
inline constexpr int kRegressorWindows = 20;   // most recent 2 s
inline constexpr int kClassifierWindows = 100;  // 10 s of history
inline constexpr std::int64_t kNominalDurationUs = 10'000'000;

inline constexpr std::size_t kRegressorArity = kRegressorWindows * kFeatureCount + 1;
inline constexpr std::size_t kClassifierArity = kClassifierWindows * kFeatureCount + 1;

inline constexpr std::array<double, 4> kSpeedTierEdgesMbps{25.0, 100.0, 200.0, 400.0};
inline constexpr std::array<double, 4> kRttBinEdgesMs{24.0, 52.0, 115.0, 234.0};
inline constexpr int kTierCount = 5;
inline constexpr int kRttBinCount = 5;

/// Index layout of one 13-entry window frame.
namespace feature {
inline constexpr std::size_t kInstThroughput = 0;
inline constexpr std::size_t kCumAvgThroughput = 1;
inline constexpr std::size_t kPipeFull = 2;
inline constexpr std::size_t kCwndMean = 3;
inline constexpr std::size_t kCwndStd = 4;
inline constexpr std::size_t kInflightMean = 5;
inline constexpr std::size_t kInflightStd = 6;
inline constexpr std::size_t kRttMean = 7;
inline constexpr std::size_t kRttStd = 8;
inline constexpr std::size_t kRetransMean = 9;
inline constexpr std::size_t kRetransStd = 10;
inline constexpr std::size_t kDupAckMean = 11;
inline constexpr std::size_t kDupAckStd = 12;
}  // namespace feature

inline constexpr double mbps(std::uint64_t bytes, std::int64_t elapsed_us) {
  return elapsed_us > 0 ? 8.0 * static_cast<double>(bytes) / static_cast<double>(elapsed_us) : 0.0;
}

// ---------------------------------------------------------------------------
// Raw telemetry.

struct Snapshot {
  std::int64_t t_us = 0;
  std::uint64_t bytes_acked = 0;
  std::uint64_t cwnd_bytes = 0;
  std::uint64_t bytes_in_flight = 0;
  std::int64_t rtt_us = 1;
  std::uint64_t retrans = 0;
  std::uint64_t dup_acks = 0;
  std::uint64_t pipe_full = 0;

  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

/// A validated, immutable speed-test trace.
class Trace {
 public:
  /// Throws ValidationError when the snapshot sequence breaks an invariant.
  Trace(std::string id, std::vector<Snapshot> snapshots, std::int64_t duration_us)
      : id_(std::move(id)), snapshots_(std::move(snapshots)), duration_us_(duration_us) {
    validate();
  }

  const std::string& id() const noexcept { return id_; }
  const std::vector<Snapshot>& snapshots() const noexcept { return snapshots_; }
  std::int64_t duration_us() const noexcept { return duration_us_; }
  std::uint64_t total_bytes() const noexcept { return snapshots_.back().bytes_acked; }

  friend bool operator==(const Trace&, const Trace&) = default;

 private:
  void validate() const {
    if (snapshots_.empty()) throw ValidationError("no snapshots");
    if (snapshots_.size() < 2) throw ValidationError("trace needs at least 2 snapshots");
    for (std::size_t i = 0; i < snapshots_.size(); ++i) {
      const Snapshot& s = snapshots_[i];
      if (s.t_us < 0) throw ValidationError("negative timestamp at snapshot " + std::to_string(i));
      if (s.rtt_us <= 0) throw ValidationError("rtt_us must be positive at snapshot " + std::to_string(i));
      if (i == 0) continue;
      const Snapshot& p = snapshots_[i - 1];
      if (s.t_us <= p.t_us) throw ValidationError("nonmonotonic timestamps at snapshot " + std::to_string(i));
      if (s.bytes_acked < p.bytes_acked || s.retrans < p.retrans || s.dup_acks < p.dup_acks ||
          s.pipe_full < p.pipe_full) {
        throw ValidationError("cumulative counter decreased at snapshot " + std::to_string(i));
      }
    }
    if (snapshots_.back().t_us > duration_us_) {
      throw ValidationError("last snapshot lies beyond duration_us");
    }
  }

  std::string id_;
  std::vector<Snapshot> snapshots_;
  std::int64_t duration_us_;
};

// ---------------------------------------------------------------------------
// Resampled representation.

using Frame = std::array<double, kFeatureCount>;

struct WindowSeries {
  int window_ms = kWindowMs;
  std::vector<Frame> frames;
  /// observed[w] is false when window w held no snapshot (carried forward).
  std::vector<bool> observed;
  /// bytes_acked of the last snapshot at or before the end of window w.
  std::vector<std::uint64_t> bytes_through;

  std::size_t size() const noexcept { return frames.size(); }
  std::int64_t span_ms() const noexcept { return static_cast<std::int64_t>(frames.size()) * window_ms; }
};

// ---------------------------------------------------------------------------
// Ground truth and binning.

struct TraceSummary {
  std::string id;
  double y_true_mbps = 0.0;
  std::uint64_t total_bytes = 0;
  std::int64_t duration_us = 0;
  double min_rtt_ms = 0.0;
  int speed_tier = 0;
  int rtt_bin = 0;
};

/// Half-open, lower-inclusive interval membership against sorted edges.
template <std::size_t N>
constexpr int bin_index(double value, const std::array<double, N>& edges) {
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), value) - edges.begin());
}

struct Bins {
  int speed_tier;
  int rtt_bin;
  friend bool operator==(const Bins&, const Bins&) = default;
};

constexpr Bins assign_bins(double throughput_mbps, double rtt_ms) {
  return {bin_index(throughput_mbps, kSpeedTierEdgesMbps), bin_index(rtt_ms, kRttBinEdgesMs)};
}

inline TraceSummary summarize(const Trace& trace) {
  TraceSummary s;
  s.id = trace.id();
  s.total_bytes = trace.total_bytes();
  s.duration_us = trace.duration_us();
  s.y_true_mbps = mbps(s.total_bytes, s.duration_us);
  std::int64_t min_rtt = std::numeric_limits<std::int64_t>::max();
  for (const Snapshot& snap : trace.snapshots()) min_rtt = std::min(min_rtt, snap.rtt_us);
  s.min_rtt_ms = static_cast<double>(min_rtt) / 1000.0;
  const Bins bins = assign_bins(s.y_true_mbps, s.min_rtt_ms);
  s.speed_tier = bins.speed_tier;
  s.rtt_bin = bins.rtt_bin;
  return s;
}

/// |t_true - t_early| / t_true.
inline double rel_error(double t_true, double t_early) {
  if (!(t_true > 0.0)) throw DomainError("rel_error: ground-truth throughput must be positive");
  return std::abs(t_true - t_early) / t_true;
}

// ---------------------------------------------------------------------------
// Stop decisions and outcomes.

enum class Verdict { kContinue, kStop };

enum class StopReason {
  kNone,
  kClassifier,
  kStatic,
  kBbr,
  kTsh,
  kCis,
  kFallbackTimeout,  // guard suppressed stopping and the test ran out
  kEndOfTrace,
};

constexpr std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::kNone: return "none";
    case StopReason::kClassifier: return "classifier";
    case StopReason::kStatic: return "static";
    case StopReason::kBbr: return "bbr";
    case StopReason::kTsh: return "tsh";
    case StopReason::kCis: return "cis";
    case StopReason::kFallbackTimeout: return "fallback-timeout";
    case StopReason::kEndOfTrace: return "end-of-trace";
  }
  return "unknown";
}

struct StopDecision {
  Verdict verdict = Verdict::kContinue;
  StopReason reason = StopReason::kNone;
  std::int64_t t_ms = 0;

  bool is_stop() const noexcept { return verdict == Verdict::kStop; }
  friend bool operator==(const StopDecision&, const StopDecision&) = default;
};

struct TerminationOutcome {
  std::int64_t stop_time_ms = 0;
  std::uint64_t bytes_at_stop = 0;
  double estimate_mbps = 0.0;
  /// NaN when no ground truth was supplied.
  double rel_error = std::numeric_limits<double>::quiet_NaN();
  bool ran_to_completion = false;
  StopReason reason = StopReason::kNone;

  friend bool operator==(const TerminationOutcome&, const TerminationOutcome&) = default;
};

}  // namespace turbotest
