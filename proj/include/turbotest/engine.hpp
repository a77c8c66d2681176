#pragma once

// Online termination: a session consumes snapshots, evaluates the stop
// classifier at each decision stride behind a variability guard, and calls
// the regressor once when the test ends early.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "turbotest/core.hpp"
#include "turbotest/learn/gbdt.hpp"
#include "turbotest/learn/mlp.hpp"
#include "turbotest/traceio.hpp"

namespace turbotest::engine {

struct GuardConfig {
  bool enabled = true;
  /// Suppress stopping when CoV of instantaneous throughput exceeds this.
  double max_cov = 0.8;
  int window_ms = 2000;
};

using ClassifierFn = std::function<double(const ClassifierInput&)>;
using RegressorFn = std::function<double(const RegressorInput&)>;

struct Policy {
  ClassifierFn classifier;
  RegressorFn regressor;
  GuardConfig guard;
  int stride_ms = kStrideMs;
  double threshold = 0.5;
};

/// Policy backed by trained models shared read-only across sessions.
inline Policy model_policy(std::shared_ptr<const learn::GbdtModel> regressor,
                           std::shared_ptr<const learn::MlpModel> classifier, GuardConfig guard = {}) {
  learn::check_arity(kRegressorArity, regressor->n_features, "regressor");
  learn::check_arity(kClassifierArity, classifier->n_inputs, "classifier");
  Policy p;
  p.classifier = [classifier](const ClassifierInput& in) { return classifier->predict_proba(in.values); };
  p.regressor = [regressor](const RegressorInput& in) { return regressor->predict(in.values); };
  p.guard = guard;
  return p;
}

/// Coefficient of variation of the instantaneous-throughput channel over the
/// trailing guard window ending at t_ms. Zero mean counts as infinite.
inline double trailing_cov(const WindowSeries& ws, std::int64_t t_ms, int window_ms) {
  const auto k = static_cast<std::size_t>(t_ms / ws.window_ms);
  const auto span = static_cast<std::size_t>(std::max(1, window_ms / ws.window_ms));
  const std::size_t begin = k > span ? k - span : 0;
  double sum = 0.0, sq = 0.0;
  for (std::size_t w = begin; w < k; ++w) sum += ws.frames[w][feature::kInstThroughput];
  const double n = static_cast<double>(k - begin);
  const double mean = sum / n;
  if (!(mean > 0.0)) return std::numeric_limits<double>::infinity();
  for (std::size_t w = begin; w < k; ++w) {
    const double d = ws.frames[w][feature::kInstThroughput] - mean;
    sq += d * d;
  }
  return std::sqrt(sq / n) / mean;
}

/// True when early stopping is allowed at t_ms.
inline bool variability_guard(const WindowSeries& ws, std::int64_t t_ms, const GuardConfig& guard) {
  if (!guard.enabled) return true;
  return trailing_cov(ws, t_ms, guard.window_ms) <= guard.max_cov;
}

struct SessionStats {
  std::size_t strides_evaluated = 0;
  std::size_t strides_suppressed = 0;
  std::size_t classifier_calls = 0;
  std::size_t regressor_calls = 0;
  double classifier_seconds = 0.0;
  double regressor_seconds = 0.0;
};

class Session {
 public:
  explicit Session(const Policy& policy, std::int64_t duration_us = kNominalDurationUs)
      : policy_(&policy),
        duration_us_(duration_us),
        resampler_(window_count(duration_us, kWindowMs), kWindowMs),
        next_stride_ms_(policy.stride_ms) {
    if (policy.stride_ms <= 0 || policy.stride_ms % kWindowMs != 0) {
      throw DataError("stride must be a positive multiple of 100 ms");
    }
    if (!policy.classifier || !policy.regressor) throw ModelError("policy needs a classifier and a regressor");
  }

  /// Buffers one snapshot. Returns a decision when a stride was evaluated or
  /// the test reached its end.
  std::optional<StopDecision> feed(const Snapshot& s) {
    if (decision_) throw StateError("feed after stop");
    if (has_last_ && s.t_us <= last_.t_us) throw ValidationError("out-of-order snapshot at t_us=" + std::to_string(s.t_us));
    if (s.t_us > duration_us_) throw ValidationError("snapshot beyond test duration");
    if (has_last_ && s.bytes_acked < last_.bytes_acked) throw ValidationError("bytes_acked decreased");
    resampler_.push(s);
    last_ = s;
    has_last_ = true;
    std::optional<StopDecision> out;
    const auto ready_ms = static_cast<std::int64_t>(resampler_.closed()) * kWindowMs;
    while (next_stride_ms_ <= ready_ms && next_stride_ms_ * 1000 < duration_us_) {
      out = evaluate(next_stride_ms_);
      next_stride_ms_ += policy_->stride_ms;
      if (decision_) return out;
    }
    if (s.t_us >= duration_us_) return end_of_stream();
    return out;
  }

  /// Declares the stream complete; evaluates pending strides, then stops.
  StopDecision end_of_stream() {
    if (decision_) return *decision_;
    if (!has_last_) throw StateError("end of stream before any snapshot");
    resampler_.finish();
    const std::int64_t limit = std::min(resampler_.series().span_ms(), duration_us_ / 1000);
    for (; next_stride_ms_ <= limit && next_stride_ms_ * 1000 < duration_us_; next_stride_ms_ += policy_->stride_ms) {
      evaluate(next_stride_ms_);
      if (decision_) return *decision_;
    }
    decision_ = StopDecision{Verdict::kStop, stats_.strides_suppressed > 0 ? StopReason::kFallbackTimeout
                                                                            : StopReason::kEndOfTrace,
                             last_.t_us / 1000};
    return *decision_;
  }

  /// Final outcome; `y_true` fills in rel_error when known.
  TerminationOutcome finalize(std::optional<double> y_true = std::nullopt) {
    if (!decision_) throw StateError("finalize before the session stopped");
    if (finalized_) throw StateError("finalize called twice");
    finalized_ = true;
    TerminationOutcome o;
    o.reason = decision_->reason;
    if (decision_->reason == StopReason::kClassifier) {
      const WindowSeries& ws = resampler_.series();
      const auto k = static_cast<std::size_t>(decision_->t_ms / kWindowMs);
      o.stop_time_ms = decision_->t_ms;
      o.bytes_at_stop = ws.bytes_through[k - 1];
      const auto start = std::chrono::steady_clock::now();
      o.estimate_mbps = policy_->regressor(regressor_input(ws, decision_->t_ms));
      stats_.regressor_seconds += seconds_since(start);
      ++stats_.regressor_calls;
    } else {
      o.ran_to_completion = true;
      o.stop_time_ms = duration_us_ / 1000;
      o.bytes_at_stop = last_.bytes_acked;
      o.estimate_mbps = mbps(last_.bytes_acked, duration_us_);
    }
    if (y_true) o.rel_error = rel_error(*y_true, o.estimate_mbps);
    return o;
  }

  bool stopped() const noexcept { return decision_.has_value(); }
  const SessionStats& stats() const noexcept { return stats_; }
  const WindowSeries& series() const noexcept { return resampler_.series(); }

 private:
  static double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

  StopDecision evaluate(std::int64_t t_ms) {
    ++stats_.strides_evaluated;
    const WindowSeries& ws = resampler_.series();
    if (!variability_guard(ws, t_ms, policy_->guard)) {
      ++stats_.strides_suppressed;
      return {Verdict::kContinue, StopReason::kNone, t_ms};
    }
    const auto start = std::chrono::steady_clock::now();
    const double p = policy_->classifier(classifier_input(ws, t_ms));
    stats_.classifier_seconds += seconds_since(start);
    ++stats_.classifier_calls;
    if (p >= policy_->threshold) {
      decision_ = StopDecision{Verdict::kStop, StopReason::kClassifier, t_ms};
      return *decision_;
    }
    return {Verdict::kContinue, StopReason::kNone, t_ms};
  }

  const Policy* policy_;
  std::int64_t duration_us_;
  Resampler resampler_;
  std::int64_t next_stride_ms_;
  Snapshot last_{};
  bool has_last_ = false;
  std::optional<StopDecision> decision_;
  bool finalized_ = false;
  SessionStats stats_;
};

struct ReplayResult {
  TerminationOutcome outcome;
  SessionStats stats;
};

/// Replays a whole trace through a fresh session.
inline ReplayResult replay(const Policy& policy, const Trace& trace) {
  Session session(policy, trace.duration_us());
  for (const Snapshot& s : trace.snapshots()) {
    if (auto d = session.feed(s); d && d->is_stop()) break;
  }
  if (!session.stopped()) session.end_of_stream();
  ReplayResult r;
  r.outcome = session.finalize(mbps(trace.total_bytes(), trace.duration_us()));
  r.stats = session.stats();
  return r;
}

}  // namespace turbotest::engine
