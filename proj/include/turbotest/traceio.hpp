#pragma once

// Trace ingestion (JSON Lines), 100 ms resampling and model-ready views.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "turbotest/core.hpp"
#include "turbotest/util.hpp"

namespace turbotest {

// ---------------------------------------------------------------------------
// Parsing.

enum class TraceFormat { kJsonLines };

inline TraceFormat parse_trace_format(std::string_view name) {
  if (name == "jsonl" || name == "ndt-jsonl") return TraceFormat::kJsonLines;
  throw DataError("unknown trace format '" + std::string(name) + "'");
}

namespace detail {

inline std::uint64_t json_unsigned(const nlohmann::json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(line, std::string("missing key \"") + key + "\"");
  if (it->is_number_unsigned()) return it->get<std::uint64_t>();
  if (it->is_number_integer()) {
    const auto v = it->get<std::int64_t>();
    if (v < 0) throw ParseError(line, std::string("negative value for \"") + key + "\"");
    return static_cast<std::uint64_t>(v);
  }
  throw ParseError(line, std::string("non-integer value for \"") + key + "\"");
}

/// Repairs at most one isolated dip per cumulative counter (a single sample
/// below its predecessor while its successor recovers). Anything else throws.
template <typename Get>
void repair_counter(std::vector<Snapshot>& snaps, Get get, const char* name) {
  bool repaired = false;
  for (std::size_t j = 1; j < snaps.size(); ++j) {
    if (get(snaps[j]) >= get(snaps[j - 1])) continue;
    const bool isolated_dip = !repaired && j + 1 < snaps.size() && get(snaps[j + 1]) >= get(snaps[j - 1]);
    if (!isolated_dip) throw ValidationError(std::string(name) + " decreases at snapshot " + std::to_string(j));
    get(snaps[j]) = get(snaps[j - 1]);
    repaired = true;
  }
}

}  // namespace detail

/// Reads one trace from a JSON Lines stream. `fallback_id` names the trace
/// when the stream has no header object.
inline Trace parse_trace(std::istream& in, std::string_view fallback_id = "trace",
                         TraceFormat format = TraceFormat::kJsonLines) {
  (void)format;
  std::string id(fallback_id);
  std::optional<std::int64_t> duration_us;
  std::vector<Snapshot> snaps;
  std::string line;
  std::size_t line_no = 0;
  bool seen_object = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "expected a JSON object");
    const bool header = !seen_object && !obj.contains("t_us");
    seen_object = true;
    if (header) {
      if (auto it = obj.find("id"); it != obj.end()) {
        if (!it->is_string()) throw ParseError(line_no, "header id must be a string");
        id = it->get<std::string>();
      }
      if (obj.contains("duration_us")) {
        duration_us = static_cast<std::int64_t>(detail::json_unsigned(obj, "duration_us", line_no));
      }
      continue;
    }
    Snapshot s;
    s.t_us = static_cast<std::int64_t>(detail::json_unsigned(obj, "t_us", line_no));
    s.bytes_acked = detail::json_unsigned(obj, "bytes_acked", line_no);
    s.cwnd_bytes = detail::json_unsigned(obj, "cwnd_bytes", line_no);
    s.bytes_in_flight = detail::json_unsigned(obj, "bytes_in_flight", line_no);
    s.rtt_us = static_cast<std::int64_t>(detail::json_unsigned(obj, "rtt_us", line_no));
    s.retrans = detail::json_unsigned(obj, "retrans", line_no);
    s.dup_acks = detail::json_unsigned(obj, "dup_acks", line_no);
    s.pipe_full = detail::json_unsigned(obj, "pipe_full", line_no);
    if (s.rtt_us <= 0) throw ParseError(line_no, "rtt_us must be positive");
    if (!snaps.empty() && s.t_us <= snaps.back().t_us) {
      throw ValidationError("nonmonotonic timestamps at line " + std::to_string(line_no));
    }
    snaps.push_back(s);
  }
  if (snaps.empty()) throw ValidationError("no snapshots");
  detail::repair_counter(snaps, [](Snapshot& s) -> std::uint64_t& { return s.bytes_acked; }, "bytes_acked");
  detail::repair_counter(snaps, [](Snapshot& s) -> std::uint64_t& { return s.retrans; }, "retrans");
  detail::repair_counter(snaps, [](Snapshot& s) -> std::uint64_t& { return s.dup_acks; }, "dup_acks");
  detail::repair_counter(snaps, [](Snapshot& s) -> std::uint64_t& { return s.pipe_full; }, "pipe_full");
  const std::int64_t last_t = snaps.back().t_us;
  return Trace(std::move(id), std::move(snaps), duration_us.value_or(last_t));
}

inline Trace parse_trace(std::string_view text, std::string_view fallback_id = "trace") {
  std::istringstream in{std::string(text)};
  return parse_trace(in, fallback_id);
}

inline Trace read_trace_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return parse_trace(in, path.stem().string());
  } catch (const ParseError& e) {
    throw ParseError(e.line, path.string() + ": " + e.detail);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

/// Canonical serialization: header line then one object per snapshot with
/// keys in the documented order.
inline void write_trace(std::ostream& out, const Trace& trace) {
  out << "{\"id\":" << nlohmann::json(trace.id()).dump() << ",\"duration_us\":" << trace.duration_us() << "}\n";
  for (const Snapshot& s : trace.snapshots()) {
    out << "{\"t_us\":" << s.t_us << ",\"bytes_acked\":" << s.bytes_acked << ",\"cwnd_bytes\":" << s.cwnd_bytes
        << ",\"bytes_in_flight\":" << s.bytes_in_flight << ",\"rtt_us\":" << s.rtt_us << ",\"retrans\":" << s.retrans
        << ",\"dup_acks\":" << s.dup_acks << ",\"pipe_full\":" << s.pipe_full << "}\n";
  }
}

inline std::string serialize_trace(const Trace& trace) {
  std::ostringstream out;
  write_trace(out, trace);
  return out.str();
}

// ---------------------------------------------------------------------------
// Resampling.

namespace detail {

struct RunningStats {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double stddev() const { return n > 1 ? std::sqrt(std::max(0.0, m2 / static_cast<double>(n))) : 0.0; }
};

}  // namespace detail

/// Streaming 100 ms resampler. Window k covers (100k, 100(k+1)] ms, so a
/// counter sampled at a boundary belongs to the window it closes; a snapshot
/// at t = 0 goes to window 0. A window closes once a snapshot from a later
/// window arrives (or on finish); snapshots past the last window fold into it.
class Resampler {
 public:
  explicit Resampler(std::size_t n_windows, int window_ms = kWindowMs)
      : n_windows_(std::max<std::size_t>(n_windows, 1)), window_us_(std::int64_t{window_ms} * 1000) {
    series_.window_ms = window_ms;
    series_.frames.reserve(n_windows_);
  }

  void push(const Snapshot& s) {
    if (has_prev_ && s.t_us <= prev_.t_us) throw ValidationError("resampler: nonmonotonic timestamps");
    const std::size_t w = window_of(s.t_us);
    while (current_ < w) close_current();
    if (has_prev_) {
      const std::int64_t dt = s.t_us - prev_.t_us;
      inst_.add(mbps(s.bytes_acked - prev_.bytes_acked, dt));
    }
    cwnd_.add(static_cast<double>(s.cwnd_bytes));
    inflight_.add(static_cast<double>(s.bytes_in_flight));
    rtt_.add(static_cast<double>(s.rtt_us) / 1000.0);
    const Snapshot base = has_prev_ ? prev_ : Snapshot{};
    retrans_.add(static_cast<double>(s.retrans - base.retrans));
    dup_.add(static_cast<double>(s.dup_acks - base.dup_acks));
    pipe_max_ = std::max(pipe_max_, s.pipe_full);
    ++count_;
    last_bytes_ = s.bytes_acked;
    last_t_ = s.t_us;
    prev_ = s;
    has_prev_ = true;
  }

  /// Number of windows whose frame is final.
  std::size_t closed() const noexcept { return series_.frames.size(); }
  std::size_t capacity() const noexcept { return n_windows_; }
  const WindowSeries& series() const noexcept { return series_; }

  WindowSeries finish() {
    while (series_.frames.size() < n_windows_) close_current();
    return series_;
  }

 private:
  std::size_t window_of(std::int64_t t_us) const {
    const std::int64_t w = t_us <= 0 ? 0 : (t_us - 1) / window_us_;
    return std::min(static_cast<std::size_t>(w), n_windows_ - 1);
  }

  void close_current() {
    Frame f{};
    const bool have_prev_frame = !series_.frames.empty();
    if (have_prev_frame) f = series_.frames.back();
    if (count_ == 0) {
      // Carry forward with zero spread and no new loss events.
      for (std::size_t i : {feature::kCwndStd, feature::kInflightStd, feature::kRttStd, feature::kRetransStd,
                            feature::kDupAckStd, feature::kRetransMean, feature::kDupAckMean}) {
        f[i] = 0.0;
      }
      series_.frames.push_back(f);
      series_.observed.push_back(false);
      series_.bytes_through.push_back(series_.bytes_through.empty() ? 0 : series_.bytes_through.back());
    } else {
      if (inst_.n > 0) f[feature::kInstThroughput] = inst_.mean;
      f[feature::kCumAvgThroughput] = mbps(last_bytes_, last_t_);
      f[feature::kPipeFull] = static_cast<double>(pipe_max_);
      f[feature::kCwndMean] = cwnd_.mean;
      f[feature::kCwndStd] = cwnd_.stddev();
      f[feature::kInflightMean] = inflight_.mean;
      f[feature::kInflightStd] = inflight_.stddev();
      f[feature::kRttMean] = rtt_.mean;
      f[feature::kRttStd] = rtt_.stddev();
      f[feature::kRetransMean] = retrans_.mean;
      f[feature::kRetransStd] = retrans_.stddev();
      f[feature::kDupAckMean] = dup_.mean;
      f[feature::kDupAckStd] = dup_.stddev();
      series_.frames.push_back(f);
      series_.observed.push_back(true);
      series_.bytes_through.push_back(last_bytes_);
    }
    ++current_;
    inst_ = cwnd_ = inflight_ = rtt_ = retrans_ = dup_ = {};
    count_ = 0;
  }

  std::size_t n_windows_;
  std::int64_t window_us_;
  WindowSeries series_;
  std::size_t current_ = 0;

  detail::RunningStats inst_, cwnd_, inflight_, rtt_, retrans_, dup_;
  std::uint64_t pipe_max_ = 0;
  std::size_t count_ = 0;
  std::uint64_t last_bytes_ = 0;
  std::int64_t last_t_ = 0;
  Snapshot prev_{};
  bool has_prev_ = false;
};

inline std::size_t window_count(std::int64_t duration_us, int window_ms = kWindowMs) {
  const std::int64_t w = std::int64_t{window_ms} * 1000;
  return static_cast<std::size_t>(std::max<std::int64_t>(1, (duration_us + w - 1) / w));
}

inline WindowSeries resample(const Trace& trace, int window_ms = kWindowMs) {
  Resampler r(window_count(trace.duration_us(), window_ms), window_ms);
  for (const Snapshot& s : trace.snapshots()) r.push(s);
  return r.finish();
}

/// Decision points stride, 2*stride, ... up to the end of the series.
inline std::vector<std::int64_t> decision_strides(std::int64_t span_ms, int stride_ms = kStrideMs) {
  std::vector<std::int64_t> out;
  for (std::int64_t t = stride_ms; t <= span_ms; t += stride_ms) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Model views.

/// Most recent 2 s of frames (oldest first) followed by elapsed_ms.
struct RegressorInput {
  std::vector<double> values;
  double elapsed_ms() const { return values.back(); }
};

/// Full history zero-padded to 10 s, followed by elapsed_ms.
struct ClassifierInput {
  std::vector<double> values;
  std::vector<bool> mask;
  double elapsed_ms() const { return values.back(); }
};

namespace detail {

inline std::size_t windows_until(const WindowSeries& ws, std::int64_t t_ms) {
  if (t_ms < ws.window_ms || t_ms % ws.window_ms != 0) {
    throw RangeError("decision time " + std::to_string(t_ms) + " ms must be a positive multiple of " +
                     std::to_string(ws.window_ms) + " ms");
  }
  if (t_ms > ws.span_ms()) {
    throw RangeError("decision time " + std::to_string(t_ms) + " ms is beyond the trace end (" +
                     std::to_string(ws.span_ms()) + " ms)");
  }
  return static_cast<std::size_t>(t_ms / ws.window_ms);
}

}  // namespace detail

/// Windows before the first observed one are padded with copies of the
/// latest available window.
inline RegressorInput regressor_input(const WindowSeries& ws, std::int64_t t_ms) {
  const std::size_t k = detail::windows_until(ws, t_ms);
  const std::size_t real = std::min<std::size_t>(k, kRegressorWindows);
  const std::size_t pad = kRegressorWindows - real;
  RegressorInput in;
  in.values.reserve(kRegressorArity);
  const Frame& latest = ws.frames[k - 1];
  for (std::size_t i = 0; i < pad; ++i) in.values.insert(in.values.end(), latest.begin(), latest.end());
  for (std::size_t w = k - real; w < k; ++w) in.values.insert(in.values.end(), ws.frames[w].begin(), ws.frames[w].end());
  in.values.push_back(static_cast<double>(t_ms));
  return in;
}

inline ClassifierInput classifier_input(const WindowSeries& ws, std::int64_t t_ms) {
  const std::size_t k = detail::windows_until(ws, t_ms);
  if (k > kClassifierWindows) {
    throw RangeError("classifier history holds at most " + std::to_string(kClassifierWindows) + " windows");
  }
  ClassifierInput in;
  in.values.assign(kClassifierArity, 0.0);
  in.mask.assign(kClassifierWindows, false);
  for (std::size_t w = 0; w < k; ++w) {
    std::copy(ws.frames[w].begin(), ws.frames[w].end(), in.values.begin() + static_cast<std::ptrdiff_t>(w * kFeatureCount));
    in.mask[w] = true;
  }
  in.values.back() = static_cast<double>(t_ms);
  return in;
}

// ---------------------------------------------------------------------------
// Prepared traces and corpora.

/// A trace with its ground truth and resampled series computed once.
struct PreparedTrace {
  Trace trace;
  TraceSummary summary;
  WindowSeries windows;
};

inline PreparedTrace prepare(Trace trace, int window_ms = kWindowMs) {
  TraceSummary summary = summarize(trace);
  WindowSeries ws = resample(trace, window_ms);
  return {std::move(trace), std::move(summary), std::move(ws)};
}

inline std::vector<PreparedTrace> prepare_all(std::vector<Trace> traces, unsigned jobs = 1, int window_ms = kWindowMs) {
  std::vector<std::optional<PreparedTrace>> slots(traces.size());
  parallel_for(traces.size(), jobs, [&](std::size_t i) { slots[i] = prepare(std::move(traces[i]), window_ms); });
  std::vector<PreparedTrace> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct CorpusEntry {
  std::string file;
  std::string id;
};

/// Reads index.csv (header "file,id") from a corpus directory.
inline std::vector<CorpusEntry> read_corpus_index(const std::filesystem::path& dir) {
  const auto path = dir / "index.csv";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<CorpusEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "file,id") throw ParseError(line_no, path.string() + ": expected header 'file,id'");
      continue;
    }
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(line_no, path.string() + ": expected 'file,id'");
    out.push_back({line.substr(0, comma), line.substr(comma + 1)});
  }
  return out;
}

inline std::vector<Trace> read_corpus(const std::filesystem::path& dir, unsigned jobs = 1) {
  const auto index = read_corpus_index(dir);
  std::vector<std::optional<Trace>> slots(index.size());
  parallel_for(index.size(), jobs, [&](std::size_t i) { slots[i] = read_trace_file(dir / index[i].file); });
  std::vector<Trace> out;
  out.reserve(index.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]->id() != index[i].id) {
      throw ValidationError(index[i].file + ": id '" + slots[i]->id() + "' does not match index id '" + index[i].id + "'");
    }
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

/// File name used for a trace inside a corpus directory.
inline std::string trace_file_name(std::string_view id) { return std::string(id) + ".jsonl"; }

inline void write_corpus_traces(const std::filesystem::path& dir, const std::vector<Trace>& traces, unsigned jobs = 1) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  parallel_for(traces.size(), jobs, [&](std::size_t i) {
    write_file((dir / trace_file_name(traces[i].id())).string(), serialize_trace(traces[i]));
  });
  std::string index = "file,id\n";
  for (const Trace& t : traces) index += trace_file_name(t.id()) + "," + t.id() + "\n";
  write_file((dir / "index.csv").string(), index);
}

}  // namespace turbotest
