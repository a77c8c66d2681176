#pragma once

// Corpus evaluation: per-trace records, aggregates, Pareto sweeps, adaptive
// per-group parameter selection and percentile-constrained savings curves.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "turbotest/core.hpp"
#include "turbotest/engine.hpp"
#include "turbotest/heuristics.hpp"
#include "turbotest/traceio.hpp"
#include "turbotest/util.hpp"

namespace turbotest::eval {

inline constexpr double kDefaultErrorBound = 0.20;
inline const std::vector<double> kDefaultPercentiles{50, 60, 70, 75, 80, 90, 95};

struct Record {
  std::string trace_id;
  std::string method;
  double param = 0.0;
  std::int64_t stop_ms = 0;
  std::uint64_t bytes_early = 0;
  std::uint64_t total_bytes = 0;
  double estimate_mbps = 0.0;
  double y_true_mbps = 0.0;
  double rel_error = 0.0;
  int tier = 0;
  int rtt_bin = 0;
  StopReason reason = StopReason::kNone;
};

/// A named stopping method at one parameter value.
struct Method {
  std::string name;
  double param = 0.0;
  std::function<TerminationOutcome(const PreparedTrace&)> run;
};

inline Method heuristic_method(const heuristics::HeuristicSpec& spec) {
  return {std::string(heuristics::kind_name(spec.kind)), spec.param, [spec](const PreparedTrace& p) {
            return heuristics::to_outcome(heuristics::apply(spec, p), spec, p.summary);
          }};
}

inline Method turbotest_method(double epsilon, std::shared_ptr<const engine::Policy> policy) {
  return {"turbotest", epsilon, [policy](const PreparedTrace& p) { return engine::replay(*policy, p.trace).outcome; }};
}

inline Method full_run_method() {
  return {"full", 0.0, [](const PreparedTrace& p) {
            TerminationOutcome o;
            o.stop_time_ms = p.summary.duration_us / 1000;
            o.bytes_at_stop = p.summary.total_bytes;
            o.estimate_mbps = p.summary.y_true_mbps;
            o.rel_error = 0.0;
            o.ran_to_completion = true;
            o.reason = StopReason::kEndOfTrace;
            return o;
          }};
}

inline Record make_record(const PreparedTrace& p, const Method& m, const TerminationOutcome& o) {
  Record r;
  r.trace_id = p.summary.id;
  r.method = m.name;
  r.param = m.param;
  r.stop_ms = o.stop_time_ms;
  r.bytes_early = o.bytes_at_stop;
  r.total_bytes = p.summary.total_bytes;
  r.estimate_mbps = o.estimate_mbps;
  r.y_true_mbps = p.summary.y_true_mbps;
  r.rel_error = std::isnan(o.rel_error) ? rel_error(p.summary.y_true_mbps, o.estimate_mbps) : o.rel_error;
  r.tier = p.summary.speed_tier;
  r.rtt_bin = p.summary.rtt_bin;
  r.reason = o.reason;
  return r;
}

/// One record per trace, in corpus order.
inline std::vector<Record> evaluate_policy(const std::vector<PreparedTrace>& corpus, const Method& method,
                                           unsigned jobs = 1) {
  std::vector<Record> out(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) { out[i] = make_record(corpus[i], method, method.run(corpus[i])); });
  return out;
}

// ---------------------------------------------------------------------------
// Aggregates.

struct Aggregate {
  std::size_t n = 0;
  double median_rel_error = 0.0;
  double transfer_fraction = 1.0;
  double total_gb = 0.0;
  std::uint64_t bytes_early = 0;
  std::uint64_t bytes_full = 0;
};

inline Aggregate aggregate(const std::vector<const Record*>& rs) {
  Aggregate a;
  a.n = rs.size();
  std::vector<double> errs;
  for (const Record* r : rs) {
    errs.push_back(r->rel_error);
    a.bytes_early += r->bytes_early;
    a.bytes_full += r->total_bytes;
  }
  a.median_rel_error = errs.empty() ? 0.0 : median(errs);
  a.transfer_fraction = a.bytes_full ? static_cast<double>(a.bytes_early) / static_cast<double>(a.bytes_full) : 1.0;
  a.total_gb = static_cast<double>(a.bytes_early) / 1e9;
  return a;
}

inline Aggregate aggregate(const std::vector<Record>& rs) {
  std::vector<const Record*> ptrs;
  for (const Record& r : rs) ptrs.push_back(&r);
  return aggregate(ptrs);
}

/// Percentiles of relative error and of per-test transfer fraction.
struct PercentileRow {
  double p;
  double rel_error;
  double transfer;
};

inline std::vector<PercentileRow> percentile_table(const std::vector<Record>& rs, const std::vector<double>& ps) {
  std::vector<double> errs, transfer;
  for (const Record& r : rs) {
    errs.push_back(r.rel_error);
    transfer.push_back(r.total_bytes ? static_cast<double>(r.bytes_early) / static_cast<double>(r.total_bytes) : 1.0);
  }
  std::vector<PercentileRow> out;
  for (double p : ps) out.push_back({p, percentile(errs, p), percentile(transfer, p)});
  return out;
}

// ---------------------------------------------------------------------------
// Pareto sweeps.

struct FrontierPoint {
  std::string method;
  double param = 0.0;
  double median_rel_error = 0.0;
  double transfer_fraction = 1.0;
  double total_gb = 0.0;
  std::size_t n = 0;
  bool nondominated = false;
};

/// a dominates b: no worse on both axes and strictly better on one.
inline bool dominates(const FrontierPoint& a, const FrontierPoint& b) {
  return a.median_rel_error <= b.median_rel_error && a.transfer_fraction <= b.transfer_fraction &&
         (a.median_rel_error < b.median_rel_error || a.transfer_fraction < b.transfer_fraction);
}

/// Strictly lower on both axes.
inline bool strictly_dominates(const FrontierPoint& a, const FrontierPoint& b) {
  return a.median_rel_error < b.median_rel_error && a.transfer_fraction < b.transfer_fraction;
}

inline void mark_frontier(std::vector<FrontierPoint>& pts) {
  for (auto& p : pts) {
    p.nondominated = std::none_of(pts.begin(), pts.end(), [&](const FrontierPoint& q) { return dominates(q, p); });
  }
}

inline FrontierPoint frontier_point(const std::vector<Record>& rs, const std::string& method, double param) {
  const Aggregate a = aggregate(rs);
  return {method, param, a.median_rel_error, a.transfer_fraction, a.total_gb, a.n, false};
}

struct Sweep {
  std::vector<FrontierPoint> points;
  std::vector<std::vector<Record>> records;  // parallel to points
};

inline Sweep pareto_sweep(const std::vector<PreparedTrace>& corpus, const std::vector<Method>& methods,
                          unsigned jobs = 1) {
  if (methods.empty()) throw DataError("pareto_sweep needs at least one parameter");
  Sweep s;
  for (const Method& m : methods) {
    s.records.push_back(evaluate_policy(corpus, m, jobs));
    s.points.push_back(frontier_point(s.records.back(), m.name, m.param));
  }
  mark_frontier(s.points);
  return s;
}

/// Operating point used to represent a sweep: the most aggressive point whose
/// median error is below the bound, else the most accurate point.
inline const FrontierPoint& representative_point(const std::vector<FrontierPoint>& pts,
                                                 double bound = kDefaultErrorBound) {
  const FrontierPoint* best = nullptr;
  for (const auto& p : pts) {
    if (p.median_rel_error < bound && (!best || p.transfer_fraction < best->transfer_fraction)) best = &p;
  }
  if (best) return *best;
  for (const auto& p : pts) {
    if (!best || p.median_rel_error < best->median_rel_error ||
        (p.median_rel_error == best->median_rel_error && p.transfer_fraction < best->transfer_fraction)) {
      best = &p;
    }
  }
  return *best;
}

// ---------------------------------------------------------------------------
// Adaptive selection.

enum class Strategy { kGlobal, kSpeed, kRtt, kRttSpeed, kOracle };

inline constexpr std::array<Strategy, 5> kAllStrategies{Strategy::kGlobal, Strategy::kSpeed, Strategy::kRtt,
                                                        Strategy::kRttSpeed, Strategy::kOracle};

constexpr std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kGlobal: return "global";
    case Strategy::kSpeed: return "speed";
    case Strategy::kRtt: return "rtt";
    case Strategy::kRttSpeed: return "rtt+speed";
    case Strategy::kOracle: return "oracle";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view s) {
  for (Strategy st : kAllStrategies) {
    if (s == strategy_name(st)) return st;
  }
  throw DataError("unknown strategy '" + std::string(s) + "'");
}

inline std::string group_key(Strategy s, const Record& r) {
  switch (s) {
    case Strategy::kGlobal: return "all";
    case Strategy::kSpeed: return "tier=" + std::to_string(r.tier);
    case Strategy::kRtt: return "rtt=" + std::to_string(r.rtt_bin);
    case Strategy::kRttSpeed: return "tier=" + std::to_string(r.tier) + ",rtt=" + std::to_string(r.rtt_bin);
    case Strategy::kOracle: return "test=" + r.trace_id;
  }
  return "";
}

/// Candidate configuration: records for every trace of the selection split,
/// in a shared trace order.
struct Candidate {
  std::string method;
  double param = 0.0;
  const std::vector<Record>* records = nullptr;
};

struct GroupChoice {
  std::string group;
  std::size_t n = 0;
  /// Empty when no candidate qualified (the group runs to completion).
  std::optional<std::size_t> candidate;
  std::string method = "full";
  double param = 0.0;
  double median_rel_error = 0.0;
  double transfer_fraction = 1.0;
  std::uint64_t bytes_early = 0;
  std::uint64_t bytes_full = 0;
};

struct GroupPolicy {
  Strategy strategy = Strategy::kGlobal;
  std::vector<GroupChoice> groups;

  double transfer_fraction() const {
    std::uint64_t e = 0, f = 0;
    for (const auto& g : groups) {
      e += g.bytes_early;
      f += g.bytes_full;
    }
    return f ? static_cast<double>(e) / static_cast<double>(f) : 1.0;
  }

  const GroupChoice* find(const std::string& key) const {
    for (const auto& g : groups) {
      if (g.group == key) return &g;
    }
    return nullptr;
  }
};

/// Group medians must stay below the bound; a single test under the oracle
/// strategy may sit on it.
inline bool qualifies(Strategy s, double median_error, double bound) {
  return s == Strategy::kOracle ? median_error <= bound : median_error < bound;
}

/// Per group, the qualifying candidate with the least group transfer; ties
/// go to lower error, then to candidate order.
inline GroupPolicy select_adaptive(const std::vector<Candidate>& candidates, Strategy strategy,
                                   double bound = kDefaultErrorBound) {
  if (candidates.empty()) throw DataError("select_adaptive needs at least one candidate");
  const std::size_t n = candidates.front().records->size();
  for (const auto& c : candidates) {
    if (c.records->size() != n) throw DataError("candidates cover different trace sets");
  }
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[group_key(strategy, (*candidates.front().records)[i])].push_back(i);

  GroupPolicy policy;
  policy.strategy = strategy;
  for (const auto& [key, idx] : members) {
    GroupChoice choice;
    choice.group = key;
    choice.n = idx.size();
    for (std::size_t i : idx) choice.bytes_full += (*candidates.front().records)[i].total_bytes;
    choice.bytes_early = choice.bytes_full;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      std::vector<const Record*> rs;
      for (std::size_t i : idx) rs.push_back(&(*candidates[c].records)[i]);
      const Aggregate a = aggregate(rs);
      if (!qualifies(strategy, a.median_rel_error, bound)) continue;
      const bool better = !choice.candidate || a.transfer_fraction < choice.transfer_fraction ||
                          (a.transfer_fraction == choice.transfer_fraction && a.median_rel_error < choice.median_rel_error);
      if (!better) continue;
      choice.candidate = c;
      choice.method = candidates[c].method;
      choice.param = candidates[c].param;
      choice.median_rel_error = a.median_rel_error;
      choice.transfer_fraction = a.transfer_fraction;
      choice.bytes_early = a.bytes_early;
    }
    policy.groups.push_back(std::move(choice));
  }
  return policy;
}

/// Applies a selected policy to records of another split. Groups unseen at
/// selection time run to completion.
inline Aggregate apply_policy(const GroupPolicy& policy, const std::vector<Candidate>& candidates) {
  const std::size_t n = candidates.front().records->size();
  std::vector<Record> chosen;
  for (std::size_t i = 0; i < n; ++i) {
    const Record& base = (*candidates.front().records)[i];
    const GroupChoice* g = policy.find(group_key(policy.strategy, base));
    if (g && g->candidate) {
      chosen.push_back((*candidates[*g->candidate].records)[i]);
    } else {
      Record r = base;
      r.bytes_early = r.total_bytes;
      r.rel_error = 0.0;
      r.estimate_mbps = r.y_true_mbps;
      r.reason = StopReason::kEndOfTrace;
      chosen.push_back(r);
    }
  }
  return aggregate(chosen);
}

/// Deterministic selection/report split by id hash parity.
inline bool in_selection_split(std::string_view trace_id) { return fnv1a(trace_id) % 2 == 0; }

// ---------------------------------------------------------------------------
// Percentile-constrained savings.

struct CurvePoint {
  double p = 0.0;
  double transfer_fraction = 1.0;
  std::optional<std::size_t> candidate;
};

/// For each percentile p, the least transfer over candidates whose p-th
/// percentile error is below the bound; 1.0 when none qualifies.
inline std::vector<CurvePoint> percentile_curve(const std::vector<Candidate>& candidates, const std::vector<double>& ps,
                                                double bound = kDefaultErrorBound) {
  for (std::size_t i = 1; i < ps.size(); ++i) {
    if (!(ps[i] > ps[i - 1])) throw DataError("percentiles must be strictly ascending");
  }
  std::vector<CurvePoint> out;
  for (double p : ps) {
    if (!(p >= 0.0 && p <= 100.0)) throw DataError("percentile out of range");
    CurvePoint cp{p, 1.0, std::nullopt};
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      std::vector<double> errs;
      for (const Record& r : *candidates[c].records) errs.push_back(r.rel_error);
      if (!(percentile(errs, p) < bound)) continue;
      const double t = aggregate(*candidates[c].records).transfer_fraction;
      if (t < cp.transfer_fraction) {
        cp.transfer_fraction = t;
        cp.candidate = c;
      }
    }
    out.push_back(cp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output.

inline std::string records_csv(const std::vector<Record>& rs) {
  std::ostringstream out;
  out << "trace_id,method,param,stop_ms,bytes_early,estimate,rel_error,tier,rtt_bin,total_bytes,y_true_mbps,reason\n";
  for (const Record& r : rs) {
    out << r.trace_id << ',' << r.method << ',' << format_double(r.param) << ',' << r.stop_ms << ',' << r.bytes_early
        << ',' << format_double(r.estimate_mbps) << ',' << format_double(r.rel_error) << ',' << r.tier << ','
        << r.rtt_bin << ',' << r.total_bytes << ',' << format_double(r.y_true_mbps) << ',' << to_string(r.reason)
        << '\n';
  }
  return out.str();
}

inline std::string frontier_csv(const std::vector<FrontierPoint>& pts) {
  std::ostringstream out;
  out << "method,param,median_rel_error,transfer_fraction,savings,total_gb,n,nondominated\n";
  for (const auto& p : pts) {
    out << p.method << ',' << format_double(p.param) << ',' << format_double(p.median_rel_error) << ','
        << format_double(p.transfer_fraction) << ',' << format_double(1.0 - p.transfer_fraction) << ','
        << format_double(p.total_gb) << ',' << p.n << ',' << (p.nondominated ? 1 : 0) << '\n';
  }
  return out.str();
}

inline std::string groups_csv(const std::vector<GroupPolicy>& policies) {
  std::ostringstream out;
  out << "strategy,group,n,method,param,median_rel_error,transfer_fraction\n";
  for (const auto& pol : policies) {
    for (const auto& g : pol.groups) {
      out << strategy_name(pol.strategy) << ',' << '"' << g.group << '"' << ',' << g.n << ',' << g.method << ','
          << format_double(g.param) << ',' << format_double(g.median_rel_error) << ','
          << format_double(g.transfer_fraction) << '\n';
    }
  }
  return out.str();
}

inline std::string percentiles_csv(const std::string& family, const std::vector<CurvePoint>& curve,
                                   const std::vector<Candidate>& candidates, double bound) {
  std::ostringstream out;
  out << "family,percentile,bound,transfer_fraction,savings,method,param\n";
  for (const auto& c : curve) {
    out << family << ',' << format_double(c.p) << ',' << format_double(bound) << ','
        << format_double(c.transfer_fraction) << ',' << format_double(1.0 - c.transfer_fraction) << ','
        << (c.candidate ? candidates[*c.candidate].method : std::string("full")) << ','
        << format_double(c.candidate ? candidates[*c.candidate].param : 0.0) << '\n';
  }
  return out.str();
}

/// Parses a records.csv back; used to recompute aggregates from files.
inline std::vector<Record> read_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<Record> out;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() < 11) throw ParseError(line_no, "records.csv: expected at least 11 columns");
    try {
      Record r;
      r.trace_id = f[0];
      r.method = f[1];
      r.param = std::stod(f[2]);
      r.stop_ms = std::stoll(f[3]);
      r.bytes_early = std::stoull(f[4]);
      r.estimate_mbps = std::stod(f[5]);
      r.rel_error = std::stod(f[6]);
      r.tier = std::stoi(f[7]);
      r.rtt_bin = std::stoi(f[8]);
      r.total_bytes = std::stoull(f[9]);
      r.y_true_mbps = std::stod(f[10]);
      out.push_back(std::move(r));
    } catch (const std::exception&) {
      throw ParseError(line_no, "records.csv: invalid number");
    }
  }
  return out;
}

}  // namespace turbotest::eval
