#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace turbotest;
using namespace turbotest::eval;

namespace {

const std::vector<PreparedTrace>& corpus() {
  static const auto c = tt_test::small_corpus(40, 61, synth::Mode::kNatural);
  return c;
}

Record rec(const std::string& id, int tier, int rtt, double err, std::uint64_t early, std::uint64_t total = 1000) {
  Record r;
  r.trace_id = id;
  r.method = "m";
  r.tier = tier;
  r.rtt_bin = rtt;
  r.rel_error = err;
  r.bytes_early = early;
  r.total_bytes = total;
  r.y_true_mbps = 100;
  r.estimate_mbps = 100 * (1 + err);
  return r;
}

std::vector<Method> methods_of(heuristics::Kind kind, const std::vector<std::string>& params) {
  RunConfig cfg;
  return pipeline::heuristic_methods(kind, params, cfg);
}

}  // namespace

TEST(EvaluatePolicy, FullRunIdentity) {
  const Aggregate a = aggregate(evaluate_policy(corpus(), full_run_method(), 2));
  EXPECT_EQ(a.median_rel_error, 0.0);
  EXPECT_EQ(a.transfer_fraction, 1.0);
  EXPECT_EQ(a.n, corpus().size());
}

TEST(EvaluatePolicy, StaticCapBelowEveryTrace) {
  // Rates at which 12.5 MB is reached exactly on a stride boundary.
  std::vector<PreparedTrace> c;
  for (double r : {50.0, 100.0, 200.0}) c.push_back(tt_test::prep(tt_test::constant_trace(r, 10'000'000, "r" + std::to_string(static_cast<int>(r)))));
  const std::uint64_t cap = 12'500'000;
  const auto rs = evaluate_policy(c, heuristic_method(heuristics::parse_heuristic("static:cap=12.5MB,stride=500")));
  double total = 0;
  for (const auto& p : c) total += static_cast<double>(p.summary.total_bytes);
  EXPECT_NEAR(aggregate(rs).transfer_fraction, static_cast<double>(cap * c.size()) / total, 1e-12);
}

TEST(EvaluatePolicy, MlPolicyMatchesReplay) {
  auto reg = std::make_shared<const learn::GbdtModel>(learn::constant_gbdt(80, kRegressorArity));
  learn::MlpModel net = learn::zero_mlp(kClassifierArity, {3});
  net.biases.back()[0] = -0.1;
  net.weights.back()(0, 0) = 1.0;
  net.weights[0](0, kClassifierArity - 1) = 1e-4;  // fires once elapsed grows
  auto clf = std::make_shared<const learn::MlpModel>(net);
  auto policy = std::make_shared<const engine::Policy>(engine::model_policy(reg, clf));
  const auto rs = evaluate_policy(corpus(), turbotest_method(15, policy), 3);
  for (std::size_t i = 0; i < corpus().size(); ++i) {
    const TerminationOutcome o = engine::replay(*policy, corpus()[i].trace).outcome;
    EXPECT_EQ(rs[i].stop_ms, o.stop_time_ms);
    EXPECT_EQ(rs[i].bytes_early, o.bytes_at_stop);
    EXPECT_EQ(rs[i].estimate_mbps, o.estimate_mbps);
    EXPECT_EQ(rs[i].rel_error, o.rel_error);
    EXPECT_EQ(rs[i].reason, o.reason);
  }
}

TEST(ParetoSweep, BbrTransferIncreasesWithK) {
  const Sweep s = pareto_sweep(corpus(), methods_of(heuristics::Kind::kBbr, {"1", "2", "3", "5", "7"}), 2);
  ASSERT_EQ(s.points.size(), 5u);
  for (std::size_t i = 1; i < s.points.size(); ++i) {
    EXPECT_GE(s.points[i].transfer_fraction, s.points[i - 1].transfer_fraction);
    for (std::size_t t = 0; t < corpus().size(); ++t) EXPECT_GE(s.records[i][t].bytes_early, s.records[i - 1][t].bytes_early);
  }
}

TEST(ParetoSweep, SingleParameterIsItsOwnFrontier) {
  const Sweep s = pareto_sweep(corpus(), methods_of(heuristics::Kind::kTsh, {"25"}));
  ASSERT_EQ(s.points.size(), 1u);
  EXPECT_TRUE(s.points[0].nondominated);
  EXPECT_THROW(pareto_sweep(corpus(), {}), DataError);
}

TEST(ParetoSweep, FrontierMarksNondominated) {
  std::vector<FrontierPoint> pts{{"a", 1, 0.1, 0.5, 0, 1, false}, {"a", 2, 0.2, 0.2, 0, 1, false},
                                 {"a", 3, 0.3, 0.6, 0, 1, false}, {"a", 4, 0.1, 0.5, 0, 1, false}};
  mark_frontier(pts);
  EXPECT_TRUE(pts[0].nondominated);
  EXPECT_TRUE(pts[1].nondominated);
  EXPECT_FALSE(pts[2].nondominated);
  EXPECT_TRUE(pts[3].nondominated);
  EXPECT_TRUE(strictly_dominates(pts[1], pts[2]));
  EXPECT_FALSE(strictly_dominates(pts[0], pts[3]));
}

TEST(ParetoSweep, RepresentativePoint) {
  std::vector<FrontierPoint> pts{{"t", 5, 0.12, 0.3, 0, 1, false}, {"t", 15, 0.19, 0.1, 0, 1, false},
                                 {"t", 25, 0.25, 0.05, 0, 1, false}};
  EXPECT_EQ(representative_point(pts).param, 15);
  std::vector<FrontierPoint> none{{"t", 5, 0.3, 0.3, 0, 1, false}, {"t", 15, 0.4, 0.1, 0, 1, false}};
  EXPECT_EQ(representative_point(none).param, 5);
}

TEST(ParetoSweep, HeuristicsInvariantUnderShuffle) {
  std::vector<PreparedTrace> shuffled = corpus();
  Rng rng = Rng::derive({3});
  rng.shuffle(shuffled);
  const auto ms = methods_of(heuristics::Kind::kCis, {"0.8", "0.95"});
  const Sweep a = pareto_sweep(corpus(), ms), b = pareto_sweep(shuffled, ms);
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].median_rel_error, b.points[i].median_rel_error);
    EXPECT_EQ(a.points[i].transfer_fraction, b.points[i].transfer_fraction);
  }
}

TEST(Aggregates, RecomputableFromCsv) {
  const Sweep s = pareto_sweep(corpus(), methods_of(heuristics::Kind::kStatic, {"10MB"}));
  const auto back = read_records_csv(records_csv(s.records[0]));
  const Aggregate a = aggregate(s.records[0]), b = aggregate(back);
  EXPECT_EQ(a.median_rel_error, b.median_rel_error);
  EXPECT_EQ(a.transfer_fraction, b.transfer_fraction);
  EXPECT_EQ(a.bytes_early, b.bytes_early);
}

TEST(SelectAdaptive, NoQualifyingParameterRunsToCompletion) {
  const std::vector<Record> a{rec("x", 0, 0, 0.3, 100), rec("y", 0, 0, 0.25, 100)};
  const std::vector<Record> b{rec("x", 0, 0, 0.2, 300), rec("y", 0, 0, 0.21, 300)};
  const GroupPolicy p = select_adaptive({{"m", 1, &a}, {"m", 2, &b}}, Strategy::kGlobal);
  ASSERT_EQ(p.groups.size(), 1u);
  EXPECT_FALSE(p.groups[0].candidate.has_value());
  EXPECT_EQ(p.groups[0].method, "full");
  EXPECT_EQ(p.transfer_fraction(), 1.0);
}

TEST(SelectAdaptive, PicksMostAggressiveQualifying) {
  const std::vector<Record> e5{rec("x", 1, 0, 0.12, 300), rec("y", 1, 0, 0.12, 300)};
  const std::vector<Record> e15{rec("x", 1, 0, 0.19, 100), rec("y", 1, 0, 0.19, 100)};
  const std::vector<Record> e25{rec("x", 1, 0, 0.3, 50), rec("y", 1, 0, 0.3, 50)};
  const GroupPolicy p = select_adaptive({{"tt", 5, &e5}, {"tt", 15, &e15}, {"tt", 25, &e25}}, Strategy::kSpeed);
  ASSERT_EQ(p.groups.size(), 1u);
  EXPECT_EQ(p.groups[0].param, 15);
  EXPECT_NEAR(p.groups[0].transfer_fraction, 0.1, 1e-12);
}

TEST(SelectAdaptive, OracleIsPerTest) {
  // Candidate 0 stops at stride 1 with 10% error on x; candidate 1 is better on y.
  const std::vector<Record> s1{rec("x", 0, 0, 0.1, 40), rec("y", 0, 0, 0.5, 40)};
  const std::vector<Record> s2{rec("x", 0, 0, 0.05, 400), rec("y", 0, 0, 0.1, 400)};
  const GroupPolicy p = select_adaptive({{"m", 1, &s1}, {"m", 2, &s2}}, Strategy::kOracle);
  ASSERT_EQ(p.groups.size(), 2u);
  EXPECT_EQ(p.find("test=x")->param, 1);
  EXPECT_EQ(p.find("test=y")->param, 2);
  const GroupPolicy glob = select_adaptive({{"m", 1, &s1}, {"m", 2, &s2}}, Strategy::kGlobal);
  EXPECT_LE(p.transfer_fraction(), glob.transfer_fraction());
}

TEST(SelectAdaptive, GroupsPartitionAndConstraintHolds) {
  const auto ms = methods_of(heuristics::Kind::kBbr, {"1", "2", "3", "5", "7"});
  const Sweep s = pareto_sweep(corpus(), ms, 2);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < ms.size(); ++i) cands.push_back({ms[i].name, ms[i].param, &s.records[i]});
  for (Strategy st : kAllStrategies) {
    const GroupPolicy p = select_adaptive(cands, st);
    std::size_t covered = 0;
    for (const auto& g : p.groups) {
      covered += g.n;
      if (g.candidate) {
        EXPECT_TRUE(qualifies(st, g.median_rel_error, kDefaultErrorBound));
      }
    }
    EXPECT_EQ(covered, corpus().size());
    const Aggregate applied = apply_policy(p, cands);
    EXPECT_NEAR(applied.transfer_fraction, p.transfer_fraction(), 1e-12);
  }
}

TEST(PercentileCurve, Properties) {
  const auto ms = methods_of(heuristics::Kind::kStatic, {"1MB", "10MB", "25MB", "100MB", "1GB"});
  const Sweep s = pareto_sweep(corpus(), ms, 2);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < ms.size(); ++i) cands.push_back({ms[i].name, ms[i].param, &s.records[i]});
  const auto curve = percentile_curve(cands, kDefaultPercentiles);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i].transfer_fraction, curve[i - 1].transfer_fraction);
  EXPECT_NEAR(curve[0].transfer_fraction, select_adaptive(cands, Strategy::kGlobal).transfer_fraction(), 1e-12);
  double lowest = 1.0;
  for (const auto& pt : s.points) lowest = std::min(lowest, pt.transfer_fraction);
  const auto free = percentile_curve(cands, {50, 90}, std::numeric_limits<double>::infinity());
  EXPECT_EQ(free[0].transfer_fraction, lowest);
  EXPECT_EQ(free[1].transfer_fraction, lowest);
  EXPECT_THROW(percentile_curve(cands, {90, 50}), DataError);
}

TEST(SelectionSplit, RoughlyHalf) {
  int in = 0;
  for (int i = 0; i < 2000; ++i) in += in_selection_split("id-" + std::to_string(i));
  EXPECT_GT(in, 900);
  EXPECT_LT(in, 1100);
}

TEST(CsvOutputs, Headers) {
  EXPECT_EQ(records_csv({}).substr(0, 56), "trace_id,method,param,stop_ms,bytes_early,estimate,rel_e");
  EXPECT_EQ(frontier_csv({}), "method,param,median_rel_error,transfer_fraction,savings,total_gb,n,nondominated\n");
  EXPECT_EQ(groups_csv({}), "strategy,group,n,method,param,median_rel_error,transfer_fraction\n");
  const auto table = percentile_table({rec("a", 0, 0, 0.1, 10), rec("b", 0, 0, 0.3, 30)}, {50});
  EXPECT_NEAR(table[0].rel_error, 0.2, 1e-12);
  EXPECT_NEAR(table[0].transfer, 0.02, 1e-12);
}
