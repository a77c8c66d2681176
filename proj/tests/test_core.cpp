#include <set>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace turbotest;

TEST(RelError, DirectFormula) {
  EXPECT_DOUBLE_EQ(rel_error(100, 80), 0.20);
  EXPECT_DOUBLE_EQ(rel_error(250, 250), 0.0);
  EXPECT_NEAR(rel_error(50, 65), 0.30, 1e-12);
}

TEST(RelError, NonpositiveTruthIsDomainError) {
  EXPECT_THROW(rel_error(0, 10), DomainError);
  EXPECT_THROW(rel_error(-5, 10), DomainError);
}

TEST(AssignBins, Examples) {
  EXPECT_EQ(assign_bins(30, 10), (Bins{1, 0}));
  EXPECT_EQ(assign_bins(400, 234), (Bins{4, 4}));
  EXPECT_EQ(assign_bins(24.999, 23.999), (Bins{0, 0}));
}

TEST(AssignBins, EdgesBelongToUpperInterval) {
  const double tiers[] = {25, 100, 200, 400};
  const double rtts[] = {24, 52, 115, 234};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(assign_bins(tiers[i], 1).speed_tier, i + 1);
    EXPECT_EQ(assign_bins(std::nextafter(tiers[i], 0.0), 1).speed_tier, i);
    EXPECT_EQ(assign_bins(1, rtts[i]).rtt_bin, i + 1);
  }
}

TEST(AssignBins, TotalOverGrid) {
  for (double t = 0; t < 2000; t += 0.37) {
    for (double r : {0.01, 5.0, 24.0, 60.0, 300.0, 1e4}) {
      const Bins b = assign_bins(t, r);
      EXPECT_GE(b.speed_tier, 0);
      EXPECT_LT(b.speed_tier, kTierCount);
      EXPECT_GE(b.rtt_bin, 0);
      EXPECT_LT(b.rtt_bin, kRttBinCount);
    }
  }
}

TEST(Trace, RejectsInvariantViolations) {
  Snapshot a, b;
  a.t_us = 0;
  b.t_us = 10;
  b.bytes_acked = 100;
  EXPECT_THROW(Trace("x", {}, 10), ValidationError);
  EXPECT_THROW(Trace("x", {b, a}, 10), ValidationError);
  Snapshot c = b;
  c.t_us = 20;
  c.bytes_acked = 50;
  EXPECT_THROW(Trace("x", {a, b, c}, 30), ValidationError);
  EXPECT_THROW(Trace("x", {a, b}, 5), ValidationError);
  Snapshot bad_rtt = b;
  bad_rtt.rtt_us = 0;
  EXPECT_THROW(Trace("x", {a, bad_rtt}, 10), ValidationError);
  EXPECT_NO_THROW(Trace("x", {a, b}, 10));
}

TEST(Summary, GroundTruthIsMeanThroughput) {
  const Trace t = tt_test::constant_trace(100);
  const TraceSummary s = summarize(t);
  EXPECT_NEAR(s.y_true_mbps, 100.0, 1e-9);
  EXPECT_EQ(s.total_bytes, 125'000'000u);
  EXPECT_DOUBLE_EQ(s.min_rtt_ms, 20.0);
  EXPECT_EQ(s.speed_tier, 2);
  EXPECT_EQ(s.rtt_bin, 0);
}

TEST(Mbps, Conversion) {
  EXPECT_DOUBLE_EQ(mbps(125'000, 1'000'000), 1.0);
  EXPECT_DOUBLE_EQ(mbps(1, 0), 0.0);
}

TEST(StopReasonNames, AreDistinct) {
  std::set<std::string_view> names;
  for (StopReason r : {StopReason::kNone, StopReason::kClassifier, StopReason::kStatic, StopReason::kBbr,
                       StopReason::kTsh, StopReason::kCis, StopReason::kFallbackTimeout, StopReason::kEndOfTrace}) {
    names.insert(to_string(r));
  }
  EXPECT_EQ(names.size(), 8u);
}

TEST(Util, PercentileAndCrc) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 50), 2.5);
  EXPECT_EQ(crc32_of(std::string_view("123456789")), 0xCBF43926u);
}

TEST(Util, RngIsDeterministicPerStream) {
  Rng a = Rng::derive({7, 1}), b = Rng::derive({7, 1}), c = Rng::derive({7, 2});
  const double x = a.uniform();
  EXPECT_EQ(x, b.uniform());
  EXPECT_NE(x, c.uniform());
}

TEST(Util, ParallelForCoversEveryIndexOnce) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (int h : hits) EXPECT_EQ(h, 1);
}
