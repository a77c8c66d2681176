#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace turbotest;

namespace {

std::string line(std::int64_t t, std::uint64_t bytes) {
  return "{\"t_us\":" + std::to_string(t) + ",\"bytes_acked\":" + std::to_string(bytes) +
         ",\"cwnd_bytes\":1000,\"bytes_in_flight\":500,\"rtt_us\":20000,\"retrans\":0,\"dup_acks\":0,\"pipe_full\":0}\n";
}

}  // namespace

TEST(ParseTrace, ThreeLineFile) {
  const Trace t = parse_trace(line(0, 0) + line(10000, 12500) + line(20000, 25000));
  EXPECT_EQ(t.snapshots().size(), 3u);
  EXPECT_NEAR(summarize(t).y_true_mbps, 10.0, 1e-12);
}

TEST(ParseTrace, EmptyFileHasNoSnapshots) {
  try {
    parse_trace(std::string_view(""));
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("no snapshots"), std::string::npos);
  }
}

TEST(ParseTrace, DecreasingBytesIsValidationError) {
  EXPECT_THROW(parse_trace(line(0, 0) + line(10000, 12500) + line(20000, 10000)), ValidationError);
  EXPECT_THROW(parse_trace(line(0, 0) + line(10000, 12500) + line(20000, 100) + line(30000, 200)), ValidationError);
}

TEST(ParseTrace, SingleGlitchIsRepaired) {
  const Trace t = parse_trace(line(0, 0) + line(10000, 12500) + line(20000, 12000) + line(30000, 30000));
  EXPECT_EQ(t.snapshots()[2].bytes_acked, 12500u);
}

TEST(ParseTrace, NonmonotonicTimestampsRejected) {
  EXPECT_THROW(parse_trace(line(0, 0) + line(20000, 100) + line(10000, 200)), ValidationError);
  EXPECT_THROW(parse_trace(line(0, 0) + line(0, 100)), ValidationError);
}

TEST(ParseTrace, MalformedLineReportsLineNumber) {
  try {
    parse_trace(line(0, 0) + line(10000, 5) + "{not json\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 3u);
  }
  EXPECT_THROW(parse_trace(std::string_view("{\"t_us\":0}\n")), ParseError);
  EXPECT_THROW(parse_trace(line(0, 0) + "[1,2]\n"), ParseError);
}

TEST(ParseTrace, HeaderSetsIdAndDuration) {
  const Trace t = parse_trace("{\"id\":\"abc\",\"duration_us\":50000}\n" + line(0, 0) + line(10000, 100));
  EXPECT_EQ(t.id(), "abc");
  EXPECT_EQ(t.duration_us(), 50000);
}

TEST(ParseTrace, SerializationRoundTrip) {
  for (const auto& p : tt_test::small_corpus(10, 3)) {
    const std::string text = serialize_trace(p.trace);
    const Trace back = parse_trace(text, "other");
    EXPECT_EQ(back, p.trace);
    EXPECT_EQ(serialize_trace(back), text);
  }
}

TEST(Resample, ConstantTrace) {
  const WindowSeries ws = resample(tt_test::constant_trace(100));
  ASSERT_EQ(ws.size(), 100u);
  for (const Frame& f : ws.frames) {
    EXPECT_NEAR(f[feature::kInstThroughput], 100.0, 1e-6);
    for (std::size_t i : {feature::kCwndStd, feature::kInflightStd, feature::kRttStd, feature::kRetransStd,
                          feature::kDupAckStd}) {
      EXPECT_EQ(f[i], 0.0);
    }
    for (double v : f) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Resample, GapCarriesForwardPriorFrame) {
  std::vector<Snapshot> snaps;
  std::uint64_t bytes = 0;
  for (std::int64_t t = 0; t <= 2'000'000; t += 10'000) {
    if (t > 1'000'000 && t < 1'300'000) continue;  // 300 ms without snapshots
    Snapshot s;
    s.t_us = t;
    bytes = static_cast<std::uint64_t>(t) * 10 / 8;
    s.bytes_acked = bytes;
    s.cwnd_bytes = 5000 + static_cast<std::uint64_t>(t % 70'000);
    s.rtt_us = 20'000;
    snaps.push_back(s);
  }
  const WindowSeries ws = resample(Trace("gap", snaps, 2'000'000));
  ASSERT_EQ(ws.size(), 20u);
  // Windows are right-closed: (1000, 1100] and (1100, 1200] see no snapshot.
  EXPECT_TRUE(ws.observed[9]);
  for (std::size_t w : {10u, 11u}) {
    EXPECT_FALSE(ws.observed[w]);
    EXPECT_EQ(ws.frames[w][feature::kCwndMean], ws.frames[9][feature::kCwndMean]);
    EXPECT_EQ(ws.frames[w][feature::kCumAvgThroughput], ws.frames[9][feature::kCumAvgThroughput]);
    EXPECT_EQ(ws.frames[w][feature::kCwndStd], 0.0);
    EXPECT_EQ(ws.bytes_through[w], ws.bytes_through[9]);
  }
  EXPECT_TRUE(ws.observed[12]);
}

TEST(Resample, TwoRateCumulativeAverage) {
  const Trace t = tt_test::rate_trace([](double s) { return s < 5.0 ? 50.0 : 150.0; });
  const WindowSeries ws = resample(t);
  // Brute-force average over raw snapshots.
  const auto& snaps = t.snapshots();
  double bits = 0.0;
  for (std::size_t i = 1; i < snaps.size(); ++i) bits += 8.0 * static_cast<double>(snaps[i].bytes_acked - snaps[i - 1].bytes_acked);
  const double brute = bits / static_cast<double>(snaps.back().t_us - snaps.front().t_us);
  EXPECT_NEAR(brute, 100.0, 1e-6);
  EXPECT_NEAR(ws.frames.back()[feature::kCumAvgThroughput], brute, 1e-6 * brute);
}

TEST(Resample, FinalCumulativeAverageMatchesGroundTruth) {
  for (const auto& p : tt_test::small_corpus(20, 5)) {
    const double y = p.summary.y_true_mbps;
    EXPECT_NEAR(p.windows.frames.back()[feature::kCumAvgThroughput], y, 1e-6 * y) << p.summary.id;
  }
}

TEST(Resample, WindowIntegralApproximatesGroundTruth) {
  for (const auto& p : tt_test::small_corpus(20, 6)) {
    double sum = 0.0;
    for (const Frame& f : p.windows.frames) sum += f[feature::kInstThroughput] * 0.1;
    const double y = p.summary.y_true_mbps;
    EXPECT_NEAR(sum / 10.0, y, 0.02 * y) << p.summary.id;
  }
}

TEST(Resample, DeterministicAndStreamingEquivalent) {
  const Trace t = tt_test::small_corpus(1, 9).front().trace;
  const WindowSeries a = resample(t), b = resample(t);
  EXPECT_EQ(a.frames, b.frames);
  Resampler r(window_count(t.duration_us()));
  for (const auto& s : t.snapshots()) r.push(s);
  EXPECT_EQ(r.finish().frames, a.frames);
}

TEST(RegressorInput, PadsWithLatestWindow) {
  const WindowSeries ws = tt_test::small_corpus(1, 2).front().windows;
  const RegressorInput in = regressor_input(ws, 500);
  ASSERT_EQ(in.values.size(), kRegressorArity);
  for (std::size_t slot = 0; slot < 15; ++slot) {
    for (std::size_t j = 0; j < kFeatureCount; ++j) EXPECT_EQ(in.values[slot * kFeatureCount + j], ws.frames[4][j]);
  }
  for (std::size_t w = 0; w < 5; ++w) {
    for (std::size_t j = 0; j < kFeatureCount; ++j) EXPECT_EQ(in.values[(15 + w) * kFeatureCount + j], ws.frames[w][j]);
  }
  EXPECT_EQ(in.elapsed_ms(), 500.0);
}

TEST(RegressorInput, ExactFitAndTail) {
  const WindowSeries ws = tt_test::small_corpus(1, 2).front().windows;
  const RegressorInput fit = regressor_input(ws, 2000);
  for (std::size_t w = 0; w < 20; ++w) {
    for (std::size_t j = 0; j < kFeatureCount; ++j) EXPECT_EQ(fit.values[w * kFeatureCount + j], ws.frames[w][j]);
  }
  const RegressorInput tail = regressor_input(ws, 10000);
  for (std::size_t w = 0; w < 20; ++w) {
    for (std::size_t j = 0; j < kFeatureCount; ++j) EXPECT_EQ(tail.values[w * kFeatureCount + j], ws.frames[80 + w][j]);
  }
}

TEST(RegressorInput, PaddedFrameCount) {
  // Distinct frames so that padding is identifiable by value.
  WindowSeries ws;
  for (int w = 0; w < 100; ++w) {
    Frame f{};
    f.fill(static_cast<double>(w + 1));
    ws.frames.push_back(f);
    ws.observed.push_back(true);
    ws.bytes_through.push_back(0);
  }
  for (std::int64_t t = 500; t <= 10000; t += 500) {
    const RegressorInput in = regressor_input(ws, t);
    const std::size_t k = static_cast<std::size_t>(t / 100);
    std::size_t padded = 0;
    for (std::size_t slot = 0; slot + 1 < 20 && in.values[slot * kFeatureCount] == in.values[19 * kFeatureCount]; ++slot) ++padded;
    EXPECT_EQ(padded, k >= 20 ? 0u : 20 - k) << t;
  }
}

TEST(RegressorInput, RangeErrors) {
  const WindowSeries ws = resample(tt_test::constant_trace(50));
  EXPECT_THROW(regressor_input(ws, 10500), RangeError);
  EXPECT_THROW(regressor_input(ws, 0), RangeError);
  EXPECT_THROW(regressor_input(ws, 250), RangeError);
}

TEST(ClassifierInput, MaskAndZeroPadding) {
  for (const auto& p : tt_test::small_corpus(5, 4)) {
    const ClassifierInput in = classifier_input(p.windows, 1000);
    ASSERT_EQ(in.values.size(), kClassifierArity);
    for (std::size_t w = 0; w < 100; ++w) EXPECT_EQ(in.mask[w], w < 10);
    double masked = 0.0;
    for (std::size_t i = 10 * kFeatureCount; i < 100 * kFeatureCount; ++i) masked += std::abs(in.values[i]);
    EXPECT_EQ(masked, 0.0);
    EXPECT_EQ(in.elapsed_ms(), 1000.0);
    const ClassifierInput full = classifier_input(p.windows, 10000);
    for (bool b : full.mask) EXPECT_TRUE(b);
  }
}

TEST(DecisionStrides, Grid) {
  EXPECT_EQ(decision_strides(10000).size(), 20u);
  EXPECT_EQ(decision_strides(10000).front(), 500);
  EXPECT_EQ(decision_strides(10000).back(), 10000);
  EXPECT_TRUE(decision_strides(499).empty());
}

TEST(Corpus, WriteReadRoundTrip) {
  tt_test::TempDir dir("corpus_rt");
  std::vector<Trace> traces;
  for (auto& p : tt_test::small_corpus(6, 12)) traces.push_back(p.trace);
  write_corpus_traces(dir.path, traces, 2);
  const auto back = read_corpus(dir.path, 3);
  ASSERT_EQ(back.size(), traces.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i], traces[i]);
  EXPECT_THROW(read_corpus(dir.path / "missing"), IoError);
}
