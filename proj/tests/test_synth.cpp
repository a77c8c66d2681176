#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace turbotest;

namespace {

synth::GenSpec clean_spec(double capacity, double tau) {
  synth::GenSpec g;
  g.capacity_min_mbps = g.capacity_max_mbps = capacity;
  g.ramp_tau_min_s = g.ramp_tau_max_s = tau;
  g.noise_rel_std_min = g.noise_rel_std_max = 0.0;
  g.ar_coef_min = g.ar_coef_max = 0.0;
  g.event_rate_hz = 0.0;
  g.level_shift_rate_hz = 0.0;
  return g;
}

/// Composite Simpson integral of f over [a, b].
double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST(GenTrace, ConstantRateLimit) {
  const Trace t = synth::gen_trace(clean_spec(100, 1e-6), 0);
  EXPECT_NEAR(summarize(t).y_true_mbps, 100.0, 1.0);
}

TEST(GenTrace, RampMatchesIntegral) {
  const double c = 100, tau = 2.0;
  const double closed = c * (1.0 - (tau / 10.0) * (1.0 - std::exp(-10.0 / tau)));
  const double numeric = simpson([&](double t) { return c * (1.0 - std::exp(-t / tau)); }, 0.0, 10.0) / 10.0;
  EXPECT_NEAR(closed, numeric, 1e-6);
  for (std::size_t i = 0; i < 5; ++i) {
    const double y = summarize(synth::gen_trace(clean_spec(c, tau), i)).y_true_mbps;
    EXPECT_NEAR(y, numeric, 0.02 * numeric);
  }
}

TEST(GenTrace, DeterministicBytes) {
  synth::GenSpec g;
  g.seed = 42;
  for (std::size_t i : {0u, 3u, 17u}) {
    EXPECT_EQ(serialize_trace(synth::gen_trace(g, i)), serialize_trace(synth::gen_trace(g, i)));
  }
  EXPECT_NE(serialize_trace(synth::gen_trace(g, 0)), serialize_trace(synth::gen_trace(g, 1)));
  synth::GenSpec other = g;
  other.seed = 43;
  EXPECT_NE(serialize_trace(synth::gen_trace(g, 0)), serialize_trace(synth::gen_trace(other, 0)));
}

TEST(GenTrace, SnapshotInvariantsHold) {
  for (const auto& preset : {"default", "hard"}) {
    synth::GenSpec g = synth::GenSpec::by_preset(preset);
    g.n_traces = 30;
    for (const Trace& t : synth::gen_corpus(g).traces) {
      EXPECT_EQ(t.duration_us(), kNominalDurationUs);
      EXPECT_EQ(t.snapshots().back().t_us, t.duration_us());
      EXPECT_GT(t.snapshots().size(), 700u);
      for (const Snapshot& s : t.snapshots()) {
        EXPECT_LE(s.bytes_in_flight, s.cwnd_bytes);
        EXPECT_GT(s.rtt_us, 0);
      }
    }
  }
}

TEST(GenTrace, PipeFullReachedWithoutNoise) {
  synth::GenSpec g = clean_spec(50, 0.1);
  g.capacity_min_mbps = 2;
  g.capacity_max_mbps = 900;
  g.ramp_tau_max_s = 2.0;
  for (std::size_t i = 0; i < 40; ++i) {
    const Trace t = synth::gen_trace(g, i);
    std::uint64_t prev = 0;
    for (const Snapshot& s : t.snapshots()) {
      EXPECT_GE(s.pipe_full, prev);
      prev = s.pipe_full;
    }
    EXPECT_GE(prev, 1u) << t.id();
  }
}

TEST(GenCorpus, BalancedCountsPerTier) {
  synth::GenSpec g;
  g.n_traces = 100;
  g.mode = synth::Mode::kBalanced;
  const auto c = synth::gen_corpus(g, 2);
  std::array<int, kTierCount> counts{};
  for (const auto& s : c.summaries) ++counts[static_cast<std::size_t>(s.speed_tier)];
  for (int n : counts) EXPECT_EQ(n, 20);
}

TEST(GenCorpus, NaturalTierWeightsFitTarget) {
  synth::GenSpec g;
  g.n_traces = 1500;
  g.seed = 3;
  g.tier_weights = std::array<double, kTierCount>{0.3, 0.3, 0.2, 0.1, 0.1};
  const auto c = synth::gen_corpus(g, default_jobs());
  std::array<int, kTierCount> counts{};
  for (const auto& s : c.summaries) ++counts[static_cast<std::size_t>(s.speed_tier)];
  // Pearson goodness of fit; 18.47 is the 0.999 quantile of chi-square with 4 dof.
  double chi2 = 0.0;
  for (int k = 0; k < kTierCount; ++k) {
    const double expected = (*g.tier_weights)[static_cast<std::size_t>(k)] * static_cast<double>(g.n_traces);
    const double d = counts[static_cast<std::size_t>(k)] - expected;
    chi2 += d * d / expected;
  }
  EXPECT_LT(chi2, 18.47);
}

TEST(GenCorpus, ManifestMatchesRecomputedTruth) {
  tt_test::TempDir dir("synth_manifest");
  synth::GenSpec g;
  g.n_traces = 25;
  const auto c = synth::gen_corpus(g);
  synth::write_corpus(dir.path, c, 2);
  const auto traces = read_corpus(dir.path);
  std::ifstream in(dir.path / "manifest.csv");
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "id,y_true_mbps,total_bytes,min_rtt_ms,tier,rtt_bin,preset");
  std::size_t i = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string id, y;
    std::getline(ss, id, ',');
    std::getline(ss, y, ',');
    ASSERT_LT(i, traces.size());
    const TraceSummary s = summarize(traces[i]);
    EXPECT_EQ(id, s.id);
    EXPECT_DOUBLE_EQ(std::stod(y), s.y_true_mbps);
    ++i;
  }
  EXPECT_EQ(i, traces.size());
}

TEST(GenCorpus, IndependentOfJobCount) {
  synth::GenSpec g;
  g.n_traces = 12;
  const auto a = synth::gen_corpus(g, 1), b = synth::gen_corpus(g, 4);
  for (std::size_t i = 0; i < a.traces.size(); ++i) EXPECT_EQ(a.traces[i], b.traces[i]);
}

TEST(GenSpec, ValidationAndPresets) {
  synth::GenSpec g;
  g.capacity_min_mbps = 10;
  g.capacity_max_mbps = 5;
  EXPECT_THROW(g.validate(), DataError);
  EXPECT_THROW(synth::GenSpec::by_preset("nope"), DataError);
  const synth::GenSpec hard = synth::GenSpec::hard();
  EXPECT_EQ(hard.preset, "hard");
  EXPECT_LE(hard.capacity_max_mbps, 25.0);
}
