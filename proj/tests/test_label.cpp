#include <algorithm>
#include <fstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace turbotest;
using namespace turbotest::label;

namespace {

const std::vector<PreparedTrace>& corpus() {
  static const auto c = tt_test::small_corpus(60, 41);
  return c;
}

const learn::GbdtModel& regressor() {
  static const learn::GbdtModel m = [] {
    learn::GbdtParams p;
    p.n_trees = 40;
    return learn::train_gbdt(build_regression_dataset(corpus()).data, p, default_jobs());
  }();
  return m;
}

/// Naive oracle: scan strides in order and return the first qualifying one.
std::optional<std::int64_t> naive_t_star(const PreparedTrace& p, const learn::GbdtModel& m, double eps) {
  const std::int64_t limit = std::min<std::int64_t>(p.summary.duration_us / 1000, p.windows.span_ms());
  for (std::int64_t t = kStrideMs; t <= limit; t += kStrideMs) {
    const double est = m.predict(regressor_input(p.windows, t).values);
    if (std::abs(p.summary.y_true_mbps - est) / p.summary.y_true_mbps <= eps / 100.0) return t;
  }
  return std::nullopt;
}

/// Regressor that always returns the ground truth of one trace.
learn::GbdtModel constant_model(double v) { return learn::constant_gbdt(v, kRegressorArity); }

}  // namespace

TEST(RegressionDataset, SampleCounts) {
  std::vector<PreparedTrace> c(corpus().begin(), corpus().begin() + 50);
  c.insert(c.end(), corpus().begin(), corpus().begin() + 50);
  const RegressionSet s = build_regression_dataset(c);
  EXPECT_EQ(s.data.rows(), 2000u);
  for (std::size_t r = 0; r < s.refs.size(); ++r) EXPECT_EQ(s.data.y[r], c[s.refs[r].trace].summary.y_true_mbps);
}

TEST(RegressionDataset, FirstSampleIsPadded) {
  const RegressionSet s = build_regression_dataset({corpus()[0]});
  const auto row = s.data.row(0);
  const auto& latest = corpus()[0].windows.frames[4];
  for (std::size_t j = 0; j < kFeatureCount; ++j) EXPECT_EQ(row[j], latest[j]);
  EXPECT_EQ(row[kRegressorArity - 1], 500.0);
}

TEST(RegressionDataset, ShortTracesSkipped) {
  const auto p = tt_test::prep(tt_test::constant_trace(50, 400'000));
  const RegressionSet s = build_regression_dataset({p});
  EXPECT_EQ(s.data.rows(), 0u);
  ASSERT_EQ(s.skipped.size(), 1u);
}

TEST(OracleStopTime, PerfectRegressorStopsAtFirstStride) {
  for (const auto& p : corpus()) EXPECT_EQ(oracle_stop_time(p, constant_model(p.summary.y_true_mbps), 5), 500);
}

TEST(OracleStopTime, ZeroRegressorNeverQualifies) {
  for (const auto& p : corpus()) EXPECT_FALSE(oracle_stop_time(p, constant_model(0), 20).has_value());
}

TEST(OracleStopTime, MatchesNaiveScan) {
  const auto constant = tt_test::prep(tt_test::constant_trace(100));
  EXPECT_EQ(oracle_stop_time(constant, regressor(), 15), naive_t_star(constant, regressor(), 15));
  for (const auto& p : corpus()) {
    for (double eps : kDefaultEpsilons) EXPECT_EQ(oracle_stop_time(p, regressor(), eps), naive_t_star(p, regressor(), eps));
  }
}

TEST(Labels, StepConstruction) {
  std::vector<std::int64_t> strides;
  for (int i = 1; i <= 20; ++i) strides.push_back(500 * i);
  const OracleLabeling l = make_labeling(strides, 5);
  EXPECT_EQ(l.t_star_ms, 3000);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(l.labels[i], i < 5 ? 0 : 1);
  const OracleLabeling none = make_labeling(strides, std::nullopt);
  for (auto v : none.labels) EXPECT_EQ(v, 0);
}

TEST(Labels, StepFunctionAndEpsilonMonotonicity) {
  const auto all = label_corpus(corpus(), regressor(), kDefaultEpsilons, kStrideMs, 2);
  double prev_rate = -1;
  for (std::size_t e = 0; e < all.size(); ++e) {
    for (std::size_t i = 0; i < corpus().size(); ++i) {
      const auto& l = all[e][i];
      for (std::size_t s = 1; s < l.labels.size(); ++s) EXPECT_LE(l.labels[s - 1], l.labels[s]);
      if (l.t_star_ms) {
        EXPECT_EQ(l.labels[static_cast<std::size_t>(*l.t_star_ms / kStrideMs) - 1], 1);
      }
      if (e > 0 && all[e - 1][i].t_star_ms) {
        ASSERT_TRUE(l.t_star_ms.has_value());
        EXPECT_LE(*l.t_star_ms, *all[e - 1][i].t_star_ms);
      }
    }
    const double rate = positive_rate(all[e]);
    EXPECT_GE(rate, prev_rate);
    prev_rate = rate;
  }
}

TEST(Labels, ClassificationDatasetIsReproducible) {
  const ClassificationSet a = build_classification_dataset(corpus(), regressor(), 15, kStrideMs, 1);
  const ClassificationSet b = build_classification_dataset(corpus(), regressor(), 15, kStrideMs, 3);
  EXPECT_EQ(a.data.x, b.data.x);
  EXPECT_EQ(a.data.y, b.data.y);
  EXPECT_EQ(a.data.n_features, kClassifierArity);
  const auto l = label_corpus(corpus(), regressor(), {15});
  EXPECT_EQ(labels_csv(corpus(), l[0], false), labels_csv(corpus(), l[0], false));
}

TEST(Labels, CsvRoundTrip) {
  tt_test::TempDir dir("labels");
  std::vector<PreparedTrace> few(corpus().begin(), corpus().begin() + 3);
  const auto l = label_corpus(few, regressor(), {20});
  const std::string path = (dir.path / "labels.csv").string();
  write_file(path, labels_csv(few, l[0], true));
  const auto rows = read_labels_csv(path);
  ASSERT_EQ(rows.size(), 60u);
  std::size_t r = 0;
  for (std::size_t i = 0; i < few.size(); ++i) {
    for (std::size_t s = 0; s < l[0][i].labels.size(); ++s, ++r) {
      EXPECT_EQ(rows[r].trace_id, few[i].summary.id);
      EXPECT_EQ(rows[r].t_ms, l[0][i].strides[s]);
      EXPECT_EQ(rows[r].label, l[0][i].labels[s]);
    }
  }
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), static_cast<long>(2 + kClassifierArity));
}

TEST(Labels, CrossFitUsesHeldOutModels) {
  learn::GbdtParams p;
  p.n_trees = 20;
  const auto cf = crossfit_labelings(corpus(), p, {10, 30}, 3, kStrideMs, 2);
  ASSERT_EQ(cf.size(), 2u);
  // Independent check for fold 1: retrain on the other folds and rescan.
  std::vector<PreparedTrace> train;
  for (std::size_t i = 0; i < corpus().size(); ++i) {
    if (i % 3 != 1) train.push_back(corpus()[i]);
  }
  const learn::GbdtModel m = learn::train_gbdt(build_regression_dataset(train).data, p);
  for (std::size_t i = 1; i < corpus().size(); i += 3) {
    EXPECT_EQ(cf[0][i].t_star_ms, naive_t_star(corpus()[i], m, 10));
    EXPECT_EQ(cf[1][i].t_star_ms, naive_t_star(corpus()[i], m, 30));
  }
  EXPECT_THROW(crossfit_labelings(corpus(), p, {10}, 1), DataError);
}

TEST(Labels, AttachRejectsMismatch) {
  ClassificationSet set = classification_features({corpus()[0]});
  std::vector<OracleLabeling> wrong(2);
  EXPECT_THROW(attach_labels(set, wrong), DataError);
}
