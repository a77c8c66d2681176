#pragma once

// Stage-1 regression datasets, oracle stopping times against a trained
// regressor, and Stage-2 step labels.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "turbotest/core.hpp"
#include "turbotest/learn/dataset.hpp"
#include "turbotest/learn/gbdt.hpp"
#include "turbotest/traceio.hpp"
#include "turbotest/util.hpp"

namespace turbotest::label {

inline const std::vector<double> kDefaultEpsilons{5, 10, 15, 20, 25, 30, 35};

/// Decision strides of a trace: stride, 2*stride, ... not past its duration.
inline std::vector<std::int64_t> strides_of(const PreparedTrace& p, int stride_ms = kStrideMs) {
  const std::int64_t limit = std::min<std::int64_t>(p.summary.duration_us / 1000, p.windows.span_ms());
  return decision_strides(limit, stride_ms);
}

/// Row provenance for assembled datasets.
struct SampleRef {
  std::size_t trace = 0;
  std::int64_t t_ms = 0;
};

struct RegressionSet {
  learn::Dataset data{kRegressorArity};
  std::vector<SampleRef> refs;
  std::vector<std::string> skipped;
};

/// One sample per (trace, stride) with the trace's y_true as target.
inline RegressionSet build_regression_dataset(const std::vector<PreparedTrace>& corpus, int stride_ms = kStrideMs) {
  RegressionSet out;
  std::size_t total = 0;
  for (const auto& p : corpus) total += strides_of(p, stride_ms).size();
  out.data.reserve(total);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto strides = strides_of(corpus[i], stride_ms);
    if (strides.empty()) {
      out.skipped.push_back(corpus[i].summary.id);
      continue;
    }
    for (std::int64_t t : strides) {
      out.data.add(regressor_input(corpus[i].windows, t).values, corpus[i].summary.y_true_mbps);
      out.refs.push_back({i, t});
    }
  }
  return out;
}

/// Regressor relative error at every stride of one trace.
inline std::vector<double> stride_errors(const PreparedTrace& p, const learn::GbdtModel& regressor,
                                         int stride_ms = kStrideMs) {
  std::vector<double> out;
  for (std::int64_t t : strides_of(p, stride_ms)) {
    out.push_back(rel_error(p.summary.y_true_mbps, regressor.predict(regressor_input(p.windows, t).values)));
  }
  return out;
}

/// Whether an error meets tolerance eps (percent).
inline bool within(double err, double epsilon_pct) { return err <= epsilon_pct / 100.0; }

/// First-passage stride index for each epsilon, via a running minimum and a
/// binary search over it.
inline std::vector<std::optional<std::size_t>> first_passage(const std::vector<double>& errors,
                                                             const std::vector<double>& epsilons) {
  std::vector<double> running(errors.size());
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < errors.size(); ++j) running[j] = m = std::min(m, errors[j]);
  std::vector<std::optional<std::size_t>> out;
  for (double eps : epsilons) {
    // running is nonincreasing: find the first j with within(running[j], eps).
    auto it = std::partition_point(running.begin(), running.end(), [eps](double v) { return !within(v, eps); });
    if (it == running.end()) out.push_back(std::nullopt);
    else out.push_back(static_cast<std::size_t>(it - running.begin()));
  }
  return out;
}

struct OracleLabeling {
  std::optional<std::int64_t> t_star_ms;
  std::vector<std::int64_t> strides;
  std::vector<std::uint8_t> labels;
};

inline OracleLabeling make_labeling(std::vector<std::int64_t> strides, std::optional<std::size_t> first) {
  OracleLabeling l;
  l.labels.assign(strides.size(), 0);
  if (first) {
    l.t_star_ms = strides[*first];
    std::fill(l.labels.begin() + static_cast<std::ptrdiff_t>(*first), l.labels.end(), 1);
  }
  l.strides = std::move(strides);
  return l;
}

inline std::vector<OracleLabeling> oracle_labelings(const PreparedTrace& p, const learn::GbdtModel& regressor,
                                                   const std::vector<double>& epsilons, int stride_ms = kStrideMs) {
  const auto errors = stride_errors(p, regressor, stride_ms);
  const auto firsts = first_passage(errors, epsilons);
  std::vector<OracleLabeling> out;
  for (const auto& f : firsts) out.push_back(make_labeling(strides_of(p, stride_ms), f));
  return out;
}

inline std::optional<std::int64_t> oracle_stop_time(const PreparedTrace& p, const learn::GbdtModel& regressor,
                                                    double epsilon_pct, int stride_ms = kStrideMs) {
  return oracle_labelings(p, regressor, {epsilon_pct}, stride_ms).front().t_star_ms;
}

/// Corpus-wide labelings: result[e][i] for epsilon e and trace i.
inline std::vector<std::vector<OracleLabeling>> label_corpus(const std::vector<PreparedTrace>& corpus,
                                                             const learn::GbdtModel& regressor,
                                                             const std::vector<double>& epsilons,
                                                             int stride_ms = kStrideMs, unsigned jobs = 1) {
  std::vector<std::vector<OracleLabeling>> per_trace(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) {
    per_trace[i] = oracle_labelings(corpus[i], regressor, epsilons, stride_ms);
  });
  std::vector<std::vector<OracleLabeling>> out(epsilons.size(), std::vector<OracleLabeling>(corpus.size()));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (std::size_t e = 0; e < epsilons.size(); ++e) out[e][i] = std::move(per_trace[i][e]);
  }
  return out;
}

/// Cross-fitted labelings: trace i is labeled by a regressor trained with the
/// same params on every trace outside fold i % folds. In-sample errors of a
/// boosted model are optimistic, so this keeps labels honest on small corpora.
inline std::vector<std::vector<OracleLabeling>> crossfit_labelings(const std::vector<PreparedTrace>& corpus,
                                                                   const learn::GbdtParams& params,
                                                                   const std::vector<double>& epsilons,
                                                                   std::size_t folds, int stride_ms = kStrideMs,
                                                                   unsigned jobs = 1) {
  if (folds < 2) throw DataError("cross-fitting needs at least 2 folds");
  if (corpus.size() < folds) throw DataError("fewer traces than folds");
  std::vector<std::vector<OracleLabeling>> out(epsilons.size(), std::vector<OracleLabeling>(corpus.size()));
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<PreparedTrace> train;
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (i % folds == f) held.push_back(i);
      else train.push_back(corpus[i]);
    }
    const learn::GbdtModel model = learn::train_gbdt(build_regression_dataset(train, stride_ms).data, params, jobs);
    std::vector<std::vector<OracleLabeling>> per(held.size());
    parallel_for(held.size(), jobs, [&](std::size_t h) {
      per[h] = oracle_labelings(corpus[held[h]], model, epsilons, stride_ms);
    });
    for (std::size_t h = 0; h < held.size(); ++h) {
      for (std::size_t e = 0; e < epsilons.size(); ++e) out[e][held[h]] = std::move(per[h][e]);
    }
  }
  return out;
}

/// Classifier features for every (trace, stride); labels are attached per
/// epsilon, since the features do not depend on it.
struct ClassificationSet {
  learn::Dataset data{kClassifierArity};
  std::vector<SampleRef> refs;
};

inline ClassificationSet classification_features(const std::vector<PreparedTrace>& corpus, int stride_ms = kStrideMs) {
  ClassificationSet out;
  std::size_t total = 0;
  for (const auto& p : corpus) total += strides_of(p, stride_ms).size();
  out.data.reserve(total);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (std::int64_t t : strides_of(corpus[i], stride_ms)) {
      out.data.add(classifier_input(corpus[i].windows, t).values, 0.0);
      out.refs.push_back({i, t});
    }
  }
  return out;
}

/// Overwrites the targets of `set` with the step labels of one epsilon.
inline void attach_labels(ClassificationSet& set, const std::vector<OracleLabeling>& labelings) {
  std::size_t row = 0;
  for (std::size_t i = 0; i < labelings.size(); ++i) {
    for (std::uint8_t l : labelings[i].labels) {
      if (row >= set.refs.size() || set.refs[row].trace != i) throw DataError("label/feature row mismatch");
      set.data.y[row++] = l;
    }
  }
  if (row != set.refs.size()) throw DataError("label/feature row count mismatch");
}

inline ClassificationSet build_classification_dataset(const std::vector<PreparedTrace>& corpus,
                                                      const learn::GbdtModel& regressor, double epsilon_pct,
                                                      int stride_ms = kStrideMs, unsigned jobs = 1) {
  ClassificationSet set = classification_features(corpus, stride_ms);
  attach_labels(set, label_corpus(corpus, regressor, {epsilon_pct}, stride_ms, jobs).front());
  return set;
}

inline double positive_rate(const std::vector<OracleLabeling>& labelings) {
  std::size_t pos = 0, total = 0;
  for (const auto& l : labelings) {
    for (std::uint8_t v : l.labels) pos += v;
    total += l.labels.size();
  }
  return total ? static_cast<double>(pos) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Label files: trace_id,t_ms,label[,feature_0..feature_1300].

inline std::string labels_csv(const std::vector<PreparedTrace>& corpus, const std::vector<OracleLabeling>& labelings,
                              bool with_features) {
  std::ostringstream out;
  out << "trace_id,t_ms,label";
  if (with_features) {
    for (std::size_t j = 0; j < kClassifierArity; ++j) out << ",feature_" << j;
  }
  out << '\n';
  for (std::size_t i = 0; i < labelings.size(); ++i) {
    const auto& l = labelings[i];
    for (std::size_t s = 0; s < l.strides.size(); ++s) {
      out << corpus[i].summary.id << ',' << l.strides[s] << ',' << static_cast<int>(l.labels[s]);
      if (with_features) {
        for (double v : classifier_input(corpus[i].windows, l.strides[s]).values) out << ',' << format_double(v);
      }
      out << '\n';
    }
  }
  return out.str();
}

struct LabelRow {
  std::string trace_id;
  std::int64_t t_ms = 0;
  int label = 0;
};

/// Reads the first three columns of a labels file.
inline std::vector<LabelRow> read_labels_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<LabelRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line.rfind("trace_id,t_ms,label", 0) != 0) throw ParseError(line_no, path + ": bad labels header");
      continue;
    }
    if (line.empty()) continue;
    std::istringstream ss(line);
    LabelRow r;
    std::string t, l;
    if (!std::getline(ss, r.trace_id, ',') || !std::getline(ss, t, ',') || !std::getline(ss, l, ',')) {
      throw ParseError(line_no, path + ": expected trace_id,t_ms,label");
    }
    try {
      r.t_ms = std::stoll(t);
      r.label = std::stoi(l);
    } catch (const std::exception&) {
      throw ParseError(line_no, path + ": invalid number");
    }
    if (r.label != 0 && r.label != 1) throw ParseError(line_no, path + ": label must be 0 or 1");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace turbotest::label
