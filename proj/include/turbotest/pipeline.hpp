#pragma once

// End-to-end steps shared by the CLI and the acceptance harness: train the
// regressor, derive oracle labels, train one classifier per epsilon and
// assemble sweep methods.

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "turbotest/config.hpp"
#include "turbotest/engine.hpp"
#include "turbotest/eval.hpp"
#include "turbotest/heuristics.hpp"
#include "turbotest/label.hpp"
#include "turbotest/learn/gbdt.hpp"
#include "turbotest/learn/mlp.hpp"
#include "turbotest/learn/model_file.hpp"
#include "turbotest/traceio.hpp"

namespace turbotest::pipeline {

inline constexpr const char* kRegressorFile = "regressor.bin";

/// classifier_eps15.bin for epsilon 15.
inline std::string classifier_file_name(double epsilon) { return "classifier_eps" + format_double(epsilon) + ".bin"; }
inline std::string labels_file_name(double epsilon) { return "labels_eps" + format_double(epsilon) + ".csv"; }

inline learn::GbdtModel train_regressor(const std::vector<PreparedTrace>& corpus, const RunConfig& cfg, unsigned jobs) {
  const label::RegressionSet set = label::build_regression_dataset(corpus, cfg.stride_ms);
  if (set.data.rows() == 0) throw DataError("no regression samples: every trace is shorter than one stride");
  return learn::train_gbdt(set.data, cfg.gbdt, jobs);
}

/// result[e][i]; cross-fitted when cfg.label_folds >= 2, using the
/// regressor's own training params.
inline std::vector<std::vector<label::OracleLabeling>> make_labelings(const std::vector<PreparedTrace>& corpus,
                                                                      const learn::GbdtModel& regressor,
                                                                      const RunConfig& cfg, unsigned jobs) {
  if (cfg.label_folds >= 2) {
    return label::crossfit_labelings(corpus, regressor.params, cfg.epsilons, cfg.label_folds, cfg.stride_ms, jobs);
  }
  return label::label_corpus(corpus, regressor, cfg.epsilons, cfg.stride_ms, jobs);
}

/// One classifier per epsilon; features are built once and relabeled.
inline std::vector<learn::MlpModel> train_classifiers(const std::vector<PreparedTrace>& corpus,
                                                      const std::vector<std::vector<label::OracleLabeling>>& labelings,
                                                      const RunConfig& cfg, unsigned jobs) {
  label::ClassificationSet set = label::classification_features(corpus, cfg.stride_ms);
  std::vector<learn::MlpModel> out;
  for (const auto& l : labelings) {
    label::attach_labels(set, l);
    out.push_back(learn::train_mlp(set.data, cfg.mlp, jobs));
  }
  return out;
}

struct Models {
  std::shared_ptr<const learn::GbdtModel> regressor;
  std::map<double, std::shared_ptr<const learn::MlpModel>> classifiers;
};

inline Models load_models(const std::filesystem::path& dir, const std::vector<double>& epsilons) {
  Models m;
  if (!std::filesystem::exists(dir / kRegressorFile)) throw ModelError("missing regressor: " + (dir / kRegressorFile).string());
  m.regressor = std::make_shared<const learn::GbdtModel>(learn::load_gbdt((dir / kRegressorFile).string()));
  for (double e : epsilons) {
    const auto path = dir / classifier_file_name(e);
    if (!std::filesystem::exists(path)) throw ModelError("missing classifier for epsilon " + format_double(e) + ": " + path.string());
    m.classifiers[e] = std::make_shared<const learn::MlpModel>(learn::load_mlp(path.string()));
  }
  return m;
}

inline std::shared_ptr<const engine::Policy> make_policy(const Models& m, double epsilon, const RunConfig& cfg) {
  auto it = m.classifiers.find(epsilon);
  if (it == m.classifiers.end()) throw ModelError("no classifier loaded for epsilon " + format_double(epsilon));
  engine::Policy p = engine::model_policy(m.regressor, it->second, cfg.guard);
  p.stride_ms = cfg.stride_ms;
  return std::make_shared<const engine::Policy>(std::move(p));
}

inline std::vector<eval::Method> turbotest_methods(const Models& m, const RunConfig& cfg) {
  std::vector<eval::Method> out;
  for (const auto& [eps, clf] : m.classifiers) out.push_back(eval::turbotest_method(eps, make_policy(m, eps, cfg)));
  return out;
}

/// Default parameter strings of a heuristic family from the config.
inline const std::vector<std::string>& default_params(const SweepConfig& s, heuristics::Kind kind) {
  switch (kind) {
    case heuristics::Kind::kStatic: return s.static_caps;
    case heuristics::Kind::kBbr: return s.bbr;
    case heuristics::Kind::kTsh: return s.tsh;
    case heuristics::Kind::kCis: return s.cis;
  }
  throw DataError("unhandled heuristic kind");
}

inline std::vector<eval::Method> heuristic_methods(heuristics::Kind kind, const std::vector<std::string>& params,
                                                   const RunConfig& cfg) {
  std::vector<eval::Method> out;
  for (const std::string& value : params) {
    std::string text = std::string(heuristics::kind_name(kind)) + ":" + std::string(heuristics::main_key(kind)) + "=" +
                       value + ",stride=" + std::to_string(cfg.stride_ms);
    if (kind == heuristics::Kind::kTsh) text += ",window=" + std::to_string(cfg.sweep.tsh_window_ms);
    if (kind == heuristics::Kind::kCis) text += ",fraction=" + format_double(cfg.sweep.cis_fraction);
    out.push_back(eval::heuristic_method(heuristics::parse_heuristic(text)));
  }
  return out;
}

}  // namespace turbotest::pipeline
