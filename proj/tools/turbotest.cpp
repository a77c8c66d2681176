// turbotest: operator CLI wiring generation, training, labeling, replay,
// sweeps, adaptive selection and reporting into reproducible runs.
//
// Exit codes: 0 ok, 2 usage, 3 data error, 4 model error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "turbotest/turbotest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace turbotest;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitModel = 4;

void log(const std::string& msg) { std::cerr << "turbotest: " << msg << '\n'; }

struct Common {
  std::string config_path;
  unsigned jobs = default_jobs();
  std::optional<std::uint64_t> seed;

  RunConfig load() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.synth.seed = cfg.gbdt.seed = cfg.mlp.seed = *seed;
    }
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--jobs", c.jobs, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "overrides the config seed for generator and learners");
}

std::vector<double> parse_number_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw DataError(std::string("invalid number '") + item + "' in " + what);
    }
  }
  if (out.empty()) throw DataError(std::string(what) + " must not be empty");
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

/// CRC of a file, or of a corpus directory (index plus every listed trace).
std::string checksum_of(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::uint32_t crc = 0;
    const fs::path index = p / "index.csv";
    if (fs::exists(index)) {
      const std::string text = read_file(index.string());
      crc = crc32_of(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()), crc);
      for (const auto& e : read_corpus_index(p)) {
        const std::string body = read_file((p / e.file).string());
        crc = crc32_of(std::span(reinterpret_cast<const unsigned char*>(body.data()), body.size()), crc);
      }
    }
    return hex32(crc);
  }
  return hex32(crc32_of(read_file(p.string())));
}

/// Provenance record written next to every artifact set.
struct Manifest {
  std::string command;
  const RunConfig* cfg = nullptr;
  std::vector<std::pair<std::string, fs::path>> inputs;
  std::vector<fs::path> outputs;

  void write(const fs::path& dir) const {
    json j;
    j["command"] = command;
    j["config_hash"] = config_hash(*cfg);
    j["seed"] = cfg->seed;
    j["config"] = to_json(*cfg);
    json in = json::array();
    for (const auto& [role, path] : inputs) in.push_back({{"role", role}, {"path", path.string()}, {"crc32", checksum_of(path)}});
    j["inputs"] = in;
    json out = json::array();
    for (const fs::path& p : outputs) out.push_back({{"file", p.filename().string()}, {"crc32", checksum_of(p)}});
    j["outputs"] = out;
    write_file((dir / ("manifest_" + command + ".json")).string(), j.dump(2) + "\n");
  }
};

std::vector<PreparedTrace> load_corpus(const std::string& dir, unsigned jobs) {
  auto traces = read_corpus(dir, jobs);
  if (traces.empty()) throw DataError("corpus " + dir + " is empty");
  log("loaded " + std::to_string(traces.size()) + " traces from " + dir);
  return prepare_all(std::move(traces), jobs);
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, std::optional<std::size_t> n, const std::string& mode, const std::string& preset,
              const std::string& weights, const std::string& out) {
  RunConfig cfg = c.load();
  if (!preset.empty()) {
    synth::GenSpec g = synth::GenSpec::by_preset(preset);
    g.n_traces = cfg.synth.n_traces;
    g.seed = cfg.synth.seed;
    g.mode = cfg.synth.mode;
    g.tier_weights = cfg.synth.tier_weights;
    cfg.synth = g;
  }
  if (n) cfg.synth.n_traces = *n;
  if (!mode.empty()) cfg.synth.mode = detail::parse_mode(mode);
  if (!weights.empty()) {
    const auto w = parse_number_list(weights, "--tier-weights");
    if (w.size() != kTierCount) throw DataError("--tier-weights needs 5 values");
    cfg.synth.tier_weights = std::array<double, kTierCount>{w[0], w[1], w[2], w[3], w[4]};
  }
  cfg.validate();
  const synth::Corpus corpus = synth::gen_corpus(cfg.synth, c.jobs);
  synth::write_corpus(out, corpus, c.jobs);
  Manifest m{"synth", &cfg, {}, {fs::path(out) / "index.csv", fs::path(out) / "manifest.csv"}};
  m.write(out);
  log("wrote " + std::to_string(corpus.traces.size()) + " traces to " + out);
  return 0;
}

int cmd_ingest(const Common& c, const std::string& in, const std::string& out, bool skip_invalid) {
  RunConfig cfg = c.load();
  std::vector<fs::path> files;
  if (fs::is_directory(in)) {
    if (fs::exists(fs::path(in) / "index.csv")) {
      for (const auto& e : read_corpus_index(in)) files.push_back(fs::path(in) / e.file);
    } else {
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.path().extension() == ".jsonl") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
    }
  } else if (fs::exists(in)) {
    files.push_back(in);
  } else {
    throw IoError("input " + in + " does not exist");
  }
  std::vector<Trace> traces;
  std::set<std::string> ids;
  std::size_t rejected = 0;
  for (const auto& f : files) {
    try {
      Trace t = read_trace_file(f);
      if (!ids.insert(t.id()).second) throw ValidationError(f.string() + ": duplicate trace id '" + t.id() + "'");
      traces.push_back(std::move(t));
    } catch (const DataError& e) {
      if (!skip_invalid) throw;
      ++rejected;
      log("skipping " + f.string() + ": " + e.what());
    }
  }
  if (traces.empty()) throw DataError("no valid traces in " + in);
  std::vector<TraceSummary> summaries;
  for (const Trace& t : traces) summaries.push_back(summarize(t));
  write_corpus_traces(out, traces, c.jobs);
  write_file((fs::path(out) / "manifest.csv").string(), synth::manifest_csv(summaries, "ingested"));
  Manifest m{"ingest", &cfg, {{"input", in}}, {fs::path(out) / "index.csv", fs::path(out) / "manifest.csv"}};
  m.write(out);
  log("ingested " + std::to_string(traces.size()) + " traces (" + std::to_string(rejected) + " rejected) into " + out);
  return 0;
}

int cmd_train_regressor(const Common& c, const std::string& corpus_dir, const std::string& out) {
  RunConfig cfg = c.load();
  const auto corpus = load_corpus(corpus_dir, c.jobs);
  const learn::GbdtModel model = pipeline::train_regressor(corpus, cfg, c.jobs);
  ensure_dir(out);
  const fs::path path = fs::path(out) / pipeline::kRegressorFile;
  learn::save_model(path.string(), model);
  Manifest m{"train-regressor", &cfg, {{"corpus", corpus_dir}}, {path}};
  m.write(out);
  log("regressor: " + std::to_string(model.trees.size()) + " trees, train mse " +
      format_double(model.train_mse.empty() ? 0.0 : model.train_mse.back()) + " -> " + path.string());
  return 0;
}

int cmd_label(const Common& c, const std::string& corpus_dir, const std::string& regressor_path, const std::string& eps,
              std::optional<std::size_t> folds, bool with_features, const std::string& out) {
  RunConfig cfg = c.load();
  if (!eps.empty()) cfg.epsilons = parse_number_list(eps, "--eps");
  if (folds) cfg.label_folds = *folds;
  if (with_features) cfg.labels_with_features = true;
  cfg.validate();
  const auto corpus = load_corpus(corpus_dir, c.jobs);
  const learn::GbdtModel regressor = learn::load_gbdt(regressor_path);
  const auto labelings = pipeline::make_labelings(corpus, regressor, cfg, c.jobs);
  ensure_dir(out);
  Manifest m{"label", &cfg, {{"corpus", corpus_dir}, {"regressor", regressor_path}}, {}};
  for (std::size_t e = 0; e < cfg.epsilons.size(); ++e) {
    const fs::path path = fs::path(out) / pipeline::labels_file_name(cfg.epsilons[e]);
    write_file(path.string(), label::labels_csv(corpus, labelings[e], cfg.labels_with_features));
    m.outputs.push_back(path);
    std::size_t never = 0;
    for (const auto& l : labelings[e]) never += l.t_star_ms ? 0 : 1;
    log("eps " + format_double(cfg.epsilons[e]) + ": positive rate " + format_double(label::positive_rate(labelings[e])) +
        ", " + std::to_string(never) + " traces never qualify");
  }
  m.write(out);
  return 0;
}

/// Rebuilds labelings from a labels file, checking it matches the corpus.
std::vector<label::OracleLabeling> labelings_from_file(const std::vector<PreparedTrace>& corpus, const fs::path& path,
                                                       int stride_ms) {
  const auto rows = label::read_labels_csv(path.string());
  std::vector<label::OracleLabeling> out(corpus.size());
  std::size_t r = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    out[i].strides = label::strides_of(corpus[i], stride_ms);
    for (std::int64_t t : out[i].strides) {
      if (r >= rows.size() || rows[r].trace_id != corpus[i].summary.id || rows[r].t_ms != t) {
        throw DataError(path.string() + ": labels do not match the corpus at row " + std::to_string(r + 2));
      }
      out[i].labels.push_back(static_cast<std::uint8_t>(rows[r].label));
      if (rows[r].label && !out[i].t_star_ms) out[i].t_star_ms = t;
      ++r;
    }
  }
  if (r != rows.size()) throw DataError(path.string() + ": more label rows than corpus strides");
  return out;
}

int cmd_train_classifier(const Common& c, const std::string& corpus_dir, const std::string& labels_dir,
                         const std::string& eps, const std::string& out) {
  RunConfig cfg = c.load();
  if (!eps.empty()) cfg.epsilons = parse_number_list(eps, "--eps");
  cfg.validate();
  const auto corpus = load_corpus(corpus_dir, c.jobs);
  std::vector<std::vector<label::OracleLabeling>> labelings;
  Manifest m{"train-classifier", &cfg, {{"corpus", corpus_dir}}, {}};
  for (double e : cfg.epsilons) {
    const fs::path path = fs::path(labels_dir) / pipeline::labels_file_name(e);
    labelings.push_back(labelings_from_file(corpus, path, cfg.stride_ms));
    m.inputs.emplace_back("labels", path);
  }
  const auto models = pipeline::train_classifiers(corpus, labelings, cfg, c.jobs);
  ensure_dir(out);
  for (std::size_t e = 0; e < models.size(); ++e) {
    const fs::path path = fs::path(out) / pipeline::classifier_file_name(cfg.epsilons[e]);
    learn::save_model(path.string(), models[e]);
    m.outputs.push_back(path);
    log("classifier eps " + format_double(cfg.epsilons[e]) + ": final loss " +
        format_double(models[e].loss_curve.empty() ? 0.0 : models[e].loss_curve.back()) + " -> " + path.string());
  }
  m.write(out);
  return 0;
}

int cmd_run(const Common& c, const std::string& trace_path, const std::string& models_dir, double eps, bool no_guard) {
  RunConfig cfg = c.load();
  if (no_guard) cfg.guard.enabled = false;
  const Trace trace = read_trace_file(trace_path);
  const pipeline::Models models = pipeline::load_models(models_dir, {eps});
  const auto policy = pipeline::make_policy(models, eps, cfg);
  const engine::ReplayResult r = engine::replay(*policy, trace);
  const TraceSummary s = summarize(trace);
  json j{{"trace_id", s.id},
         {"epsilon", eps},
         {"reason", to_string(r.outcome.reason)},
         {"stop_time_ms", r.outcome.stop_time_ms},
         {"bytes_at_stop", r.outcome.bytes_at_stop},
         {"total_bytes", s.total_bytes},
         {"estimate_mbps", r.outcome.estimate_mbps},
         {"y_true_mbps", s.y_true_mbps},
         {"rel_error", r.outcome.rel_error},
         {"ran_to_completion", r.outcome.ran_to_completion},
         {"strides_evaluated", r.stats.strides_evaluated},
         {"strides_suppressed", r.stats.strides_suppressed},
         {"classifier_calls", r.stats.classifier_calls},
         {"regressor_calls", r.stats.regressor_calls}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_sweep(const Common& c, const std::string& corpus_dir, const std::string& methods_text, const std::string& params,
              const std::string& models_dir, const std::string& eps, const std::string& out) {
  RunConfig cfg = c.load();
  if (!eps.empty()) cfg.epsilons = parse_number_list(eps, "--eps");
  cfg.validate();
  std::vector<std::string> families = split_list(methods_text);
  if (families.size() == 1 && families[0] == "all") {
    families = {"bbr", "static", "tsh", "cis"};
    if (!models_dir.empty()) families.insert(families.begin(), "turbotest");
  }
  if (families.empty()) throw DataError("--method must name at least one family");
  if (!params.empty() && families.size() != 1) throw DataError("--params applies to a single --method");
  const auto corpus = load_corpus(corpus_dir, c.jobs);
  std::vector<eval::Method> methods;
  Manifest m{"sweep", &cfg, {{"corpus", corpus_dir}}, {}};
  for (const std::string& f : families) {
    if (f == "turbotest") {
      if (models_dir.empty()) throw DataError("sweep --method turbotest needs --models");
      std::vector<double> list = params.empty() ? cfg.epsilons : parse_number_list(params, "--params");
      const pipeline::Models models = pipeline::load_models(models_dir, list);
      m.inputs.emplace_back("regressor", fs::path(models_dir) / pipeline::kRegressorFile);
      for (double e : list) m.inputs.emplace_back("classifier", fs::path(models_dir) / pipeline::classifier_file_name(e));
      for (auto& method : pipeline::turbotest_methods(models, cfg)) methods.push_back(std::move(method));
    } else {
      const heuristics::Kind kind = heuristics::parse_kind(f);
      const std::vector<std::string> list = params.empty() ? pipeline::default_params(cfg.sweep, kind) : split_list(params);
      for (auto& method : pipeline::heuristic_methods(kind, list, cfg)) methods.push_back(std::move(method));
    }
  }
  const eval::Sweep sweep = eval::pareto_sweep(corpus, methods, c.jobs);
  ensure_dir(out);
  std::vector<eval::Record> all;
  for (const auto& rs : sweep.records) all.insert(all.end(), rs.begin(), rs.end());
  const fs::path frontier = fs::path(out) / "frontier.csv";
  const fs::path records = fs::path(out) / "records.csv";
  write_file(frontier.string(), eval::frontier_csv(sweep.points));
  write_file(records.string(), eval::records_csv(all));
  m.outputs = {frontier, records};
  m.write(out);
  for (const auto& p : sweep.points) {
    log(p.method + " " + format_double(p.param) + ": median error " + format_double(p.median_rel_error) +
        ", transfer " + format_double(p.transfer_fraction) + (p.nondominated ? " (frontier)" : ""));
  }
  return 0;
}

/// Records of one method family regrouped as aligned candidates.
struct Family {
  std::string method;
  std::vector<double> params;
  std::vector<std::vector<eval::Record>> records;
};

std::vector<Family> families_of(const std::vector<eval::Record>& rs, const std::set<std::string>& wanted,
                                const std::function<bool(const eval::Record&)>& keep) {
  std::map<std::string, std::map<double, std::vector<eval::Record>>> grouped;
  std::vector<std::string> order;
  for (const auto& r : rs) {
    if (!wanted.empty() && !wanted.count(r.method)) continue;
    if (!keep(r)) continue;
    if (!grouped.count(r.method)) order.push_back(r.method);
    grouped[r.method][r.param].push_back(r);
  }
  std::vector<Family> out;
  for (const auto& name : order) {
    Family f;
    f.method = name;
    for (auto& [param, recs] : grouped[name]) {
      std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.trace_id < b.trace_id; });
      if (!f.records.empty()) {
        const auto& ref = f.records.front();
        bool same = ref.size() == recs.size();
        for (std::size_t i = 0; same && i < recs.size(); ++i) same = ref[i].trace_id == recs[i].trace_id;
        if (!same) throw DataError("records of " + name + " cover different traces for different params");
      }
      f.params.push_back(param);
      f.records.push_back(std::move(recs));
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<eval::Candidate> candidates_of(const Family& f) {
  std::vector<eval::Candidate> out;
  for (std::size_t i = 0; i < f.params.size(); ++i) out.push_back({f.method, f.params[i], &f.records[i]});
  return out;
}

std::vector<eval::Record> read_records_files(const std::vector<std::string>& paths) {
  std::vector<eval::Record> all;
  for (const auto& p : paths) {
    auto rs = eval::read_records_csv(read_file(p));
    all.insert(all.end(), rs.begin(), rs.end());
  }
  if (all.empty()) throw DataError("no records to process");
  return all;
}

int cmd_select(const Common& c, const std::vector<std::string>& records_paths, const std::string& methods_text,
               std::optional<double> bound, bool in_sample, const std::string& percentiles, const std::string& out) {
  RunConfig cfg = c.load();
  if (bound) cfg.select.bound = *bound;
  if (in_sample) cfg.select.in_sample = true;
  if (!percentiles.empty()) cfg.select.percentiles = parse_number_list(percentiles, "--percentiles");
  cfg.validate();
  const auto all = read_records_files(records_paths);
  const auto split = methods_text.empty() ? std::vector<std::string>{} : split_list(methods_text);
  const std::set<std::string> wanted(split.begin(), split.end());
  const bool same = cfg.select.in_sample;
  const auto selection = families_of(all, wanted, [same](const eval::Record& r) { return same || eval::in_selection_split(r.trace_id); });
  const auto report = families_of(all, wanted, [same](const eval::Record& r) { return same || !eval::in_selection_split(r.trace_id); });
  const auto whole = families_of(all, wanted, [](const eval::Record&) { return true; });
  if (selection.empty()) throw DataError("no records matched --methods");

  std::vector<eval::GroupPolicy> policies;
  std::ostringstream strategies;
  strategies << "family,strategy,groups,selection_transfer_fraction,report_transfer_fraction,report_median_rel_error\n";
  std::ostringstream curves;
  bool first_curve = true;
  for (std::size_t f = 0; f < selection.size(); ++f) {
    const auto sel = candidates_of(selection[f]);
    const auto rep = candidates_of(report[f]);
    for (eval::Strategy s : eval::kAllStrategies) {
      eval::GroupPolicy pol = eval::select_adaptive(sel, s, cfg.select.bound);
      const eval::Aggregate applied = eval::apply_policy(pol, rep);
      strategies << selection[f].method << ',' << eval::strategy_name(s) << ',' << pol.groups.size() << ','
                 << format_double(pol.transfer_fraction()) << ',' << format_double(applied.transfer_fraction) << ','
                 << format_double(applied.median_rel_error) << '\n';
      log(selection[f].method + " " + std::string(eval::strategy_name(s)) + ": selection transfer " +
          format_double(pol.transfer_fraction()) + ", report transfer " + format_double(applied.transfer_fraction) +
          ", report median error " + format_double(applied.median_rel_error));
      if (s != eval::Strategy::kOracle) policies.push_back(std::move(pol));
    }
    const auto cands = candidates_of(whole[f]);
    const auto curve = eval::percentile_curve(cands, cfg.select.percentiles, cfg.select.bound);
    std::string block = eval::percentiles_csv(whole[f].method, curve, cands, cfg.select.bound);
    if (!first_curve) block = block.substr(block.find('\n') + 1);
    curves << block;
    first_curve = false;
  }
  ensure_dir(out);
  const fs::path groups = fs::path(out) / "groups.csv";
  const fs::path strat = fs::path(out) / "strategies.csv";
  const fs::path pct = fs::path(out) / "percentiles.csv";
  write_file(groups.string(), eval::groups_csv(policies));
  write_file(strat.string(), strategies.str());
  write_file(pct.string(), curves.str());
  Manifest m{"select", &cfg, {}, {groups, strat, pct}};
  for (const auto& p : records_paths) m.inputs.emplace_back("records", p);
  m.write(out);
  return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& records_paths, const std::string& out) {
  RunConfig cfg = c.load();
  const auto all = read_records_files(records_paths);
  const auto families = families_of(all, {}, [](const eval::Record&) { return true; });
  std::ostringstream summary;
  summary << "method,param,n,median_rel_error,p75_rel_error,p90_rel_error,p95_rel_error,transfer_fraction,savings,"
             "total_gb,early_stop_fraction,mean_stop_ms\n";
  std::ostringstream breakdown;
  breakdown << "method,param,tier,rtt_bin,n,median_rel_error,transfer_fraction\n";
  std::ostringstream pct;
  pct << "method,param,percentile,rel_error,per_test_transfer\n";
  for (const auto& f : families) {
    for (std::size_t p = 0; p < f.params.size(); ++p) {
      const auto& rs = f.records[p];
      const eval::Aggregate a = eval::aggregate(rs);
      std::vector<double> errs;
      double stop_sum = 0.0;
      std::size_t early = 0;
      for (const auto& r : rs) {
        errs.push_back(r.rel_error);
        stop_sum += static_cast<double>(r.stop_ms);
        early += r.bytes_early < r.total_bytes ? 1 : 0;
      }
      summary << f.method << ',' << format_double(f.params[p]) << ',' << a.n << ',' << format_double(a.median_rel_error)
              << ',' << format_double(percentile(errs, 75)) << ',' << format_double(percentile(errs, 90)) << ','
              << format_double(percentile(errs, 95)) << ',' << format_double(a.transfer_fraction) << ','
              << format_double(1.0 - a.transfer_fraction) << ',' << format_double(a.total_gb) << ','
              << format_double(static_cast<double>(early) / static_cast<double>(rs.size())) << ','
              << format_double(stop_sum / static_cast<double>(rs.size())) << '\n';
      std::map<std::pair<int, int>, std::vector<const eval::Record*>> cells;
      for (const auto& r : rs) cells[{r.tier, r.rtt_bin}].push_back(&r);
      for (const auto& [key, members] : cells) {
        const eval::Aggregate ca = eval::aggregate(members);
        breakdown << f.method << ',' << format_double(f.params[p]) << ',' << key.first << ',' << key.second << ','
                  << ca.n << ',' << format_double(ca.median_rel_error) << ',' << format_double(ca.transfer_fraction)
                  << '\n';
      }
      for (const auto& row : eval::percentile_table(rs, cfg.select.percentiles)) {
        pct << f.method << ',' << format_double(f.params[p]) << ',' << format_double(row.p) << ','
            << format_double(row.rel_error) << ',' << format_double(row.transfer) << '\n';
      }
      std::cout << f.method << ' ' << format_double(f.params[p]) << "  median_err=" << format_double(a.median_rel_error)
                << "  transfer=" << format_double(a.transfer_fraction) << "  n=" << a.n << '\n';
    }
  }
  ensure_dir(out);
  const fs::path s = fs::path(out) / "summary.csv";
  const fs::path b = fs::path(out) / "breakdown.csv";
  const fs::path p = fs::path(out) / "error_percentiles.csv";
  write_file(s.string(), summary.str());
  write_file(b.string(), breakdown.str());
  write_file(p.string(), pct.str());
  Manifest m{"report", &cfg, {}, {s, b, p}};
  for (const auto& r : records_paths) m.inputs.emplace_back("records", r);
  m.write(out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TurboTest-style early termination of speed tests"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  Common common;
  int status = 0;

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a seeded synthetic corpus");
  add_common(synth_cmd, common);
  std::optional<std::size_t> synth_n;
  std::string synth_mode, synth_preset, synth_weights, synth_out;
  synth_cmd->add_option("--n", synth_n, "number of traces");
  synth_cmd->add_option("--mode", synth_mode, "balanced or natural")->check(CLI::IsMember({"balanced", "natural"}));
  synth_cmd->add_option("--preset", synth_preset, "default or hard")->check(CLI::IsMember({"default", "hard"}));
  synth_cmd->add_option("--tier-weights", synth_weights, "natural-mode tier proportions, e.g. 0.3,0.3,0.2,0.1,0.1");
  synth_cmd->add_option("--out", synth_out, "output corpus directory")->required();
  synth_cmd->callback([&] { status = cmd_synth(common, synth_n, synth_mode, synth_preset, synth_weights, synth_out); });

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "validate external traces and write a canonical corpus");
  add_common(ingest_cmd, common);
  std::string ingest_in, ingest_out;
  bool ingest_skip = false;
  ingest_cmd->add_option("--in", ingest_in, "trace file, directory of .jsonl files, or corpus directory")->required();
  ingest_cmd->add_option("--out", ingest_out, "output corpus directory")->required();
  ingest_cmd->add_flag("--skip-invalid", ingest_skip, "log and skip invalid traces instead of failing");
  ingest_cmd->callback([&] { status = cmd_ingest(common, ingest_in, ingest_out, ingest_skip); });

  // train-regressor
  auto* treg_cmd = app.add_subcommand("train-regressor", "fit the throughput regressor");
  add_common(treg_cmd, common);
  std::string treg_corpus, treg_out;
  treg_cmd->add_option("--corpus", treg_corpus, "training corpus directory")->required();
  treg_cmd->add_option("--out", treg_out, "models directory")->required();
  treg_cmd->callback([&] { status = cmd_train_regressor(common, treg_corpus, treg_out); });

  // label
  auto* label_cmd = app.add_subcommand("label", "derive oracle stop labels per epsilon");
  add_common(label_cmd, common);
  std::string label_corpus, label_reg, label_eps, label_out;
  std::optional<std::size_t> label_folds;
  bool label_features = false;
  label_cmd->add_option("--corpus", label_corpus, "training corpus directory")->required();
  label_cmd->add_option("--regressor", label_reg, "regressor model file")->required()->check(CLI::ExistingFile);
  label_cmd->add_option("--eps", label_eps, "comma-separated epsilons in percent");
  label_cmd->add_option("--folds", label_folds, "cross-fit labels over this many folds (1 = in-sample)");
  label_cmd->add_flag("--with-features", label_features, "append the classifier inputs to each label row");
  label_cmd->add_option("--out", label_out, "labels directory")->required();
  label_cmd->callback(
      [&] { status = cmd_label(common, label_corpus, label_reg, label_eps, label_folds, label_features, label_out); });

  // train-classifier
  auto* tclf_cmd = app.add_subcommand("train-classifier", "fit one stop classifier per epsilon");
  add_common(tclf_cmd, common);
  std::string tclf_corpus, tclf_labels, tclf_eps, tclf_out;
  tclf_cmd->add_option("--corpus", tclf_corpus, "training corpus directory")->required();
  tclf_cmd->add_option("--labels", tclf_labels, "labels directory")->required()->check(CLI::ExistingDirectory);
  tclf_cmd->add_option("--eps", tclf_eps, "comma-separated epsilons in percent");
  tclf_cmd->add_option("--out", tclf_out, "models directory")->required();
  tclf_cmd->callback([&] { status = cmd_train_classifier(common, tclf_corpus, tclf_labels, tclf_eps, tclf_out); });

  // run
  auto* run_cmd = app.add_subcommand("run", "replay one trace through a policy and print the outcome as JSON");
  add_common(run_cmd, common);
  std::string run_trace, run_models;
  double run_eps = 15;
  bool run_no_guard = false;
  run_cmd->add_option("--trace", run_trace, "trace file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--models", run_models, "models directory")->required()->check(CLI::ExistingDirectory);
  run_cmd->add_option("--eps", run_eps, "epsilon selecting classifier_eps{N}.bin");
  run_cmd->add_flag("--no-guard", run_no_guard, "disable the variability guard");
  run_cmd->callback([&] { status = cmd_run(common, run_trace, run_models, run_eps, run_no_guard); });

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "evaluate parameter sweeps and their Pareto frontier");
  add_common(sweep_cmd, common);
  std::string sweep_corpus, sweep_method, sweep_params, sweep_models, sweep_eps, sweep_out;
  sweep_cmd->add_option("--corpus", sweep_corpus, "evaluation corpus directory")->required();
  sweep_cmd->add_option("--method", sweep_method, "bbr, static, tsh, cis, turbotest, a comma list, or all")->required();
  sweep_cmd->add_option("--params", sweep_params, "parameter values for a single method (e.g. 1,2,3 or 10MB,250MB)");
  sweep_cmd->add_option("--models", sweep_models, "models directory for turbotest");
  sweep_cmd->add_option("--eps", sweep_eps, "epsilons for turbotest");
  sweep_cmd->add_option("--out", sweep_out, "output directory")->required();
  sweep_cmd->callback(
      [&] { status = cmd_sweep(common, sweep_corpus, sweep_method, sweep_params, sweep_models, sweep_eps, sweep_out); });

  // select
  auto* select_cmd = app.add_subcommand("select", "adaptive per-group parameter selection and percentile curves");
  add_common(select_cmd, common);
  std::vector<std::string> select_records;
  std::string select_methods, select_pct, select_out;
  std::optional<double> select_bound;
  bool select_in_sample = false;
  select_cmd->add_option("--records", select_records, "records.csv files from sweep")->required()->check(CLI::ExistingFile);
  select_cmd->add_option("--methods", select_methods, "restrict to these method families");
  select_cmd->add_option("--bound", select_bound, "median error bound (fraction)");
  select_cmd->add_flag("--in-sample", select_in_sample, "select and report on the same traces");
  select_cmd->add_option("--percentiles", select_pct, "percentile list for the savings curve");
  select_cmd->add_option("--out", select_out, "output directory")->required();
  select_cmd->callback([&] {
    status = cmd_select(common, select_records, select_methods, select_bound, select_in_sample, select_pct, select_out);
  });

  // report
  auto* report_cmd = app.add_subcommand("report", "aggregate records into summary tables");
  add_common(report_cmd, common);
  std::vector<std::string> report_records;
  std::string report_out;
  report_cmd->add_option("--records", report_records, "records.csv files")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--out", report_out, "output directory")->required();
  report_cmd->callback([&] { status = cmd_report(common, report_records, report_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const ModelError& e) {
    log(std::string("model error: ") + e.what());
    return kExitModel;
  } catch (const Error& e) {
    log(std::string("data error: ") + e.what());
    return kExitData;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
  return status;
}
