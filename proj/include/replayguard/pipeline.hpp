#pragma once

// Run configuration, pipeline stages and their on-disk artifacts, and the
// streaming detector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "replayguard/data_pipeline.hpp"
#include "replayguard/error.hpp"
#include "replayguard/explainer.hpp"
#include "replayguard/forecaster.hpp"
#include "replayguard/hash.hpp"
#include "replayguard/reactor_sim.hpp"
#include "replayguard/residual_detector.hpp"
#include "replayguard/rule_classifier.hpp"
#include "replayguard/signal_frame.hpp"
#include "replayguard/svg.hpp"

namespace replayguard {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct ExplainSettings {
  int window = 5;
  std::size_t n_coalitions = 2048;
  int span = 5;
  int max_per_event = 5;
  ExplainTarget target = ExplainTarget::kPrediction;
};

struct RunPaths {
  fs::path root = "run";
  fs::path data, model, metrics, explain, report;

  void resolve() {
    if (data.empty()) data = root / "data";
    if (model.empty()) model = root / "model";
    if (metrics.empty()) metrics = root / "metrics";
    if (explain.empty()) explain = root / "explain";
    if (report.empty()) report = root / "report";
  }
};

struct RunConfig {
  std::uint64_t seed = 7;
  RunPaths paths;
  SuiteConfig suite;
  SplitRatios split;
  int tau = 5;
  ModelSpec model = ModelSpec::defaults(Arch::kGru);
  DetectorConfig detector;
  RuleConfig rules;
  ExplainSettings explain;
  std::vector<double> sweep;
  json source = json::object();

  WindowingConfig windowing() const { return {model.window, tau, Signal::kNCounts}; }
  std::uint64_t model_seed() const { return derive_seed(seed, "model"); }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  require(j.is_object(), ErrorKind::kConfig, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    require(ok, ErrorKind::kConfig, "unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig config_from_json(const json& j, const fs::path& base_dir = ".") {
  RunConfig c;
  try {
    detail::check_keys(j, {"seed", "output_dir", "paths", "suite", "split", "tau", "model",
                           "detector", "rules", "explainer", "sweep"},
                       "config");
    c.source = j;
    detail::read(j, "seed", c.seed);
    std::string out = "run";
    detail::read(j, "output_dir", out);
    c.paths.root = base_dir / out;
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      detail::check_keys(p, {"data", "model", "metrics", "explain", "report"}, "paths");
      auto set = [&](const char* k, fs::path& dst) {
        if (p.contains(k)) dst = base_dir / p.at(k).get<std::string>();
      };
      set("data", c.paths.data);
      set("model", c.paths.model);
      set("metrics", c.paths.metrics);
      set("explain", c.paths.explain);
      set("report", c.paths.report);
    }
    c.paths.resolve();
    if (j.contains("suite")) {
      const auto& s = j.at("suite");
      detail::check_keys(s, {"normal_operations", "transient_events", "scram_events",
                             "fdi_events", "full_scale_counts", "scram_power", "fdi_power",
                             "noise", "fdi_lead", "fdi_replay", "fdi_ramp", "fdi_epsilon"},
                         "suite");
      auto& sc = c.suite;
      detail::read(s, "normal_operations", sc.normal_operations);
      detail::read(s, "transient_events", sc.transient_events);
      detail::read(s, "scram_events", sc.scram_events);
      detail::read(s, "fdi_events", sc.fdi_events);
      detail::read(s, "full_scale_counts", sc.full_scale_counts);
      detail::read(s, "fdi_lead", sc.fdi_lead);
      detail::read(s, "fdi_replay", sc.fdi_replay);
      detail::read(s, "fdi_ramp", sc.fdi_ramp);
      detail::read(s, "fdi_epsilon", sc.fdi_epsilon);
      if (s.contains("scram_power")) {
        sc.scram_power_lo = s.at("scram_power").at(0).get<double>();
        sc.scram_power_hi = s.at("scram_power").at(1).get<double>();
      }
      if (s.contains("fdi_power")) {
        sc.fdi_power_lo = s.at("fdi_power").at(0).get<double>();
        sc.fdi_power_hi = s.at("fdi_power").at(1).get<double>();
      }
      if (s.contains("noise")) {
        const auto& n = s.at("noise");
        detail::check_keys(n, {"counts_rel", "rate_abs", "position_abs"}, "suite.noise");
        detail::read(n, "counts_rel", sc.noise.counts_rel);
        detail::read(n, "rate_abs", sc.noise.rate_abs);
        detail::read(n, "position_abs", sc.noise.position_abs);
      }
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      require(s.is_array() && s.size() == 3, ErrorKind::kConfig,
              "split must be [train, val, test]");
      c.split = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    }
    detail::read(j, "tau", c.tau);
    if (j.contains("model")) {
      json m = j.at("model");
      detail::check_keys(m, {"arch", "hidden_layers", "neurons", "window", "learning_rate",
                             "epochs", "batch_size", "train_precision"},
                         "model");
      c.model = spec_from_json(m, c.model);
    }
    if (j.contains("detector")) {
      const auto& d = j.at("detector");
      detail::check_keys(d, {"short_window", "short_threshold", "medium_window",
                             "medium_threshold", "per_second_threshold"},
                         "detector");
      detail::read(d, "short_window", c.detector.short_window);
      detail::read(d, "short_threshold", c.detector.short_threshold);
      detail::read(d, "medium_window", c.detector.medium_window);
      detail::read(d, "medium_threshold", c.detector.medium_threshold);
      if (d.contains("per_second_threshold")) {
        c.detector.per_second_threshold = d.at("per_second_threshold").get<double>();
      }
    }
    if (j.contains("rules")) {
      const auto& r = j.at("rules");
      detail::check_keys(r, {"position_min", "movement_threshold", "counts_min", "rate_floor",
                             "rate_tolerance", "sigma_window", "sigma_threshold",
                             "literal_counts_rate"},
                         "rules");
      detail::read(r, "position_min", c.rules.position_min);
      detail::read(r, "movement_threshold", c.rules.movement_threshold);
      detail::read(r, "counts_min", c.rules.counts_min);
      detail::read(r, "rate_floor", c.rules.rate_floor);
      detail::read(r, "rate_tolerance", c.rules.rate_tolerance);
      detail::read(r, "sigma_window", c.rules.sigma_window);
      detail::read(r, "sigma_threshold", c.rules.sigma_threshold);
      detail::read(r, "literal_counts_rate", c.rules.literal_counts_rate);
    }
    if (j.contains("explainer")) {
      const auto& e = j.at("explainer");
      detail::check_keys(e, {"window", "n_coalitions", "span", "max_per_event", "target"},
                         "explainer");
      detail::read(e, "window", c.explain.window);
      detail::read(e, "n_coalitions", c.explain.n_coalitions);
      detail::read(e, "span", c.explain.span);
      detail::read(e, "max_per_event", c.explain.max_per_event);
      if (e.contains("target")) {
        const auto t = e.at("target").get<std::string>();
        require(t == "prediction" || t == "absolute_error", ErrorKind::kConfig,
                "explainer.target must be prediction or absolute_error");
        c.explain.target =
            t == "prediction" ? ExplainTarget::kPrediction : ExplainTarget::kAbsoluteError;
      }
    }
    if (j.contains("sweep")) c.sweep = j.at("sweep").get<std::vector<double>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config: ") + e.what());
  }
  if (c.sweep.empty()) {
    for (int i = 1; i <= 20; ++i) c.sweep.push_back(0.01 * i);
  }
  require(c.tau >= 1, ErrorKind::kConfig, "tau must be >= 1");
  require(c.suite.normal_operations >= 0 && c.suite.transient_events >= 0 &&
              c.suite.scram_events >= 0 && c.suite.fdi_events >= 0,
          ErrorKind::kConfig, "suite event counts must be >= 0");
  require(c.suite.fdi_ramp >= 0 && c.suite.fdi_ramp <= c.suite.fdi_replay &&
              c.suite.fdi_lead >= 0,
          ErrorKind::kConfig, "suite FDI lengths are inconsistent");
  require(c.explain.window >= 1 && c.explain.window <= c.model.window, ErrorKind::kConfig,
          "explainer.window must lie in [1, model.window]");
  require(c.explain.max_per_event >= 1 && c.explain.span >= 1, ErrorKind::kConfig,
          "explainer.max_per_event and span must be >= 1");
  c.suite.reactor.validate();
  c.detector.validate();
  c.rules.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::kConfig, "cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(is, nullptr, true, true);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, "config '" + path + "': " + e.what());
  }
  return config_from_json(j, fs::path(path).parent_path());
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(c.source.dump())); }

// ---------------------------------------------------------------------------
// Stages and manifest

enum class Stage { kSimulate, kInject, kPreprocess, kTrain, kEvaluate, kDetect, kExplain, kRules, kReport };

inline constexpr std::array<Stage, 9> kAllStages = {
    Stage::kSimulate, Stage::kInject,  Stage::kPreprocess, Stage::kTrain, Stage::kEvaluate,
    Stage::kDetect,   Stage::kExplain, Stage::kRules,      Stage::kReport};

inline std::string_view stage_name(Stage s) {
  static constexpr std::array<std::string_view, 9> kNames = {
      "simulate", "inject", "preprocess", "train", "evaluate",
      "detect",   "explain", "rules",     "report"};
  return kNames[static_cast<std::size_t>(s)];
}

inline std::optional<Stage> stage_from_name(std::string_view n) {
  for (Stage s : kAllStages) {
    if (stage_name(s) == n) return s;
  }
  return std::nullopt;
}

// Evaluation datasets: the normal test split and the five event sets.
inline const std::vector<std::string>& eval_sets() {
  static const std::vector<std::string> kSets = {"normal", "transient", "scram",
                                                 "fdi_A",  "fdi_B",     "fdi_C"};
  return kSets;
}

inline bool is_fdi_set(const std::string& name) { return name.rfind("fdi_", 0) == 0; }

class Manifest {
 public:
  explicit Manifest(const RunConfig& cfg) : path_(cfg.paths.root / "manifest.json") {
    const std::string hash = config_hash(cfg);
    if (fs::exists(path_)) {
      std::ifstream is(path_);
      try {
        j_ = json::parse(is);
      } catch (const json::exception&) {
        j_ = json::object();
      }
      if (j_.value("config_hash", "") != hash) j_ = json::object();
    }
    j_["config_hash"] = hash;
    j_["seed"] = cfg.seed;
    if (!j_.contains("artifacts")) j_["artifacts"] = json::object();
    if (!j_.contains("stages")) j_["stages"] = json::array();
  }

  void record(Stage stage, const std::vector<fs::path>& files) {
    auto& arts = j_["artifacts"];
    for (const auto& f : files) {
      arts[fs::relative(f, path_.parent_path()).generic_string()] = hex64(file_checksum(f.string()));
    }
    auto& st = j_["stages"];
    const std::string name(stage_name(stage));
    if (std::find(st.begin(), st.end(), name) == st.end()) st.push_back(name);
  }

  void set_malformed(std::size_t n) { j_["malformed_rows"] = n; }

  void save() const {
    fs::create_directories(path_.parent_path());
    std::ofstream os(path_);
    os << j_.dump(2) << '\n';
  }

  const json& data() const { return j_; }

 private:
  fs::path path_;
  json j_ = json::object();
};

// ---------------------------------------------------------------------------
// Small CSV helpers for metric tables

inline std::string fmt(double v) {
  std::string s;
  append_number(s, v);
  return s;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    fail(ErrorKind::kFormat, "table has no column '" + std::string(name) + "'");
  }
};

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline Table read_table(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::kDependency,
          "cannot open '" + path.string() + "'");
  Table t;
  std::string line;
  if (std::getline(is, line)) t.header = split_csv(line);
  while (std::getline(is, line)) {
    if (!line.empty()) t.rows.push_back(split_csv(line));
  }
  return t;
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::kConfig,
          "cannot open '" + path.string() + "' for writing");
  os << text;
}

inline void need(const fs::path& p, Stage producer) {
  require(fs::exists(p), ErrorKind::kDependency,
          "missing artifact '" + p.string() + "'; run the " + std::string(stage_name(producer)) +
              " stage first");
}

// ---------------------------------------------------------------------------
// Detection rows shared by the batch and streaming paths

struct DetectRow {
  std::int64_t index = 0;
  double prediction = 0.0;
  double actual = 0.0;
  DetectorVerdict verdict;
  std::array<bool, kRuleCount> rule_fdi{};
  Label label = Label::kNormal;
};

inline constexpr std::string_view kDetectHeader =
    "index,residual,flag_short,flag_medium,flag,prediction,actual,control_rod,counts_rate,"
    "rate_rod,label";

inline std::string format_detect_row(const DetectRow& r) {
  std::string s;
  append_number(s, r.index);
  s.push_back(',');
  append_number(s, r.verdict.residual);
  for (bool b : {r.verdict.flag_short, r.verdict.flag_medium, r.verdict.flag}) {
    s += b ? ",1" : ",0";
  }
  s.push_back(',');
  append_number(s, r.prediction);
  s.push_back(',');
  append_number(s, r.actual);
  for (bool b : r.rule_fdi) s += b ? ",1" : ",0";
  s.push_back(',');
  s += label_name(r.label);
  return s;
}

inline std::vector<DetectRow> parse_detect_table(const Table& t) {
  std::vector<DetectRow> out;
  const std::size_t ci = t.col("index"), cr = t.col("residual"), cf = t.col("flag"),
                    cl = t.col("label"), cp = t.col("prediction");
  for (const auto& row : t.rows) {
    DetectRow d;
    d.index = std::stoll(row.at(ci));
    d.verdict.index = d.index;
    d.verdict.residual = std::stod(row.at(cr));
    d.verdict.flag = row.at(cf) == "1";
    d.prediction = std::stod(row.at(cp));
    d.label = label_from_name(row.at(cl)).value_or(Label::kNormal);
    out.push_back(d);
  }
  return out;
}

struct PreparedSet {
  SignalFrame scaled;  // cleaned and scaled
  std::vector<WindowedSample> samples;
};

inline PreparedSet prepare(const SignalFrame& raw, const ScalerParams& scaler,
                           const WindowingConfig& wc) {
  PreparedSet p;
  p.scaled = scale(drop_missing(raw), scaler);
  p.samples = window_samples(p.scaled, wc);
  return p;
}

// Batch detection over a raw frame. Matches stream_detect row for row.
inline std::vector<DetectRow> detect_frame(Forecaster& model, const SignalFrame& raw,
                                           const ScalerParams& scaler,
                                           const WindowingConfig& wc,
                                           const DetectorConfig& dc, const RuleConfig& rc) {
  const PreparedSet prep = prepare(raw, scaler, wc);
  std::vector<std::int64_t> idx;
  std::vector<double> pred, actual;
  for (const auto& s : prep.samples) {
    idx.push_back(s.target_index());
    pred.push_back(model.predict(s));
    actual.push_back(s.target);
  }
  const ResidualTrace trace = residual_trace(idx, pred, actual);
  const AdaptiveFlags flags = adaptive_detect(trace, dc);
  const auto rules = evaluate_rules(raw, rc);
  std::vector<DetectRow> out(idx.size());
  std::size_t rv = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto& r = out[i];
    r.index = idx[i];
    r.prediction = pred[i];
    r.actual = actual[i];
    r.verdict = {idx[i], trace.residual[i], flags.short_mean[i], flags.medium_mean[i],
                 flags.flag_short[i], flags.flag_medium[i], flags.flag[i]};
    while (rv < rules.size() && rules[rv].index < idx[i]) ++rv;
    if (rv < rules.size() && rules[rv].index == idx[i]) {
      for (std::size_t k = 0; k < kRuleCount; ++k) r.rule_fdi[k] = rules[rv].rule[k].fdi;
    }
    const auto& target_row = prep.samples[i].start_row + static_cast<std::size_t>(wc.k - 1 + wc.tau);
    r.label = prep.scaled.label[target_row];
  }
  return out;
}

struct StreamStats {
  std::size_t rows = 0;
  std::size_t malformed = 0;
  std::size_t emitted = 0;
};

// Reads dataset rows from `in`, writes one detection row per second that
// has a full window behind it.
inline StreamStats stream_detect(std::istream& in, std::ostream& out, const ModelWeights& w,
                                 const ScalerParams& scaler, int tau,
                                 const DetectorConfig& dc, const RuleConfig& rc,
                                 std::ostream* warn = &std::cerr) {
  Forecaster model(w);
  const WindowingConfig wc{w.spec.window, tau, Signal::kNCounts};
  wc.validate();
  const auto need_rows = static_cast<std::size_t>(wc.k + wc.tau);
  AdaptiveDetector detector(dc);
  RuleEngine rules(rc);
  std::deque<std::pair<std::int64_t, SignalRow>> buf;
  std::vector<double> window(static_cast<std::size_t>(wc.k) * kSignalCount);
  StreamStats st;
  std::optional<std::int64_t> last_index;
  std::string line;
  std::size_t line_no = 0;
  out << kDetectHeader << '\n';
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (line_no == 1 && is_csv_header(line)) continue;
    std::string why;
    auto row = parse_csv_row(line, &why);
    if (row && last_index && row->index <= *last_index) {
      row.reset();
      why = "index not strictly increasing";
    }
    if (!row) {
      ++st.malformed;
      if (warn) *warn << "warning: line " << line_no << ": " << why << ", skipped\n";
      continue;
    }
    ++st.rows;
    last_index = row->index;
    const RuleStep rs = rules.push(row->index, row->values);
    bool complete = true;
    for (double v : row->values) complete = complete && !is_missing(v);
    if (!complete) continue;
    if (!buf.empty() && row->index != buf.back().first + 1) buf.clear();
    SignalRow scaled;
    for (std::size_t c = 0; c < kSignalCount; ++c) scaled[c] = scaler.forward(c, row->values[c]);
    buf.emplace_back(row->index, scaled);
    if (buf.size() > need_rows) buf.pop_front();
    if (buf.size() < need_rows) continue;
    for (std::size_t t = 0; t < static_cast<std::size_t>(wc.k); ++t) {
      std::copy(buf[t].second.begin(), buf[t].second.end(),
                window.begin() + static_cast<std::ptrdiff_t>(t * kSignalCount));
    }
    DetectRow d;
    d.index = row->index;
    d.prediction = model.predict(window.data());
    d.actual = scaled[to_index(wc.target)];
    d.verdict = detector.push(row->index, std::abs(d.actual - d.prediction));
    for (std::size_t k = 0; k < kRuleCount; ++k) d.rule_fdi[k] = rs.rule[k].fdi;
    d.label = row->label;
    out << format_detect_row(d) << '\n';
    ++st.emitted;
  }
  out.flush();
  return st;
}

// ---------------------------------------------------------------------------
// Stages

class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg, std::ostream& log = std::cerr)
      : cfg_(std::move(cfg)), log_(log), manifest_(cfg_) {}

  const RunConfig& config() const { return cfg_; }
  const Manifest& manifest() const { return manifest_; }

  void run(const std::vector<Stage>& stages) {
    for (Stage s : stages) run(s);
  }

  void run(Stage s) {
    log_ << "[" << stage_name(s) << "]\n";
    std::vector<fs::path> files;
    switch (s) {
      case Stage::kSimulate:
        files = simulate();
        break;
      case Stage::kInject:
        files = inject();
        break;
      case Stage::kPreprocess:
        files = preprocess();
        break;
      case Stage::kTrain:
        files = train_stage();
        break;
      case Stage::kEvaluate:
        files = evaluate_stage();
        break;
      case Stage::kDetect:
        files = detect();
        break;
      case Stage::kExplain:
        files = explain();
        break;
      case Stage::kRules:
        files = rules();
        break;
      case Stage::kReport:
        files = report();
        break;
    }
    manifest_.record(s, files);
    manifest_.save();
  }

  // Artifact locations.
  fs::path dataset_path(const std::string& name) const {
    return cfg_.paths.data / (name == "normal" ? "test.csv" : name + ".csv");
  }
  fs::path scaler_path() const { return cfg_.paths.model / "scaler.txt"; }
  fs::path weights_path() const { return cfg_.paths.model / "weights.rgfw"; }
  fs::path detect_path(const std::string& name) const {
    return cfg_.paths.metrics / ("detect_" + name + ".csv");
  }

 private:
  std::vector<fs::path> simulate() {
    fs::create_directories(cfg_.paths.data);
    const auto suite = generate_suite(cfg_.suite, derive_seed(cfg_.seed, "suite"));
    std::vector<fs::path> files;
    for (auto [name, frame] : {std::pair{"normal_all", &suite.normal},
                               std::pair{"transient", &suite.transient},
                               std::pair{"scram", &suite.scram}}) {
      files.push_back(cfg_.paths.data / (std::string(name) + ".csv"));
      write_csv(files.back().string(), *frame);
      log_ << "  " << name << ": " << frame->size() << " rows\n";
    }
    return files;
  }

  std::vector<fs::path> inject() {
    fs::create_directories(cfg_.paths.data);
    const auto events = generate_fdi_events(cfg_.suite, derive_seed(cfg_.seed, "fdi"));
    std::vector<fs::path> files;
    for (FdiVariant v : {FdiVariant::kA, FdiVariant::kB, FdiVariant::kC}) {
      const auto ds = build_fdi_dataset(events, v, cfg_.suite);
      const std::string name = "fdi_" + std::string(variant_name(v));
      files.push_back(cfg_.paths.data / (name + ".csv"));
      write_csv(files.back().string(), ds.injected);
      files.push_back(cfg_.paths.data / (name + "_truth.csv"));
      write_csv(files.back().string(), ds.truth);
      log_ << "  " << name << ": " << ds.injected.size() << " rows\n";
    }
    return files;
  }

  std::vector<fs::path> preprocess() {
    const fs::path src = cfg_.paths.data / "normal_all.csv";
    need(src, Stage::kSimulate);
    const SignalFrame all = drop_missing(read_csv(src.string()));
    const SplitFrames sp = split_dataset(all, cfg_.split);
    const ScalerParams sc = fit_scaler(sp.train);
    fs::create_directories(cfg_.paths.model);
    std::vector<fs::path> files = {cfg_.paths.data / "train.csv", cfg_.paths.data / "val.csv",
                                   cfg_.paths.data / "test.csv", scaler_path()};
    write_csv(files[0].string(), sp.train);
    write_csv(files[1].string(), sp.val);
    write_csv(files[2].string(), sp.test);
    save_scaler(scaler_path().string(), sc);
    log_ << "  split " << sp.train.size() << "/" << sp.val.size() << "/" << sp.test.size()
         << " rows\n";
    return files;
  }

  ScalerParams load_scaler_dep() const {
    need(scaler_path(), Stage::kPreprocess);
    return load_scaler(scaler_path().string());
  }

  ModelWeights load_weights_dep() const {
    need(weights_path(), Stage::kTrain);
    return load_weights(weights_path().string());
  }

  SignalFrame load_dataset(const std::string& name) const {
    const fs::path p = dataset_path(name);
    need(p, name == "normal" ? Stage::kPreprocess
                             : (is_fdi_set(name) ? Stage::kInject : Stage::kSimulate));
    return read_csv(p.string());
  }

  std::vector<fs::path> train_stage() {
    const auto sc = load_scaler_dep();
    for (const char* n : {"train.csv", "val.csv"}) need(cfg_.paths.data / n, Stage::kPreprocess);
    const auto wc = cfg_.windowing();
    const auto tr = prepare(read_csv((cfg_.paths.data / "train.csv").string()), sc, wc).samples;
    const auto va = prepare(read_csv((cfg_.paths.data / "val.csv").string()), sc, wc).samples;
    require(!tr.empty(), ErrorKind::kDomain, "train: no training windows");
    ModelSpec spec = cfg_.model;
    spec.seed = cfg_.model_seed();
    log_ << "  " << arch_name(spec.arch) << " on " << tr.size() << " windows, " << va.size()
         << " validation\n";
    auto result = train(init_model(spec, spec.seed), tr, va, [&](const EpochLoss& e) {
      log_ << "  epoch " << e.epoch << " train_mse " << e.train_mse << " val_mse " << e.val_mse
           << "\n";
    });
    log_ << "  trained in " << result.report.wall_seconds << " s\n";
    save_weights(weights_path().string(), result.weights);
    std::string csv = "epoch,train_mse,val_mse\n";
    for (const auto& e : result.report.epochs) {
      csv += std::to_string(e.epoch) + "," + fmt(e.train_mse) + "," + fmt(e.val_mse) + "\n";
    }
    const fs::path logp = cfg_.paths.model / "training_log.csv";
    write_text(logp, csv);
    return {weights_path(), logp};
  }

  std::vector<fs::path> evaluate_stage() {
    const auto w = load_weights_dep();
    const auto sc = load_scaler_dep();
    const auto wc = cfg_.windowing();
    std::string csv = "dataset,samples,mse,rmse,mae,max_abs_error\n";
    for (const auto& name : eval_sets()) {
      const auto prep = prepare(load_dataset(name), sc, wc);
      if (prep.samples.empty()) continue;
      const EvalMetrics m = evaluate(w, prep.samples);
      csv += name + "," + std::to_string(m.count) + "," + fmt(m.mse) + "," + fmt(m.rmse) + "," +
             fmt(m.mae) + "," + fmt(m.max_abs_error) + "\n";
      log_ << "  " << name << " rmse " << m.rmse << "\n";
    }
    const fs::path out = cfg_.paths.metrics / "forecast_metrics.csv";
    write_text(out, csv);
    return {out};
  }

  std::vector<fs::path> detect() {
    const auto w = load_weights_dep();
    const auto sc = load_scaler_dep();
    const auto wc = cfg_.windowing();
    Forecaster model(w);
    std::vector<fs::path> files;
    std::string det = "dataset,rows,excluded,tp,fp,tn,fn,accuracy,precision,recall,f1,"
                      "flagged_fraction\n";
    std::string sweep = "threshold,dataset,flagged_fraction,accuracy\n";
    for (const auto& name : eval_sets()) {
      const auto rows = detect_frame(model, load_dataset(name), sc, wc, cfg_.detector, cfg_.rules);
      std::string csv(kDetectHeader);
      csv += '\n';
      for (const auto& r : rows) csv += format_detect_row(r) + '\n';
      files.push_back(detect_path(name));
      write_text(files.back(), csv);
      if (rows.empty()) continue;
      std::vector<bool> flags;
      std::vector<Label> labels;
      std::vector<double> residual;
      for (const auto& r : rows) {
        flags.push_back(r.verdict.flag);
        labels.push_back(r.label);
        residual.push_back(r.verdict.residual);
      }
      const DetectionMetrics m = score(flags, labels);
      det += name + "," + std::to_string(rows.size()) + "," + std::to_string(m.excluded) + "," +
             std::to_string(m.tp) + "," + std::to_string(m.fp) + "," + std::to_string(m.tn) +
             "," + std::to_string(m.fn) + "," + fmt(m.accuracy) + "," + fmt(m.precision) + "," +
             fmt(m.recall) + "," + fmt(m.f1) + "," + fmt(m.flagged_fraction()) + "\n";
      log_ << "  " << name << " accuracy " << m.accuracy << " flagged "
           << m.flagged_fraction() << "\n";
      for (double e : cfg_.sweep) {
        const DetectionMetrics ms = score(threshold_labels(residual, e), labels);
        sweep += fmt(e) + "," + name + "," + fmt(ms.flagged_fraction()) + "," +
                 fmt(ms.accuracy) + "\n";
      }
    }
    files.push_back(cfg_.paths.metrics / "detection.csv");
    write_text(files.back(), det);
    files.push_back(cfg_.paths.metrics / "threshold_sweep.csv");
    write_text(files.back(), sweep);
    return files;
  }

  std::vector<fs::path> explain() {
    const auto w = load_weights_dep();
    const auto sc = load_scaler_dep();
    const auto wc = cfg_.windowing();
    Forecaster model(w);
    const BatchModel batch = [&model](const std::vector<const double*>& in,
                                      std::vector<double>& out) { out = model.predict_batch(in); };
    BaselinePolicy policy = BaselinePolicy::moving();
    policy.zero_level[to_index(Signal::kNRate)] = sc.forward(to_index(Signal::kNRate), 0.0);
    const FeatureSpace features =
        FeatureSpace::all_signals(partition_windows(wc.k, cfg_.explain.window));
    std::vector<fs::path> files;
    std::string events_csv = "dataset,event,samples,signal,final_phi\n";
    std::string summary = "dataset,signal,mean_final_phi,negative_fraction,events\n";
    fs::create_directories(cfg_.paths.explain);
    for (const auto& name : eval_sets()) {
      if (!is_fdi_set(name)) continue;
      need(detect_path(name), Stage::kDetect);
      const auto rows = parse_detect_table(read_table(detect_path(name)));
      const auto prep = prepare(load_dataset(name), sc, wc);
      std::map<std::int64_t, std::size_t> by_target;
      for (std::size_t i = 0; i < prep.samples.size(); ++i) {
        by_target[prep.samples[i].target_index()] = i;
      }
      // Events are contiguous runs of detection rows.
      std::vector<std::vector<std::size_t>> events;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i == 0 || rows[i].index != rows[i - 1].index + 1) events.emplace_back();
        if (rows[i].verdict.flag) events.back().push_back(i);
      }
      std::string att = "event,index,signal,window_start,window_length,phi\n";
      std::vector<std::vector<double>> per_event;
      int event_no = 0;
      for (const auto& flagged : events) {
        if (flagged.empty()) continue;
        ++event_no;
        const std::size_t m =
            std::min(flagged.size(), static_cast<std::size_t>(cfg_.explain.max_per_event));
        // The m flagged rows with the largest residuals, in time order.
        std::vector<std::size_t> picks = flagged;
        std::stable_sort(picks.begin(), picks.end(), [&](std::size_t a, std::size_t b) {
          return std::abs(rows[a].actual - rows[a].prediction) >
                 std::abs(rows[b].actual - rows[b].prediction);
        });
        picks.resize(m);
        std::sort(picks.begin(), picks.end());
        std::vector<Attribution> atts;
        for (std::size_t pick : picks) {
          const DetectRow& row = rows[pick];
          const auto it = by_target.find(row.index);
          require(it != by_target.end(), ErrorKind::kDependency,
                  "explain: detection rows do not match dataset " + name);
          const auto& sample = prep.samples[it->second];
          const auto target_model = explain_target(batch, cfg_.explain.target, sample.target);
          atts.push_back(kernel_shap(target_model, sample.inputs, features, policy,
                                     cfg_.explain.n_coalitions,
                                     derive_seed(derive_seed(cfg_.seed, "explain"),
                                                 static_cast<std::uint64_t>(row.index))));
          const auto& a = atts.back();
          for (std::size_t s = 0; s < features.signals.size(); ++s) {
            for (std::size_t win = 0; win < features.partition.size(); ++win) {
              att += std::to_string(event_no) + "," + std::to_string(row.index) + "," +
                     std::string(kSignalNames[features.signals[s]]) + "," +
                     std::to_string(features.partition.spans[win].start) + "," +
                     std::to_string(features.partition.spans[win].length) + "," +
                     fmt(a.at(s, win)) + "\n";
            }
          }
        }
        const auto agg = aggregate_attributions(atts, cfg_.explain.span);
        per_event.push_back(agg.mean_phi);
        for (std::size_t s = 0; s < agg.signals.size(); ++s) {
          events_csv += name + "," + std::to_string(event_no) + "," + std::to_string(m) + "," +
                        std::string(kSignalNames[agg.signals[s]]) + "," + fmt(agg.mean_phi[s]) +
                        "\n";
        }
      }
      files.push_back(cfg_.paths.explain / ("attributions_" + name + ".csv"));
      write_text(files.back(), att);
      for (std::size_t s = 0; s < features.signals.size(); ++s) {
        double mean = 0.0, neg = 0.0;
        for (const auto& e : per_event) {
          mean += e[s];
          neg += e[s] < 0 ? 1.0 : 0.0;
        }
        const double n = static_cast<double>(per_event.size());
        summary += name + "," + std::string(kSignalNames[features.signals[s]]) + "," +
                   (per_event.empty() ? "" : fmt(mean / n)) + "," +
                   (per_event.empty() ? "" : fmt(neg / n)) + "," +
                   std::to_string(per_event.size()) + "\n";
      }
      log_ << "  " << name << ": " << per_event.size() << " events explained\n";
    }
    files.push_back(cfg_.paths.explain / "event_summary.csv");
    write_text(files.back(), events_csv);
    files.push_back(cfg_.paths.explain / "summary.csv");
    write_text(files.back(), summary);
    return files;
  }

  std::vector<fs::path> rules() {
    std::vector<fs::path> files;
    std::string summary =
        "dataset,flagged,control_rod,counts_rate,rate_rod,events,events_fdi,"
        "control_rod_all,counts_rate_all,rate_rod_all\n";
    for (const auto& name : eval_sets()) {
      need(detect_path(name), Stage::kDetect);
      const auto rows = parse_detect_table(read_table(detect_path(name)));
      const auto verdicts = evaluate_rules(load_dataset(name), cfg_.rules);
      std::string csv = "index,rule,valid,anomaly,fdi\n";
      for (const auto& v : verdicts) {
        for (std::size_t r = 0; r < kRuleCount; ++r) {
          const auto& f = v.rule[r];
          csv += std::to_string(v.index) + "," + std::string(kRuleNames[r]) + "," +
                 (f.valid ? "1," : "0,") + (f.anomaly ? "1," : "0,") + (f.fdi ? "1" : "0") +
                 "\n";
        }
      }
      files.push_back(cfg_.paths.metrics / ("rules_" + name + ".csv"));
      write_text(files.back(), csv);
      std::vector<std::int64_t> idx;
      std::vector<bool> flags;
      for (const auto& r : rows) {
        idx.push_back(r.index);
        flags.push_back(r.verdict.flag);
      }
      const RuleReport rep = classify(verdicts, idx, flags);
      const auto all = rule_fdi_fraction(verdicts);
      summary += name + "," + std::to_string(rep.flagged);
      for (const auto& f : rep.fraction) summary += "," + fmt(f);
      summary += "," + std::to_string(rep.events) + "," + std::to_string(rep.events_fdi);
      for (double f : all) summary += "," + fmt(f);
      summary += "\n";
    }
    files.push_back(cfg_.paths.metrics / "rule_summary.csv");
    write_text(files.back(), summary);
    return files;
  }

  std::vector<fs::path> report();

  RunConfig cfg_;
  std::ostream& log_;
  Manifest manifest_;
};

inline std::vector<fs::path> Pipeline::report() {
  const fs::path det = cfg_.paths.metrics / "detection.csv";
  const fs::path fm = cfg_.paths.metrics / "forecast_metrics.csv";
  const fs::path rs = cfg_.paths.metrics / "rule_summary.csv";
  const fs::path ex = cfg_.paths.explain / "summary.csv";
  const fs::path sw = cfg_.paths.metrics / "threshold_sweep.csv";
  need(fm, Stage::kEvaluate);
  need(det, Stage::kDetect);
  need(rs, Stage::kRules);
  need(ex, Stage::kExplain);
  fs::create_directories(cfg_.paths.report);
  std::vector<fs::path> files;
  static const std::array<const char*, 6> kColors = {"#1f77b4", "#ff7f0e", "#2ca02c",
                                                      "#d62728", "#9467bd", "#8c564b"};

  // Residual traces with both rolling means.
  for (const auto& name : eval_sets()) {
    const Table t = read_table(detect_path(name));
    if (t.rows.empty()) continue;
    const auto rows = parse_detect_table(t);
    svg::Series res{"residual", {}, {}, "#1f77b4"};
    svg::Series shortm{"5 s mean", {}, {}, "#ff7f0e"};
    svg::Series medm{"60 s mean", {}, {}, "#2ca02c"};
    AdaptiveDetector d(cfg_.detector);
    const std::size_t limit = std::min<std::size_t>(rows.size(), 2000);
    for (std::size_t i = 0; i < limit; ++i) {
      const auto v = d.push(rows[i].index, rows[i].verdict.residual);
      const double x = static_cast<double>(rows[i].index);
      const bool gap = i > 0 && rows[i].index != rows[i - 1].index + 1;
      for (auto* s : {&res, &shortm, &medm}) {
        if (gap) s->x.push_back(x), s->y.push_back(NAN);
      }
      res.x.push_back(x), res.y.push_back(v.residual);
      shortm.x.push_back(x), shortm.y.push_back(v.short_mean);
      medm.x.push_back(x), medm.y.push_back(v.medium_mean);
    }
    const double x0 = res.x.front(), x1 = res.x.back();
    svg::Series th1{"0.07 threshold", {x0, x1}, {cfg_.detector.short_threshold, cfg_.detector.short_threshold}, "#ff7f0e", true};
    svg::Series th2{"0.04 threshold", {x0, x1}, {cfg_.detector.medium_threshold, cfg_.detector.medium_threshold}, "#2ca02c", true};
    files.push_back(cfg_.paths.report / ("error_trace_" + name + ".svg"));
    svg::write(files.back().string(),
               svg::line_chart("Prediction error, " + name, "index (s)", "normalized error",
                               {res, shortm, medm, th1, th2}));
  }

  // Threshold sweep.
  {
    const Table t = read_table(sw);
    std::vector<svg::Series> series;
    const std::size_t cth = t.col("threshold"), cds = t.col("dataset"),
                      cfr = t.col("flagged_fraction");
    for (std::size_t i = 0; i < eval_sets().size(); ++i) {
      svg::Series s{eval_sets()[i], {}, {}, kColors[i % kColors.size()]};
      for (const auto& r : t.rows) {
        if (r[cds] == eval_sets()[i]) {
          s.x.push_back(std::stod(r[cth]));
          s.y.push_back(std::stod(r[cfr]));
        }
      }
      if (!s.x.empty()) series.push_back(std::move(s));
    }
    files.push_back(cfg_.paths.report / "threshold_sweep.svg");
    svg::write(files.back().string(),
               svg::line_chart("Flagged fraction vs per-second threshold", "threshold",
                               "fraction flagged", series));
  }

  // Attribution bars per FDI set.
  const Table ext = read_table(ex);
  for (const auto& name : eval_sets()) {
    if (!is_fdi_set(name)) continue;
    std::vector<svg::Bar> bars;
    for (const auto& r : ext.rows) {
      if (r[ext.col("dataset")] == name && !r[ext.col("mean_final_phi")].empty()) {
        bars.push_back({r[ext.col("signal")], std::stod(r[ext.col("mean_final_phi")])});
      }
    }
    if (bars.empty()) continue;
    files.push_back(cfg_.paths.report / ("attribution_" + name + ".svg"));
    svg::write(files.back().string(),
               svg::bar_chart("Final-window attribution, " + name, "mean phi", bars));
  }

  // Markdown summary.
  auto md_table = [](const Table& t, const std::vector<std::string>& cols) {
    std::string s = "|";
    for (const auto& c : cols) s += " " + c + " |";
    s += "\n|";
    for (std::size_t i = 0; i < cols.size(); ++i) s += "---|";
    s += "\n";
    for (const auto& r : t.rows) {
      s += "|";
      for (const auto& c : cols) {
        const std::string& v = r[t.col(c)];
        s += " " + (v.empty() ? std::string("-") : v) + " |";
      }
      s += "\n";
    }
    return s;
  };
  std::string md = "# Run report\n\nconfig hash `" + config_hash(cfg_) + "`, seed " +
                   std::to_string(cfg_.seed) + "\n\n";
  md += "## Forecast error (normalized units)\n\n" +
        md_table(read_table(fm), {"dataset", "samples", "rmse", "mae", "max_abs_error"});
  md += "\n## Adaptive-window detection\n\nUndetectable seconds are excluded. Precision, "
        "recall and F1 are blank when a dataset has no anomalous seconds.\n\n" +
        md_table(read_table(det), {"dataset", "accuracy", "precision", "recall", "f1",
                                   "flagged_fraction"});
  md += "\n## Rule breaks among flagged seconds\n\nCounts-rate check uses " +
        std::string(cfg_.rules.literal_counts_rate ? "|e| - CR > tol" : "|e - CR| > tol") +
        ".\n\n" +
        md_table(read_table(rs), {"dataset", "flagged", "control_rod", "counts_rate",
                                  "rate_rod", "events", "events_fdi"});
  md += "\n## Final-window attribution\n\nPhi explains the " +
        std::string(cfg_.explain.target == ExplainTarget::kPrediction
                        ? "predicted value; negative phi pulls the prediction down"
                        : "absolute prediction error; positive phi increases the error") +
        ".\n\n" + md_table(ext, {"dataset", "signal", "mean_final_phi", "negative_fraction"});
  files.push_back(cfg_.paths.report / "summary.md");
  write_text(files.back(), md);
  return files;
}

inline void run_pipeline(const RunConfig& cfg, const std::vector<Stage>& stages,
                         std::ostream& log = std::cerr) {
  Pipeline p(cfg, log);
  p.run(stages);
}

}  // namespace replayguard
