#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "replayguard/pipeline.hpp"

using namespace replayguard;

namespace {

json tiny_config(const fs::path& out) {
  return json{{"seed", 5},
              {"output_dir", out.string()},
              {"suite",
               {{"normal_operations", 2}, {"transient_events", 2}, {"scram_events", 2},
                {"fdi_events", 2}}},
              {"model",
               {{"arch", "gru"}, {"neurons", 8}, {"window", 10}, {"epochs", 2},
                {"batch_size", 16}, {"learning_rate", 0.003}}},
              {"explainer", {{"n_coalitions", 64}, {"max_per_event", 1}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("replayguard_test_" + name);
  fs::remove_all(p);
  return p;
}

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch_dir("tiny");
    cfg_ = config_from_json(tiny_config(dir_));
    std::ostringstream log;
    Pipeline p(cfg_, log);
    p.run({kAllStages.begin(), kAllStages.end()});
  }
  static inline fs::path dir_;
  static inline RunConfig cfg_;
};

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const auto c = config_from_json(json::object());
  EXPECT_EQ(c.model.arch, Arch::kGru);
  EXPECT_EQ(c.model.window, 30);
  EXPECT_EQ(c.tau, 5);
  EXPECT_EQ(c.sweep.size(), 20u);
  EXPECT_EQ(c.paths.model, c.paths.root / "model");
  const auto d = config_from_json(tiny_config("x"));
  EXPECT_EQ(d.model.neurons, 8);
  EXPECT_EQ(d.suite.fdi_events, 2);
  EXPECT_NE(config_hash(c), config_hash(d));
}

TEST(Config, ErrorsAreConfigErrors) {
  auto kind_of = [](const json& j) {
    try {
      config_from_json(j);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kDomain;
  };
  EXPECT_EQ(kind_of({{"sede", 1}}), ErrorKind::kConfig);
  EXPECT_EQ(kind_of({{"model", {{"neurons", 0}}}}), ErrorKind::kConfig);
  EXPECT_EQ(kind_of({{"model", {{"arch", "transformer"}}}}), ErrorKind::kConfig);
  EXPECT_EQ(kind_of({{"seed", "abc"}}), ErrorKind::kConfig);
  EXPECT_EQ(kind_of({{"split", {0.5, 0.5}}}), ErrorKind::kConfig);
  EXPECT_EQ(kind_of({{"explainer", {{"window", 50}}}}), ErrorKind::kConfig);
  EXPECT_EQ(kind_of({{"explainer", {{"target", "loss"}}}}), ErrorKind::kConfig);
  EXPECT_THROW(load_config("/nonexistent.json"), Error);
}

TEST(Stages, Names) {
  for (Stage s : kAllStages) EXPECT_EQ(stage_from_name(stage_name(s)), s);
  EXPECT_FALSE(stage_from_name("classify").has_value());
}

TEST(Stages, MissingUpstreamIsDependencyError) {
  const auto dir = scratch_dir("deps");
  std::ostringstream log;
  Pipeline p(config_from_json(tiny_config(dir)), log);
  for (Stage s : {Stage::kPreprocess, Stage::kTrain, Stage::kDetect, Stage::kReport}) {
    try {
      p.run(s);
      FAIL() << stage_name(s);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kDependency) << stage_name(s);
      EXPECT_EQ(exit_code_for(e.kind()), 3);
    }
  }
  fs::remove_all(dir);
}

TEST_F(TinyRun, ProducesArtifactsAndManifest) {
  for (const char* f : {"data/normal_all.csv", "data/fdi_C.csv", "model/weights.rgfw",
                        "model/scaler.txt", "model/training_log.csv",
                        "metrics/forecast_metrics.csv", "metrics/detection.csv",
                        "metrics/threshold_sweep.csv", "metrics/rule_summary.csv",
                        "explain/summary.csv", "explain/attributions_fdi_A.csv",
                        "report/summary.md", "report/threshold_sweep.svg",
                        "report/error_trace_fdi_C.svg", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  }
  const json m = json::parse(slurp(dir_ / "manifest.json"));
  EXPECT_EQ(m["config_hash"], config_hash(cfg_));
  EXPECT_EQ(m["seed"], 5);
  EXPECT_EQ(m["stages"].size(), kAllStages.size());
  EXPECT_EQ(m["artifacts"]["model/weights.rgfw"],
            hex64(file_checksum((dir_ / "model/weights.rgfw").string())));
}

TEST_F(TinyRun, RerunGivesIdenticalMetrics) {
  const auto dir = scratch_dir("tiny_rerun");
  std::ostringstream log;
  Pipeline p(config_from_json(tiny_config(dir)), log);
  p.run({kAllStages.begin(), kAllStages.end()});
  for (const char* f : {"metrics/forecast_metrics.csv", "metrics/detection.csv",
                        "metrics/threshold_sweep.csv", "metrics/rule_summary.csv",
                        "metrics/detect_fdi_B.csv", "explain/summary.csv",
                        "model/weights.rgfw"}) {
    EXPECT_EQ(slurp(dir_ / f), slurp(dir / f)) << f;
  }
  fs::remove_all(dir);
}

TEST_F(TinyRun, StreamMatchesBatch) {
  const auto w = load_weights((dir_ / "model/weights.rgfw").string());
  const auto sc = load_scaler((dir_ / "model/scaler.txt").string());
  for (const char* ds : {"fdi_C", "scram"}) {
    std::ifstream in(dir_ / "data" / (std::string(ds) + ".csv"));
    std::ostringstream out, warn;
    const auto st = stream_detect(in, out, w, sc, cfg_.tau, cfg_.detector, cfg_.rules, &warn);
    EXPECT_EQ(st.malformed, 0u);
    EXPECT_GT(st.emitted, 0u);
    EXPECT_EQ(out.str(), slurp(dir_ / "metrics" / ("detect_" + std::string(ds) + ".csv")));
  }
}

TEST_F(TinyRun, StreamSkipsMalformedRows) {
  const auto w = load_weights((dir_ / "model/weights.rgfw").string());
  const auto sc = load_scaler((dir_ / "model/scaler.txt").string());
  std::ifstream in(dir_ / "data/fdi_A.csv");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  const auto clean = text;
  text.insert(text.find('\n', 2000) + 1, "garbage,row\n");
  text.insert(text.find('\n', 5000) + 1, "1,2,3,4,5,6,7,8,9\n");  // index goes backwards
  std::istringstream a(clean), b(text);
  std::ostringstream oa, ob, warn;
  stream_detect(a, oa, w, sc, cfg_.tau, cfg_.detector, cfg_.rules, &warn);
  const auto st = stream_detect(b, ob, w, sc, cfg_.tau, cfg_.detector, cfg_.rules, &warn);
  EXPECT_EQ(st.malformed, 2u);
  EXPECT_EQ(oa.str(), ob.str());
  EXPECT_NE(warn.str().find("skipped"), std::string::npos);
}

TEST_F(TinyRun, StreamEmptyInput) {
  const auto w = load_weights((dir_ / "model/weights.rgfw").string());
  const auto sc = load_scaler((dir_ / "model/scaler.txt").string());
  std::istringstream in("");
  std::ostringstream out;
  const auto st = stream_detect(in, out, w, sc, cfg_.tau, cfg_.detector, cfg_.rules, nullptr);
  EXPECT_EQ(st.emitted, 0u);
  EXPECT_EQ(out.str(), std::string(kDetectHeader) + "\n");
}

TEST_F(TinyRun, StreamHandlesMissingCells) {
  const auto w = load_weights((dir_ / "model/weights.rgfw").string());
  const auto sc = load_scaler((dir_ / "model/scaler.txt").string());
  auto frame = read_csv((dir_ / "data/fdi_B.csv").string());
  frame.columns[3][100] = kMissing;
  frame.columns[0][250] = kMissing;
  std::stringstream csv;
  write_csv(csv, frame);
  std::ostringstream out;
  stream_detect(csv, out, w, sc, cfg_.tau, cfg_.detector, cfg_.rules, nullptr);
  Forecaster model(w);
  std::string batch(kDetectHeader);
  batch += '\n';
  for (const auto& r : detect_frame(model, frame, sc, cfg_.windowing(), cfg_.detector, cfg_.rules)) {
    batch += format_detect_row(r) + '\n';
  }
  EXPECT_EQ(out.str(), batch);
}
