// replayguard command line: pipeline stages, ad-hoc simulation and injection,
// and the streaming detector.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "replayguard/replayguard.hpp"

using namespace replayguard;

namespace {

ActionType action_from_name(const std::string& s) {
  if (s == "withdraw") return ActionType::kWithdraw;
  if (s == "insert") return ActionType::kInsert;
  if (s == "stop") return ActionType::kStop;
  if (s == "scram") return ActionType::kScram;
  if (s == "hold") return ActionType::kHold;
  fail(ErrorKind::kConfig, "unknown action '" + s + "'");
}

ScenarioScript load_script(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::kConfig, "cannot open script '" + path + "'");
  ScenarioScript s;
  try {
    const json j = json::parse(is, nullptr, true, true);
    s.duration = j.at("duration").get<double>();
    s.initial_counts = j.value("initial_counts", s.initial_counts);
    if (j.contains("initial_positions")) {
      const auto p = j.at("initial_positions").get<std::vector<double>>();
      require(p.size() == kRodCount, ErrorKind::kConfig, "initial_positions needs 3 values");
      std::copy(p.begin(), p.end(), s.initial_positions.begin());
    }
    s.index_start = j.value("index_start", s.index_start);
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      s.noise.counts_rel = n.value("counts_rel", s.noise.counts_rel);
      s.noise.rate_abs = n.value("rate_abs", s.noise.rate_abs);
      s.noise.position_abs = n.value("position_abs", s.noise.position_abs);
    }
    for (const auto& a : j.value("actions", json::array())) {
      s.actions.push_back({a.at("at").get<double>(),
                           action_from_name(a.at("type").get<std::string>()),
                           a.value("rod", -1)});
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, "script '" + path + "': " + e.what());
  }
  return s;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
};

RunConfig resolve_config(const Common& c) {
  require(!c.config.empty(), ErrorKind::kConfig, "--config is required");
  std::ifstream is(c.config);
  require(static_cast<bool>(is), ErrorKind::kConfig, "cannot open config '" + c.config + "'");
  json j;
  try {
    j = json::parse(is, nullptr, true, true);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, "config '" + c.config + "': " + e.what());
  }
  if (c.seed) j["seed"] = *c.seed;
  if (!c.output_dir.empty()) {
    j["output_dir"] = fs::absolute(c.output_dir).string();
    j.erase("paths");
  }
  return config_from_json(j, fs::path(c.config).parent_path());
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "run configuration (JSON)");
  app->add_option("--seed", c.seed, "override the global seed");
  app->add_option("-o,--output-dir", c.output_dir, "override the output directory");
}

std::vector<Stage> parse_stages(const std::string& list) {
  if (list.empty()) return {kAllStages.begin(), kAllStages.end()};
  std::vector<Stage> out;
  for (const auto& name : split_csv(list)) {
    const auto s = stage_from_name(name);
    require(s.has_value(), ErrorKind::kConfig, "unknown stage '" + name + "'");
    out.push_back(*s);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Replay-attack detection for reactor sensor streams"};
  app.require_subcommand(1);

  Common common;
  std::map<Stage, CLI::App*> stage_cmds;
  for (Stage s : kAllStages) {
    if (s == Stage::kSimulate || s == Stage::kInject) continue;
    auto* sub = app.add_subcommand(std::string(stage_name(s)), "run the " +
                                                                   std::string(stage_name(s)) +
                                                                   " stage");
    add_common(sub, common);
    stage_cmds[s] = sub;
  }

  auto* simulate = app.add_subcommand("simulate", "generate the synthetic suite or one scripted scenario");
  add_common(simulate, common);
  std::string script, sim_out;
  simulate->add_option("--script", script, "scenario script (JSON)");
  simulate->add_option("--output", sim_out, "CSV output for --script");

  auto* inject = app.add_subcommand("inject", "build FDI datasets or inject one replay");
  add_common(inject, common);
  std::string inj_in, inj_tmpl, inj_out, inj_variant = "A";
  std::int64_t inj_t0 = 0;
  InjectOptions inj_opt;
  inject->add_option("--input", inj_in, "true data CSV");
  inject->add_option("--template", inj_tmpl, "recorded data to replay");
  inject->add_option("--t0", inj_t0, "index of the first falsified second");
  inject->add_option("--variant", inj_variant, "A, B or C")->check(CLI::IsMember({"A", "B", "C"}));
  inject->add_option("--ramp", inj_opt.ramp_seconds, "seconds of blend");
  inject->add_option("--replay", inj_opt.replay_seconds, "seconds of replay");
  inject->add_option("--output", inj_out, "CSV output");

  auto* run = app.add_subcommand("run", "run several stages in order");
  add_common(run, common);
  std::string stages;
  run->add_option("--stages", stages, "comma separated stage list (default: all)");

  auto* stream = app.add_subcommand("stream", "detect on CSV rows from stdin");
  add_common(stream, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (simulate->parsed() && !script.empty()) {
      require(!sim_out.empty(), ErrorKind::kConfig, "--script needs --output");
      ReactorConfig rc;
      write_csv(sim_out, run_scenario(load_script(script), rc, common.seed.value_or(7)));
      return 0;
    }
    if (inject->parsed() && !inj_in.empty()) {
      require(!inj_tmpl.empty() && !inj_out.empty(), ErrorKind::kConfig,
              "--input needs --template and --output");
      write_csv(inj_out, inject_replay(read_csv(inj_in), *variant_from_name(inj_variant),
                                       read_csv(inj_tmpl), inj_t0, inj_opt));
      return 0;
    }
    const RunConfig cfg = resolve_config(common);
    if (stream->parsed()) {
      Pipeline p(cfg);
      for (const auto& f : {p.weights_path(), p.scaler_path()}) {
        need(f, f == p.weights_path() ? Stage::kTrain : Stage::kPreprocess);
      }
      std::ios::sync_with_stdio(false);
      const StreamStats st =
          stream_detect(std::cin, std::cout, load_weights(p.weights_path().string()),
                        load_scaler(p.scaler_path().string()), cfg.tau, cfg.detector, cfg.rules);
      Manifest m(cfg);
      m.set_malformed(st.malformed);
      m.save();
      std::cerr << "stream: " << st.rows << " rows, " << st.emitted << " verdicts, "
                << st.malformed << " malformed\n";
      return 0;
    }
    Pipeline p(cfg);
    if (simulate->parsed()) {
      p.run(Stage::kSimulate);
    } else if (inject->parsed()) {
      p.run(Stage::kInject);
    } else if (run->parsed()) {
      p.run(parse_stages(stages));
    } else {
      for (const auto& [s, sub] : stage_cmds) {
        if (sub->parsed()) p.run(s);
      }
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
