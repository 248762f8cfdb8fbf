#include <gtest/gtest.h>

#include "oracles.hpp"
#include "replayguard/reactor_sim.hpp"

using namespace replayguard;

TEST(RodWorth, EndsAndMidpoint) {
  RodConfig rod;
  EXPECT_DOUBLE_EQ(rod_worth(0.0, rod), 0.0);
  EXPECT_NEAR(rod_worth(rod.travel, rod), rod.total_worth, 1e-15);
  EXPECT_NEAR(rod_worth(rod.travel / 2, rod), rod.total_worth / 2, 1e-15);
}

TEST(RodWorth, MonotoneAndAntisymmetric) {
  RodConfig rod;
  double prev = -1;
  for (int i = 0; i <= 100; ++i) {
    const double w = rod_worth(i, rod);
    EXPECT_GE(w, prev);
    prev = w;
    EXPECT_NEAR(w + rod_worth(100 - i, rod), rod.total_worth, 1e-15);
  }
}

TEST(RodWorth, OutsideTravelThrows) {
  RodConfig rod;
  EXPECT_THROW(rod_worth(-0.1, rod), Error);
  EXPECT_THROW(rod_worth(100.1, rod), Error);
}

TEST(Kinetics, EquilibriumHoldsWithoutSource) {
  KineticsParams p;
  auto s = equilibrium_state(5000.0, p);
  for (int i = 0; i < 10000; ++i) s = step_kinetics(s, 0.1, 0.0, p);
  EXPECT_NEAR(s.n / 5000.0 - 1.0, 0.0, 1e-9);
}

TEST(Kinetics, ScramDecreasesEveryStep) {
  KineticsParams p;
  auto s = equilibrium_state(1e5, p);
  for (int i = 0; i < 600; ++i) {
    const auto next = step_kinetics(s, 0.1, -0.04, p);
    ASSERT_LT(next.n, s.n) << "step " << i;
    s = next;
  }
}

TEST(Kinetics, PeriodMatchesInhour) {
  KineticsParams p;
  const double rho = 0.0005;
  auto s = equilibrium_state(1.0, p);
  for (int i = 0; i < 3000; ++i) s = step_kinetics(s, 0.1, rho, p);
  const double n0 = s.n;
  for (int i = 0; i < 100; ++i) s = step_kinetics(s, 0.1, rho, p);
  const double period = 10.0 / std::log(s.n / n0);
  const double expected = oracle::inhour_period(rho, p.beta, p.generation_time, p.decay_constant);
  EXPECT_NEAR(period / expected, 1.0, 0.02);
}

TEST(Kinetics, StepSizeIndependentForConstantRho) {
  KineticsParams p;
  p.source = 100.0;
  auto a = equilibrium_state(2000.0, p);
  auto b = a;
  a = step_kinetics(a, 1.0, 0.001, p);
  for (int i = 0; i < 10; ++i) b = step_kinetics(b, 0.1, 0.001, p);
  EXPECT_NEAR(a.n / b.n, 1.0, 1e-10);
  EXPECT_NEAR(a.c / b.c, 1.0, 1e-10);
}

TEST(Kinetics, RejectsBadStep) {
  EXPECT_THROW(step_kinetics(equilibrium_state(1.0), 0.0, 0.0), Error);
  EXPECT_THROW(step_kinetics(equilibrium_state(1.0), NAN, 0.0), Error);
}

namespace {

ScenarioScript steady_script(double seconds) {
  ReactorConfig cfg;
  ScenarioScript s;
  s.duration = seconds;
  s.initial_counts = 1e5;
  s.initial_positions = critical_positions(cfg, s.initial_counts);
  return s;
}

}  // namespace

TEST(Scenario, HoldOnlyStaysWithinNoise) {
  ReactorConfig cfg;
  auto script = steady_script(600);
  const auto f = run_scenario(script, cfg, 3);
  const double sigma = script.noise.counts_rel * script.initial_counts;
  std::size_t inside = 0;
  for (double v : f.column(Signal::kNCounts)) {
    inside += std::abs(v - script.initial_counts) <= 3.0 * sigma;
    EXPECT_LT(std::abs(v - script.initial_counts), 5.0 * sigma);
  }
  EXPECT_GE(inside, static_cast<std::size_t>(0.99 * f.size()));
  for (std::size_t r = 0; r < kRodCount; ++r) {
    for (double d : f.column(active_signal(r))) EXPECT_EQ(d, 0.0);
  }
  script.noise = NoiseConfig::none();
  for (double v : run_scenario(script, cfg, 3).column(Signal::kNCounts)) {
    EXPECT_NEAR(v / script.initial_counts, 1.0, 1e-9);
  }
}

TEST(Scenario, ScramInsertsAllRodsAndCountsFall) {
  ReactorConfig cfg;
  auto script = steady_script(200);
  script.noise = NoiseConfig::none();
  script.actions.push_back({60.0, ActionType::kScram, -1});
  const auto f = run_scenario(script, cfg, 1);
  const double limit = cfg.rods[0].travel / cfg.rods[0].scram_speed;
  const auto settle = static_cast<std::size_t>(60 + std::ceil(limit));
  for (std::size_t r = 0; r < kRodCount; ++r) {
    EXPECT_EQ(f.at(settle, position_signal(r)), 0.0);
  }
  const auto& n = f.column(Signal::kNCounts);
  for (std::size_t t = 61; t < n.size(); ++t) EXPECT_LT(n[t], n[t - 1]) << t;
}

TEST(Scenario, SameSeedIsBitIdentical) {
  ReactorConfig cfg;
  auto script = steady_script(300);
  script.actions.push_back({10.0, ActionType::kWithdraw, 2});
  script.actions.push_back({20.0, ActionType::kStop, 2});
  const auto a = run_scenario(script, cfg, 9);
  const auto b = run_scenario(script, cfg, 9);
  const auto c = run_scenario(script, cfg, 10);
  for (std::size_t col = 0; col < kSignalCount; ++col) {
    EXPECT_EQ(std::memcmp(a.columns[col].data(), b.columns[col].data(),
                          a.size() * sizeof(double)),
              0);
  }
  EXPECT_NE(a.columns[0], c.columns[0]);
}

TEST(Scenario, ActiveStateFollowsCommand) {
  ReactorConfig cfg;
  auto script = steady_script(40);
  script.noise = NoiseConfig::none();
  script.actions.push_back({5.0, ActionType::kInsert, 0});
  script.actions.push_back({15.0, ActionType::kStop, 0});
  const auto f = run_scenario(script, cfg, 1);
  EXPECT_EQ(f.at(4, Signal::kSs1Active), 0.0);
  EXPECT_EQ(f.at(5, Signal::kSs1Active), -1.0);
  EXPECT_EQ(f.at(14, Signal::kSs1Active), -1.0);
  EXPECT_EQ(f.at(15, Signal::kSs1Active), 0.0);
  EXPECT_NEAR(f.at(15, Signal::kSs1Pos), script.initial_positions[0] - 10.0, 1e-9);
}

TEST(Scenario, RateMatchesClippedChangeOfTrueCounts) {
  ReactorConfig cfg;
  auto script = steady_script(120);
  script.noise = NoiseConfig::none();
  script.actions.push_back({10.0, ActionType::kWithdraw, 2});
  script.actions.push_back({30.0, ActionType::kStop, 2});
  script.actions.push_back({60.0, ActionType::kInsert, -1});
  const auto f = run_scenario(script, cfg, 1);
  const auto& n = f.column(Signal::kNCounts);
  for (std::size_t t = 1; t < f.size(); ++t) {
    EXPECT_NEAR(f.at(t, Signal::kNRate), clipped_percent_change(n[t - 1], n[t]), 1e-9);
  }
}

TEST(Scenario, BadScriptRejected) {
  ReactorConfig cfg;
  auto script = steady_script(10);
  script.initial_positions[0] = 120.0;
  EXPECT_THROW(run_scenario(script, cfg, 1), Error);
  script = steady_script(-1);
  EXPECT_THROW(run_scenario(script, cfg, 1), Error);
}

TEST(CriticalPositions, BalanceSource) {
  ReactorConfig cfg;
  const double n = 3e5;
  const auto pos = critical_positions(cfg, n);
  EXPECT_NEAR(cfg.reactivity(pos), -cfg.kinetics.source * cfg.kinetics.generation_time / n,
              1e-12);
}

TEST(Suite, EmptyWhenNoEvents) {
  SuiteConfig cfg;
  cfg.normal_operations = 0;
  cfg.transient_events = 0;
  cfg.scram_events = 0;
  const auto s = generate_suite(cfg, 1);
  EXPECT_TRUE(s.normal.empty());
  EXPECT_TRUE(s.transient.empty());
  EXPECT_TRUE(s.scram.empty());
}

TEST(Suite, ScramFrameLength) {
  SuiteConfig cfg;
  cfg.normal_operations = 0;
  cfg.transient_events = 0;
  const auto s = generate_suite(cfg, 5);
  const auto per_event = static_cast<std::size_t>(2 * cfg.scram_margin + 1);
  EXPECT_EQ(s.scram.size(), static_cast<std::size_t>(cfg.scram_events) * per_event);
  EXPECT_TRUE(s.scram.well_formed());
  for (Label l : s.scram.label) EXPECT_EQ(l, Label::kNormal);
}

TEST(Suite, TransientSegmentsExceedRateFloor) {
  SuiteConfig cfg;
  cfg.normal_operations = 0;
  cfg.scram_events = 0;
  cfg.transient_events = 4;
  const auto s = generate_suite(cfg, 8);
  const auto& f = s.transient;
  double seg_max = 0.0;
  int segments = 0;
  for (std::size_t r = 0; r <= f.size(); ++r) {
    if (r == f.size() || (r > 0 && !continues_run(f.index, r))) {
      EXPECT_GT(seg_max, 0.1);
      ++segments;
      seg_max = 0.0;
      if (r == f.size()) break;
    }
    seg_max = std::max(seg_max, std::abs(f.at(r, Signal::kNRate)));
  }
  EXPECT_EQ(segments, 4);
}

TEST(Suite, NormalOperationCoversPowerRange) {
  SuiteConfig cfg;
  cfg.normal_operations = 1;
  cfg.transient_events = 0;
  cfg.scram_events = 0;
  const auto s = generate_suite(cfg, 2);
  const auto& n = s.normal.column(Signal::kNCounts);
  EXPECT_GT(*std::max_element(n.begin(), n.end()), 0.15 * cfg.full_scale_counts);
  EXPECT_LT(n.back(), n[n.size() / 2]);
  EXPECT_TRUE(s.normal.well_formed());
}

namespace {

SignalFrame steady_frame(std::size_t rows, double counts) {
  SignalFrame f;
  for (std::size_t t = 0; t < rows; ++t) {
    f.push_row(static_cast<std::int64_t>(t), {counts, 0.0, 70.0, 70.0, 40.0, 0.0, 0.0, 0.0});
  }
  return f;
}

}  // namespace

TEST(Inject, VariantAOnlyTouchesCounts) {
  auto base = steady_frame(100, 5e5);
  auto templ = steady_frame(70, 1e4);
  const auto out = inject_replay(base, FdiVariant::kA, templ, 20);
  for (std::size_t c = 0; c < kSignalCount; ++c) {
    if (c == to_index(Signal::kNCounts)) {
      EXPECT_NE(out.columns[c], base.columns[c]);
    } else {
      EXPECT_EQ(out.columns[c], base.columns[c]);
    }
  }
  for (std::size_t r = 0; r < 20; ++r) EXPECT_EQ(out.label[r], Label::kNormal);
  EXPECT_EQ(out.label[85], Label::kAnomalous);
  EXPECT_EQ(out.label[95], Label::kNormal);
}

TEST(Inject, VariantCLeavesActiveStates) {
  auto base = steady_frame(100, 5e5);
  auto templ = steady_frame(70, 1e4);
  for (std::size_t t = 0; t < templ.size(); ++t) {
    templ.column(Signal::kSs1Active)[t] = -1.0;
    templ.column(Signal::kSs1Pos)[t] = 70.0 - static_cast<double>(t);
  }
  const auto out = inject_replay(base, FdiVariant::kC, templ, 20);
  for (std::size_t r = 0; r < kRodCount; ++r) {
    EXPECT_EQ(out.column(active_signal(r)), base.column(active_signal(r)));
  }
  EXPECT_NE(out.column(Signal::kSs1Pos), base.column(Signal::kSs1Pos));
}

TEST(Inject, IdenticalTemplateIsUndetectable) {
  auto base = steady_frame(100, 5e5);
  const auto templ = base.slice(20, 90);
  const auto out = inject_replay(base, FdiVariant::kC, templ, 20);
  for (std::size_t r = 20; r < 90; ++r) EXPECT_EQ(out.label[r], Label::kUndetectable);
}

TEST(Inject, RampBlendsLinearly) {
  auto base = steady_frame(100, 1000.0);
  auto templ = steady_frame(70, 0.0);
  InjectOptions opt;
  opt.ramp_seconds = 4;
  const auto out = inject_replay(base, FdiVariant::kA, templ, 10, opt);
  EXPECT_DOUBLE_EQ(out.at(10, Signal::kNCounts), 800.0);
  EXPECT_DOUBLE_EQ(out.at(13, Signal::kNCounts), 200.0);
  EXPECT_DOUBLE_EQ(out.at(14, Signal::kNCounts), 0.0);
}

TEST(Inject, Errors) {
  auto base = steady_frame(100, 5e5);
  EXPECT_THROW(inject_replay(base, FdiVariant::kA, steady_frame(10, 1.0), 20), Error);
  EXPECT_THROW(inject_replay(base, FdiVariant::kA, steady_frame(70, 1.0), 500), Error);
}

TEST(FdiEvents, DatasetShapes) {
  SuiteConfig cfg;
  cfg.fdi_events = 2;
  const auto events = generate_fdi_events(cfg, 4);
  ASSERT_EQ(events.size(), 2u);
  const auto ds = build_fdi_dataset(events, FdiVariant::kB, cfg);
  EXPECT_EQ(ds.injected.size(), 2u * static_cast<std::size_t>(cfg.fdi_lead + cfg.fdi_replay));
  EXPECT_EQ(ds.truth.index, ds.injected.index);
  std::size_t anomalous = 0;
  for (Label l : ds.injected.label) anomalous += l == Label::kAnomalous;
  EXPECT_GT(anomalous, 100u);
}
