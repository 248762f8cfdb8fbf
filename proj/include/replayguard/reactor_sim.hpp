#pragma once

// Synthetic reactor signal generator: one-group point kinetics driven by three
// control rods, an operator model that produces realistic power maneuvers,
// and the dataset recipes (normal, transient, scram, replay injections).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "replayguard/error.hpp"
#include "replayguard/random.hpp"
#include "replayguard/signal_frame.hpp"

namespace replayguard {

// ---------------------------------------------------------------------------
// Point kinetics

struct KineticsParams {
  double beta = 0.0075;            // delayed neutron fraction
  double generation_time = 1e-4;   // s
  double decay_constant = 0.08;    // 1/s, one effective precursor group
  double source = 0.0;             // external source, counts/s
};

struct KineticsState {
  double n = 1.0;    // neutron population, > 0
  double c = 0.0;    // precursor population, >= 0
  double rho = 0.0;  // net reactivity (absolute units)
  double t = 0.0;    // s
};

// Precursors in equilibrium with n; exact fixed point at rho = 0, source = 0.
inline KineticsState equilibrium_state(double n, const KineticsParams& p = {}) {
  KineticsState s;
  s.n = n;
  s.c = p.beta / (p.generation_time * p.decay_constant) * n;
  return s;
}

namespace detail {

inline double phi1(double z) {
  return std::abs(z) < 1e-12 ? 1.0 + 0.5 * z : std::expm1(z) / z;
}

}  // namespace detail

// Advances the two kinetics equations by dt with rho held constant.
//
//   dn/dt = (rho - beta)/L * n + lambda * c + S
//   dc/dt = beta/L * n - lambda * c
//
// The system is linear for constant rho, so the step uses the closed-form
// 2x2 matrix exponential (Sylvester form). The prompt eigenvalue is of order
// -(beta - rho)/L, far outside the stability region of any explicit scheme
// at dt = 0.1 s.
inline KineticsState step_kinetics(const KineticsState& s, double dt, double rho,
                                   const KineticsParams& p = {}) {
  require(dt > 0.0 && std::isfinite(dt), ErrorKind::kDomain,
          "step_kinetics: dt must be positive and finite");
  const double L = p.generation_time;
  const double lam = p.decay_constant;
  const double a = (rho - p.beta) / L;
  const double b = lam;
  const double cc = p.beta / L;
  const double d = -lam;
  const double trace = a + d;
  const double det = -lam * rho / L;
  // (a - d)^2 + 4 b c, written without cancellation; always > 0.
  const double disc = (a + lam) * (a + lam) + 4.0 * lam * cc;
  const double root = std::sqrt(disc);
  double s1, s2;
  if (trace <= 0.0) {
    s2 = 0.5 * (trace - root);
    s1 = det / s2;
  } else {
    s1 = 0.5 * (trace + root);
    s2 = det / s1;
  }
  const double gap = s1 - s2;
  const double e1 = std::exp(s1 * dt);
  const double e2 = std::exp(s2 * dt);
  // exp(A dt) = (e1 (A - s2 I) - e2 (A - s1 I)) / (s1 - s2)
  const double m11 = (e1 * (a - s2) - e2 * (a - s1)) / gap;
  const double m12 = (e1 - e2) * b / gap;
  const double m21 = (e1 - e2) * cc / gap;
  const double m22 = (e1 * (d - s2) - e2 * (d - s1)) / gap;

  KineticsState out;
  out.n = m11 * s.n + m12 * s.c;
  out.c = m21 * s.n + m22 * s.c;
  if (p.source != 0.0) {
    const double f1 = detail::phi1(s1 * dt);
    const double f2 = detail::phi1(s2 * dt);
    // phi1(A dt) * dt applied to (S, 0).
    out.n += dt * p.source * (f1 * (a - s2) - f2 * (a - s1)) / gap;
    out.c += dt * p.source * (f1 - f2) * cc / gap;
  }
  out.rho = rho;
  out.t = s.t + dt;
  require(std::isfinite(out.n) && std::isfinite(out.c) && out.n > 0.0,
          ErrorKind::kNumeric,
          "step_kinetics: non-finite or non-positive state at t=" +
              std::to_string(out.t));
  out.c = std::max(out.c, 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Control rods

struct RodConfig {
  double total_worth = 0.025;  // reactivity
  double travel = 100.0;       // cm
  double speed = 1.0;          // cm/s
  double scram_speed = 200.0;  // cm/s

  void validate() const {
    require(total_worth > 0.0, ErrorKind::kConfig, "rod total_worth must be > 0");
    require(travel > 0.0, ErrorKind::kConfig, "rod travel must be > 0");
    require(speed > 0.0 && speed < scram_speed, ErrorKind::kConfig,
            "rod speeds must satisfy 0 < speed < scram_speed");
  }
};

// Integrated S-curve worth of a rod withdrawn to `pos`.
inline double rod_worth(double pos, const RodConfig& cfg) {
  require(pos >= 0.0 && pos <= cfg.travel, ErrorKind::kDomain,
          "rod_worth: position " + std::to_string(pos) + " outside [0, " +
              std::to_string(cfg.travel) + "]");
  const double x = pos / cfg.travel;
  return cfg.total_worth *
         (x - std::sin(2.0 * std::numbers::pi * x) / (2.0 * std::numbers::pi));
}

// Two shim-safety rods and one regulating rod.
struct ReactorConfig {
  KineticsParams kinetics{.source = 1.0e5};
  std::array<RodConfig, kRodCount> rods{
      RodConfig{.total_worth = 0.025, .travel = 100.0, .speed = 1.0,
                .scram_speed = 200.0},
      RodConfig{.total_worth = 0.025, .travel = 100.0, .speed = 1.0,
                .scram_speed = 200.0},
      RodConfig{.total_worth = 0.004, .travel = 100.0, .speed = 1.5,
                .scram_speed = 200.0}};
  // Net reactivity is sum(rod worth) - reactivity_bias. The default makes the
  // core critical with both shims at 75 cm and the regulating rod at 50 cm.
  double reactivity_bias = 0.04745775;
  int substeps = 10;  // integrator steps per 1 s sample

  void validate() const {
    for (const auto& r : rods) r.validate();
    require(substeps >= 1, ErrorKind::kConfig, "substeps must be >= 1");
    require(kinetics.beta > 0 && kinetics.generation_time > 0 &&
                kinetics.decay_constant > 0 && kinetics.source >= 0,
            ErrorKind::kConfig, "kinetics parameters must be positive");
  }

  double reactivity(const std::array<double, kRodCount>& pos) const {
    double rho = -reactivity_bias;
    for (std::size_t i = 0; i < kRodCount; ++i) rho += rod_worth(pos[i], rods[i]);
    return rho;
  }
};

struct NoiseConfig {
  double counts_rel = 0.0025;  // multiplicative, on n_counts
  double rate_abs = 0.05;      // additive, %/s on n_rate
  double position_abs = 0.01;  // additive, cm on rod positions

  static NoiseConfig none() { return {0.0, 0.0, 0.0}; }
};

// Rate as defined for the counts/rate consistency check: percent change over
// one second, clipped below at -3 %/s.
inline double clipped_percent_change(double prev, double cur) {
  return std::max(100.0 * (cur - prev) / (1.0 + prev), -3.0);
}

// ---------------------------------------------------------------------------
// Scripts

enum class ActionType { kWithdraw, kInsert, kStop, kScram, kHold };

struct ScriptAction {
  double at = 0.0;  // s from scenario start
  ActionType type = ActionType::kHold;
  int rod = -1;  // 0..2, or -1 for all rods
};

struct ScenarioScript {
  std::vector<ScriptAction> actions;
  double duration = 0.0;  // s; one sample per whole second
  NoiseConfig noise;
  double initial_counts = 1.0e5;
  std::array<double, kRodCount> initial_positions{75.0, 75.0, 50.0};
  std::int64_t index_start = 0;

  void validate(const ReactorConfig& cfg) const {
    require(duration >= 0.0, ErrorKind::kConfig, "script duration must be >= 0");
    require(initial_counts > 0.0, ErrorKind::kConfig,
            "script initial_counts must be > 0");
    for (std::size_t i = 0; i < kRodCount; ++i) {
      require(initial_positions[i] >= 0.0 &&
                  initial_positions[i] <= cfg.rods[i].travel,
              ErrorKind::kConfig, "script initial position out of travel");
    }
    for (std::size_t i = 0; i < actions.size(); ++i) {
      const auto& a = actions[i];
      require(a.at >= 0.0 && a.at <= duration, ErrorKind::kConfig,
              "script action time outside [0, duration]");
      require(i == 0 || a.at > actions[i - 1].at, ErrorKind::kConfig,
              "script action times must be strictly increasing");
      require(a.rod >= -1 && a.rod < static_cast<int>(kRodCount),
              ErrorKind::kConfig, "script action rod out of range");
    }
  }
};

// ---------------------------------------------------------------------------
// Simulator

class ReactorSimulator {
 public:
  ReactorSimulator(const ReactorConfig& cfg, const NoiseConfig& noise,
                   double initial_counts,
                   const std::array<double, kRodCount>& positions,
                   std::uint64_t seed)
      : cfg_(cfg), noise_(noise), rng_(seed), pos_(positions) {
    cfg_.validate();
    state_ = equilibrium_state(initial_counts, cfg_.kinetics);
    state_.rho = cfg_.reactivity(pos_);
    prev_n_ = state_.n;
  }

  void apply(const ScriptAction& a) {
    auto for_rods = [&](auto&& fn) {
      if (a.rod < 0) {
        for (std::size_t i = 0; i < kRodCount; ++i) fn(i);
      } else {
        fn(static_cast<std::size_t>(a.rod));
      }
    };
    switch (a.type) {
      case ActionType::kWithdraw:
        for_rods([&](std::size_t i) {
          if (!scramming_[i] && pos_[i] < cfg_.rods[i].travel) dir_[i] = 1;
        });
        break;
      case ActionType::kInsert:
        for_rods([&](std::size_t i) {
          if (!scramming_[i] && pos_[i] > 0.0) dir_[i] = -1;
        });
        break;
      case ActionType::kStop:
        for_rods([&](std::size_t i) {
          if (!scramming_[i]) dir_[i] = 0;
        });
        break;
      case ActionType::kScram:
        for (std::size_t i = 0; i < kRodCount; ++i) {
          if (pos_[i] > 0.0) {
            scramming_[i] = true;
            dir_[i] = -1;
          }
        }
        break;
      case ActionType::kHold:
        break;
    }
  }

  // Noisy observation at the current time. Advances the rate reference, so
  // call exactly once per second.
  SignalRow observe() {
    SignalRow row{};
    const double n = state_.n;
    row[to_index(Signal::kNCounts)] = n * (1.0 + noise_.counts_rel * rng_.normal());
    row[to_index(Signal::kNRate)] =
        clipped_percent_change(prev_n_, n) + noise_.rate_abs * rng_.normal();
    for (std::size_t i = 0; i < kRodCount; ++i) {
      row[to_index(position_signal(i))] =
          pos_[i] + noise_.position_abs * rng_.normal();
      row[to_index(active_signal(i))] = static_cast<double>(dir_[i]);
    }
    prev_n_ = n;
    return row;
  }

  void advance_substep(double dt) {
    std::array<double, kRodCount> next = pos_;
    for (std::size_t i = 0; i < kRodCount; ++i) {
      const auto& rod = cfg_.rods[i];
      if (dir_[i] == 0) continue;
      const double v = scramming_[i] ? rod.scram_speed : rod.speed;
      next[i] = std::clamp(pos_[i] + dir_[i] * v * dt, 0.0, rod.travel);
      // Drive limit switches stop the motor at either end of travel.
      if ((dir_[i] > 0 && next[i] >= rod.travel) ||
          (dir_[i] < 0 && next[i] <= 0.0)) {
        dir_[i] = 0;
        scramming_[i] = false;
      }
    }
    const double rho =
        0.5 * (cfg_.reactivity(pos_) + cfg_.reactivity(next));
    state_ = step_kinetics(state_, dt, rho, cfg_.kinetics);
    pos_ = next;
  }

  void advance_second() {
    const double dt = 1.0 / cfg_.substeps;
    for (int k = 0; k < cfg_.substeps; ++k) advance_substep(dt);
  }

  double counts() const { return state_.n; }
  double time() const { return state_.t; }
  double reactivity() const { return cfg_.reactivity(pos_); }
  const std::array<double, kRodCount>& positions() const { return pos_; }
  const std::array<int, kRodCount>& directions() const { return dir_; }
  const ReactorConfig& config() const { return cfg_; }

 private:
  ReactorConfig cfg_;
  NoiseConfig noise_;
  Rng rng_;
  KineticsState state_;
  std::array<double, kRodCount> pos_;
  std::array<int, kRodCount> dir_{0, 0, 0};
  std::array<bool, kRodCount> scramming_{false, false, false};
  double prev_n_ = 1.0;
};

// Samples at t = 0, 1, ..., duration - 1. Actions due at or before t are
// applied before the sample at t is taken; actions falling inside a second
// take effect at the next integrator substep.
inline SignalFrame run_scenario(const ScenarioScript& script,
                                const ReactorConfig& cfg, std::uint64_t seed) {
  script.validate(cfg);
  ReactorSimulator sim(cfg, script.noise, script.initial_counts,
                       script.initial_positions, seed);
  SignalFrame frame;
  const auto samples = static_cast<std::size_t>(std::floor(script.duration));
  frame.reserve(samples);
  std::size_t next = 0;
  const double dt = 1.0 / cfg.substeps;
  for (std::size_t t = 0; t < samples; ++t) {
    const double now = static_cast<double>(t);
    while (next < script.actions.size() && script.actions[next].at <= now) {
      sim.apply(script.actions[next++]);
    }
    frame.push_row(script.index_start + static_cast<std::int64_t>(t),
                   sim.observe());
    for (int k = 0; k < cfg.substeps; ++k) {
      const double sub = now + k * dt;
      while (next < script.actions.size() && script.actions[next].at <= sub) {
        sim.apply(script.actions[next++]);
      }
      sim.advance_substep(dt);
    }
  }
  return frame;
}

inline SignalFrame run_scenario(const ScenarioScript& script,
                                const std::array<RodConfig, kRodCount>& rods,
                                std::uint64_t seed) {
  ReactorConfig cfg;
  cfg.rods = rods;
  return run_scenario(script, cfg, seed);
}

// Regulating-rod position that makes the core exactly balanced against the
// source at population n with both shims at `shim_pos`.
inline std::array<double, kRodCount> critical_positions(const ReactorConfig& cfg,
                                                        double n,
                                                        double shim_pos = 75.0) {
  const double target =
      -cfg.kinetics.source * cfg.kinetics.generation_time / n;
  std::array<double, kRodCount> pos{shim_pos, shim_pos, 0.0};
  double lo = 0.0, hi = cfg.rods[2].travel;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    pos[2] = mid;
    if (cfg.reactivity(pos) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  pos[2] = 0.5 * (lo + hi);
  return pos;
}

// ---------------------------------------------------------------------------
// Operator model used to synthesize datasets. Drives a simulator one second
// at a time, records the frame and the equivalent script.

class Operator {
 public:
  Operator(const ReactorConfig& cfg, const NoiseConfig& noise,
           double initial_counts, const std::array<double, kRodCount>& positions,
           std::int64_t index_start, std::uint64_t seed)
      : sim_(cfg, noise, initial_counts, positions, seed),
        index_start_(index_start) {
    script_.noise = noise;
    script_.initial_counts = initial_counts;
    script_.initial_positions = positions;
    script_.index_start = index_start;
  }

  // One second: optional action, observation, integration.
  void tick(std::optional<ScriptAction> action = std::nullopt) {
    const double now = static_cast<double>(t_);
    if (action) {
      action->at = now;
      sim_.apply(*action);
      script_.actions.push_back(*action);
    }
    frame_.push_row(index_start_ + t_, sim_.observe());
    sim_.advance_second();
    ++t_;
  }

  void hold(int seconds) {
    if (any_moving()) {
      tick(ScriptAction{0, ActionType::kStop, -1});
      --seconds;
    }
    for (int i = 0; i < seconds; ++i) tick();
  }

  // Closed-loop approach to a target population. The controller asks for a
  // stable rate proportional to log(target/n), converts it to reactivity
  // through the one-group inhour relation and moves one rod at a time.
  // Returns once the population has stayed within 2% of target for 20 s.
  void approach(double target, double max_rate_pct, int max_seconds) {
    int settled = 0;
    for (int s = 0; s < max_seconds; ++s) {
      const double lr = std::log(target / sim_.counts());
      settled = (std::abs(lr) < 0.02) ? settled + 1 : 0;
      if (settled >= 20) break;
      tick(control_action(reactivity_error(target, max_rate_pct)));
    }
    if (any_moving()) tick(ScriptAction{0, ActionType::kStop, -1});
  }

  // Holds a power level for a fixed time with the regulating rod.
  void regulate(double target, int seconds) {
    for (int s = 0; s < seconds; ++s) {
      tick(control_action(reactivity_error(target, 0.3)));
    }
    if (any_moving()) tick(ScriptAction{0, ActionType::kStop, -1});
  }

  void shutdown_gradual(int seconds) {
    tick(ScriptAction{0, ActionType::kInsert, -1});
    for (int i = 1; i < seconds; ++i) tick();
  }

  void scram(int seconds_after) {
    tick(ScriptAction{0, ActionType::kScram, -1});
    for (int i = 1; i < seconds_after; ++i) tick();
  }

  bool any_moving() const {
    for (int d : sim_.directions()) {
      if (d != 0) return true;
    }
    return false;
  }

  const SignalFrame& frame() const { return frame_; }
  SignalFrame take_frame() { return std::move(frame_); }
  ScenarioScript script() const {
    ScenarioScript s = script_;
    s.duration = static_cast<double>(t_);
    return s;
  }
  const ReactorSimulator& simulator() const { return sim_; }

 private:
  double reactivity_error(double target, double max_rate_pct) const {
    const auto& kin = sim_.config().kinetics;
    const double n = sim_.counts();
    constexpr double kGain = 4.0;  // %/s per e-fold of remaining change
    const double rate =
        std::clamp(kGain * std::log(target / n), -max_rate_pct, max_rate_pct);
    const double omega = std::log1p(rate / 100.0);
    const double rho_source = -kin.source * kin.generation_time / n;
    const double rho_des = omega * kin.generation_time +
                           omega * kin.beta / (omega + kin.decay_constant) +
                           rho_source;
    return rho_des - sim_.reactivity();
  }

  std::optional<ScriptAction> control_action(double err) {
    const auto& cfg = sim_.config();
    const auto& pos = sim_.positions();
    const auto& dir = sim_.directions();
    constexpr double kDeadband = 8.0e-5;
    constexpr double kCoarse = 1.0e-3;
    int want_rod = -1;
    int want_dir = 0;
    if (std::abs(err) > kDeadband) {
      want_dir = err > 0 ? 1 : -1;
      auto has_room = [&](std::size_t i) {
        return want_dir > 0 ? pos[i] < cfg.rods[i].travel - 5.0 : pos[i] > 5.0;
      };
      if (std::abs(err) < kCoarse && has_room(2)) {
        want_rod = 2;
      } else {
        // Shim with the most room in the wanted direction.
        const std::size_t a = 0, b = 1;
        const bool pick_a = want_dir > 0 ? pos[a] <= pos[b] : pos[a] >= pos[b];
        want_rod = static_cast<int>(pick_a ? a : b);
        if (!has_room(static_cast<std::size_t>(want_rod))) {
          want_rod = static_cast<int>(pick_a ? b : a);
          if (!has_room(static_cast<std::size_t>(want_rod))) {
            want_rod = has_room(2) ? 2 : -1;
          }
        }
      }
      if (want_rod < 0) want_dir = 0;
    }
    int moving_rod = -1;
    for (std::size_t i = 0; i < kRodCount; ++i) {
      if (dir[i] != 0) moving_rod = static_cast<int>(i);
    }
    if (want_dir == 0) {
      if (moving_rod >= 0) return ScriptAction{0, ActionType::kStop, -1};
      return std::nullopt;
    }
    if (moving_rod == want_rod && dir[static_cast<std::size_t>(want_rod)] == want_dir) {
      return std::nullopt;
    }
    if (moving_rod >= 0) return ScriptAction{0, ActionType::kStop, -1};
    return ScriptAction{0, want_dir > 0 ? ActionType::kWithdraw : ActionType::kInsert,
                        want_rod};
  }

  ReactorSimulator sim_;
  std::int64_t index_start_;
  std::int64_t t_ = 0;
  SignalFrame frame_;
  ScenarioScript script_;
};

// ---------------------------------------------------------------------------
// Dataset recipes

struct SuiteConfig {
  ReactorConfig reactor;
  NoiseConfig noise;
  int normal_operations = 15;
  int transient_events = 9;
  int scram_events = 11;
  int fdi_events = 8;
  double full_scale_counts = 1.0e6;
  // Pre-scram power band, as a fraction of full scale.
  double scram_power_lo = 0.02;
  double scram_power_hi = 0.08;
  // Steady high-power band for replay injections.
  double fdi_power_lo = 0.55;
  double fdi_power_hi = 0.95;
  int scram_margin = 60;        // s kept before and after scram initiation
  int fdi_lead = 120;           // s of true data before the injection
  int fdi_replay = 70;          // s of replayed data
  int fdi_ramp = 10;            // s of gradual blend into the replay
  int template_offset = 5;      // s into the recorded shutdown
  double fdi_epsilon = 0.07;    // undetectable-label bound, normalized units
  std::int64_t event_gap = 1000;  // index gap between concatenated events
};

struct DatasetSuite {
  SignalFrame normal;
  SignalFrame transient;
  SignalFrame scram;
};

namespace detail {

inline std::int64_t next_start(const SignalFrame& f, std::int64_t gap) {
  return f.empty() ? 0 : f.index.back() + gap;
}

// Startup from source level, one to three power changes, gradual shutdown.
inline SignalFrame normal_operation(const SuiteConfig& cfg, std::int64_t start,
                                    std::uint64_t seed) {
  Rng rng(seed);
  const double fs = cfg.full_scale_counts;
  // Source-level equilibrium with all rods in.
  const auto& rc = cfg.reactor;
  const double rho0 = rc.reactivity({0.0, 0.0, 0.0});
  const double n_source = -rc.kinetics.source * rc.kinetics.generation_time / rho0;
  Operator op(rc, cfg.noise, n_source, {0.0, 0.0, 0.0}, start,
              derive_seed(seed, "noise"));
  op.hold(static_cast<int>(rng.uniform(60, 180)));
  // Shims out to the startup position, one at a time.
  const double shim_target = rng.uniform(60.0, 68.0);
  for (int rod = 0; rod < 2; ++rod) {
    op.tick(ScriptAction{0, ActionType::kWithdraw, rod});
    while (op.simulator().positions()[static_cast<std::size_t>(rod)] < shim_target) {
      op.tick();
    }
    op.tick(ScriptAction{0, ActionType::kStop, rod});
    op.hold(static_cast<int>(rng.uniform(10, 40)));
  }
  double level = fs * rng.uniform(0.2, 1.0);
  op.approach(level, rng.uniform(0.5, 3.5), 2400);
  op.regulate(level, static_cast<int>(rng.uniform(600, 1500)));
  const int changes = 1 + static_cast<int>(rng.below(3));
  for (int c = 0; c < changes; ++c) {
    double next = level * std::exp(rng.uniform(-1.4, 1.4));
    next = std::clamp(next, 0.05 * fs, fs);
    op.approach(next, rng.uniform(0.5, 4.5), 1500);
    op.regulate(next, static_cast<int>(rng.uniform(300, 1200)));
    level = next;
  }
  op.shutdown_gradual(static_cast<int>(rng.uniform(200, 400)));
  return op.take_frame();
}

// Startup or power increase from a steady level at a fast rate.
inline SignalFrame transient_event(const SuiteConfig& cfg, std::int64_t start,
                                   std::uint64_t seed) {
  Rng rng(seed);
  const double fs = cfg.full_scale_counts;
  const double l0 = fs * rng.uniform(0.01, 0.08);
  const auto pos = critical_positions(cfg.reactor, l0);
  Operator op(cfg.reactor, cfg.noise, l0, pos, start, derive_seed(seed, "noise"));
  op.hold(static_cast<int>(rng.uniform(60, 120)));
  const double l1 = std::min(fs, l0 * rng.uniform(4.0, 12.0));
  op.approach(l1, rng.uniform(3.0, 5.0), 1500);
  op.regulate(l1, static_cast<int>(rng.uniform(200, 500)));
  const double l2 = std::clamp(l1 * rng.uniform(0.4, 1.8), 0.05 * fs, fs);
  op.approach(l2, rng.uniform(2.0, 5.0), 1200);
  op.regulate(l2, static_cast<int>(rng.uniform(200, 500)));
  return op.take_frame();
}

inline SignalFrame scram_event(const SuiteConfig& cfg, std::int64_t start,
                               std::uint64_t seed) {
  Rng rng(seed);
  const double level =
      cfg.full_scale_counts * rng.uniform(cfg.scram_power_lo, cfg.scram_power_hi);
  const auto pos = critical_positions(cfg.reactor, level);
  Operator op(cfg.reactor, cfg.noise, level, pos, start, derive_seed(seed, "noise"));
  op.hold(cfg.scram_margin);
  // Scram second plus the margin after it; the rods are fully in well
  // within the first second.
  op.scram(1 + cfg.scram_margin);
  return op.take_frame();
}

}  // namespace detail

// Normal operations, fast transients, and scram events. Every row is labeled
// normal. Events are separated by index gaps so no window spans two events.
inline DatasetSuite generate_suite(const SuiteConfig& cfg, std::uint64_t seed) {
  cfg.reactor.validate();
  DatasetSuite out;
  for (int i = 0; i < cfg.normal_operations; ++i) {
    out.normal.append(detail::normal_operation(
        cfg, detail::next_start(out.normal, cfg.event_gap * 4),
        derive_seed(derive_seed(seed, "normal"), static_cast<std::uint64_t>(i))));
  }
  for (int i = 0; i < cfg.transient_events; ++i) {
    out.transient.append(detail::transient_event(
        cfg, detail::next_start(out.transient, cfg.event_gap),
        derive_seed(derive_seed(seed, "transient"), static_cast<std::uint64_t>(i))));
  }
  for (int i = 0; i < cfg.scram_events; ++i) {
    out.scram.append(detail::scram_event(
        cfg, detail::next_start(out.scram, cfg.event_gap),
        derive_seed(derive_seed(seed, "scram"), static_cast<std::uint64_t>(i))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replay injection

enum class FdiVariant { kA, kB, kC };

inline std::string_view variant_name(FdiVariant v) {
  switch (v) {
    case FdiVariant::kA:
      return "A";
    case FdiVariant::kB:
      return "B";
    case FdiVariant::kC:
      return "C";
  }
  return "A";
}

inline std::optional<FdiVariant> variant_from_name(std::string_view s) {
  if (s == "A" || s == "a") return FdiVariant::kA;
  if (s == "B" || s == "b") return FdiVariant::kB;
  if (s == "C" || s == "c") return FdiVariant::kC;
  return std::nullopt;
}

// Columns replaced by each variant. Active states are never falsified.
inline std::vector<Signal> falsified_signals(FdiVariant v) {
  switch (v) {
    case FdiVariant::kA:
      return {Signal::kNCounts};
    case FdiVariant::kB:
      return {Signal::kNCounts, Signal::kNRate};
    case FdiVariant::kC:
      return {Signal::kNCounts, Signal::kNRate, Signal::kSs1Pos,
              Signal::kSs2Pos, Signal::kRrPos};
  }
  return {};
}

struct InjectOptions {
  int ramp_seconds = 10;
  int replay_seconds = 70;
  // Normalized deviation at or below which an injected row is undetectable.
  double epsilon = 0.07;
  // Normalization span (max - min) per signal used for labeling.
  std::array<double, kSignalCount> span{1.0e6, 6.0, 100.0, 100.0, 100.0,
                                        1.0,   1.0, 1.0};
};

// Replaces the variant's columns from index t0 on with the template, blending
// linearly over the ramp. Rows from t0 are labeled anomalous unless the
// max-norm normalized deviation from the true data is <= epsilon.
inline SignalFrame inject_replay(const SignalFrame& frame, FdiVariant variant,
                                 const SignalFrame& templ, std::int64_t t0,
                                 const InjectOptions& opt = {}) {
  require(opt.replay_seconds > 0 && opt.ramp_seconds >= 0 &&
              opt.ramp_seconds <= opt.replay_seconds,
          ErrorKind::kConfig, "inject_replay: bad ramp/replay lengths");
  require(templ.size() >= static_cast<std::size_t>(opt.replay_seconds),
          ErrorKind::kConfig,
          "inject_replay: template has " + std::to_string(templ.size()) +
              " rows, recipe needs " + std::to_string(opt.replay_seconds));
  auto it = std::find(frame.index.begin(), frame.index.end(), t0);
  require(it != frame.index.end(), ErrorKind::kDomain,
          "inject_replay: t0 not present in frame");
  const auto r0 = static_cast<std::size_t>(it - frame.index.begin());
  SignalFrame out = frame;
  const auto cols = falsified_signals(variant);
  const std::size_t end =
      std::min(frame.size(), r0 + static_cast<std::size_t>(opt.replay_seconds));
  for (std::size_t r = r0; r < end; ++r) {
    const std::size_t j = r - r0;
    const double alpha =
        j < static_cast<std::size_t>(opt.ramp_seconds)
            ? static_cast<double>(j + 1) / (opt.ramp_seconds + 1)
            : 1.0;
    double dev = 0.0;
    for (Signal s : cols) {
      const double truth = frame.at(r, s);
      const double fake = (1.0 - alpha) * truth + alpha * templ.at(j, s);
      out.column(s)[r] = fake;
      dev = std::max(dev, std::abs(fake - truth) / opt.span[to_index(s)]);
    }
    out.label[r] = dev <= opt.epsilon ? Label::kUndetectable : Label::kAnomalous;
  }
  return out;
}

// One replay event: steady high-power base and a recorded gradual shutdown.
struct FdiEvent {
  SignalFrame base;      // true data, fdi_lead + fdi_replay rows
  SignalFrame templ;     // recorded shutdown, >= fdi_replay rows
  std::int64_t t0 = 0;   // injection start index
};

inline std::vector<FdiEvent> generate_fdi_events(const SuiteConfig& cfg,
                                                 std::uint64_t seed) {
  std::vector<FdiEvent> events;
  std::int64_t start = 0;
  const int len = cfg.fdi_lead + cfg.fdi_replay;
  for (int i = 0; i < cfg.fdi_events; ++i) {
    const std::uint64_t es = derive_seed(derive_seed(seed, "fdi"),
                                         static_cast<std::uint64_t>(i));
    Rng rng(es);
    const double level = cfg.full_scale_counts *
                         rng.uniform(cfg.fdi_power_lo, cfg.fdi_power_hi);
    FdiEvent ev;
    {
      const auto pos = critical_positions(cfg.reactor, level);
      Operator op(cfg.reactor, cfg.noise, level, pos, start,
                  derive_seed(es, "base"));
      op.hold(len);
      ev.base = op.take_frame();
    }
    {
      const double tl = level * rng.uniform(0.9, 1.1);
      const auto pos = critical_positions(cfg.reactor, tl);
      Operator op(cfg.reactor, cfg.noise, tl, pos, 0, derive_seed(es, "template"));
      op.shutdown_gradual(cfg.template_offset + cfg.fdi_replay);
      ev.templ = op.take_frame().slice(
          static_cast<std::size_t>(cfg.template_offset),
          static_cast<std::size_t>(cfg.template_offset + cfg.fdi_replay));
    }
    ev.t0 = start + cfg.fdi_lead;
    events.push_back(std::move(ev));
    start += len + cfg.event_gap;
  }
  return events;
}

struct FdiDataset {
  SignalFrame injected;  // falsified frame with ground-truth labels
  SignalFrame truth;     // same rows without falsification
};

inline FdiDataset build_fdi_dataset(const std::vector<FdiEvent>& events,
                                    FdiVariant variant, const SuiteConfig& cfg,
                                    InjectOptions opt = {}) {
  opt.ramp_seconds = cfg.fdi_ramp;
  opt.replay_seconds = cfg.fdi_replay;
  opt.epsilon = cfg.fdi_epsilon;
  opt.span[to_index(Signal::kNCounts)] = cfg.full_scale_counts;
  FdiDataset out;
  for (const auto& ev : events) {
    out.truth.append(ev.base);
    out.injected.append(inject_replay(ev.base, variant, ev.templ, ev.t0, opt));
  }
  return out;
}

}  // namespace replayguard
