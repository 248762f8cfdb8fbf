#pragma once

// Signal-correlation rules separating replayed data from genuine plant
// behavior. Each rule yields validity V(t), anomaly A(t) and FDI flags
// F(t) = V(t) & A(t) & V(t-1) & A(t-1).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "replayguard/error.hpp"
#include "replayguard/signal_frame.hpp"

namespace replayguard {

enum class Rule : std::size_t { kControlRod = 0, kCountsRate, kRateRod };

inline constexpr std::size_t kRuleCount = 3;

inline constexpr std::array<std::string_view, kRuleCount> kRuleNames = {
    "control_rod", "counts_rate", "rate_rod"};

struct RuleConfig {
  double position_min = 3.0;        // cm
  double movement_threshold = 0.7;  // cm per second
  double counts_min = 1000.0;
  double rate_floor = -3.0;         // %/s
  double rate_tolerance = 2.0;      // %/s
  int sigma_window = 10;            // s
  double sigma_threshold = 0.75;    // %/s
  // Evaluate |e| - CR > tol instead of |e - CR| > tol.
  bool literal_counts_rate = false;

  void validate() const {
    require(sigma_window >= 2, ErrorKind::kConfig, "rule sigma_window must be >= 2");
    require(movement_threshold > 0 && rate_tolerance > 0 && sigma_threshold > 0,
            ErrorKind::kConfig, "rule thresholds must be > 0");
  }
};

struct RuleFlags {
  bool valid = false;
  bool anomaly = false;
  bool fdi = false;
};

struct RuleStep {
  std::int64_t index = 0;
  std::array<RuleFlags, kRuleCount> rule{};
  std::array<RuleFlags, kRodCount> rod{};  // control-rod rule per rod

  const RuleFlags& operator[](Rule r) const { return rule[static_cast<std::size_t>(r)]; }
  bool any_fdi() const {
    return rule[0].fdi || rule[1].fdi || rule[2].fdi;
  }
};

inline double expected_rate(double n_prev, double n, const RuleConfig& cfg) {
  return std::max(100.0 * (n - n_prev) / (1.0 + n_prev), cfg.rate_floor);
}

inline bool counts_rate_mismatch(double e, double cr, const RuleConfig& cfg) {
  return cfg.literal_counts_rate ? std::abs(e) - cr > cfg.rate_tolerance
                                 : std::abs(e - cr) > cfg.rate_tolerance;
}

inline bool rod_motion_mismatch(double dp, double d0, double d1, double d2,
                                const RuleConfig& cfg) {
  auto none = [&](double v) { return d0 != v && d1 != v && d2 != v; };
  if (dp > cfg.movement_threshold) return none(1.0);
  if (dp < -cfg.movement_threshold) return none(-1.0);
  if (std::abs(dp) < cfg.movement_threshold) return none(0.0);
  return false;
}

// Population standard deviation, summed in order.
inline double population_sigma(const double* v, std::size_t n) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += v[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (v[i] - mean) * (v[i] - mean);
  return std::sqrt(ss / static_cast<double>(n));
}

// Incremental evaluation, one row per second. History is cleared at index
// gaps, so every rule needs fresh contiguous history after a gap.
class RuleEngine {
 public:
  explicit RuleEngine(RuleConfig cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    hist_.assign(static_cast<std::size_t>(std::max(3, cfg_.sigma_window)), SignalRow{});
  }

  RuleStep push(std::int64_t index, const SignalRow& row) {
    if (count_ > 0 && index != last_ + 1) {
      count_ = 0;
      prev_ = {};
      prev_rod_ = {};
    }
    last_ = index;
    head_ = (head_ + 1) % hist_.size();
    hist_[head_] = row;
    count_ = std::min(count_ + 1, hist_.size());

    RuleStep out;
    out.index = index;
    // Control rod, per rod.
    for (std::size_t r = 0; r < kRodCount; ++r) {
      const std::size_t pc = to_index(position_signal(r));
      const std::size_t dc = to_index(active_signal(r));
      RuleFlags f;
      if (count_ >= 3 && present(pc, 3) && present(dc, 3) && at(0)[pc] > cfg_.position_min) {
        f.valid = true;
        f.anomaly = rod_motion_mismatch(at(0)[pc] - at(1)[pc], at(0)[dc], at(1)[dc],
                                        at(2)[dc], cfg_);
      }
      f.fdi = f.valid && f.anomaly && prev_rod_[r].valid && prev_rod_[r].anomaly;
      out.rod[r] = f;
    }
    RuleFlags& cr = out.rule[static_cast<std::size_t>(Rule::kControlRod)];
    for (const auto& f : out.rod) {
      cr.valid = cr.valid || f.valid;
      cr.anomaly = cr.anomaly || (f.valid && f.anomaly);
      cr.fdi = cr.fdi || f.fdi;
    }
    // Counts and rate.
    const std::size_t nc = to_index(Signal::kNCounts);
    const std::size_t rc = to_index(Signal::kNRate);
    RuleFlags& cnt = out.rule[static_cast<std::size_t>(Rule::kCountsRate)];
    if (count_ >= 3 && present(nc, 3) && present(rc, 3) && at(0)[nc] > cfg_.counts_min) {
      cnt.valid = true;
      cnt.anomaly = counts_rate_mismatch(expected_rate(at(1)[nc], at(0)[nc], cfg_),
                                         at(0)[rc], cfg_);
    }
    cnt.fdi = both(cnt, prev_[1]);
    // Rate variance without rod motion.
    RuleFlags& rr = out.rule[static_cast<std::size_t>(Rule::kRateRod)];
    rr.valid = cnt.valid && out.rod[0].valid && out.rod[1].valid && out.rod[2].valid;
    const auto w = static_cast<std::size_t>(cfg_.sigma_window);
    if (rr.valid && count_ >= w && present(rc, w)) {
      bool still = true;
      rates_.resize(w);
      for (std::size_t i = 0; i < w; ++i) {
        const SignalRow& h = at(w - 1 - i);
        rates_[i] = h[rc];
        for (std::size_t r = 0; r < kRodCount; ++r) {
          if (h[to_index(active_signal(r))] != 0.0) still = false;
        }
      }
      rr.anomaly = still && population_sigma(rates_.data(), w) > cfg_.sigma_threshold;
    }
    rr.fdi = both(rr, prev_[2]);

    for (std::size_t i = 0; i < kRuleCount; ++i) prev_[i] = out.rule[i];
    prev_rod_ = out.rod;
    return out;
  }

  void reset() {
    count_ = 0;
    prev_ = {};
    prev_rod_ = {};
  }

 private:
  // Row `back` seconds ago.
  const SignalRow& at(std::size_t back) const {
    return hist_[(head_ + hist_.size() - back) % hist_.size()];
  }
  bool present(std::size_t col, std::size_t rows) const {
    for (std::size_t b = 0; b < rows; ++b) {
      if (is_missing(at(b)[col])) return false;
    }
    return true;
  }
  static bool both(const RuleFlags& now, const RuleFlags& before) {
    return now.valid && now.anomaly && before.valid && before.anomaly;
  }

  RuleConfig cfg_;
  std::vector<SignalRow> hist_;
  std::vector<double> rates_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  std::int64_t last_ = 0;
  std::array<RuleFlags, kRuleCount> prev_{};
  std::array<RuleFlags, kRodCount> prev_rod_{};
};

// Whole-frame evaluation written column by column. Produces the same
// verdicts as feeding the rows to a RuleEngine.
inline std::vector<RuleStep> evaluate_rules(const SignalFrame& frame,
                                            const RuleConfig& cfg = {}) {
  cfg.validate();
  const std::size_t n = frame.size();
  std::vector<RuleStep> out(n);
  // run[t]: contiguous rows ending at t.
  std::vector<std::size_t> run(n);
  for (std::size_t t = 0; t < n; ++t) {
    run[t] = continues_run(frame.index, t) ? run[t - 1] + 1 : 1;
    out[t].index = frame.index[t];
  }
  auto present = [&](const std::vector<double>& col, std::size_t t, std::size_t rows) {
    for (std::size_t b = 0; b < rows; ++b) {
      if (is_missing(col[t - b])) return false;
    }
    return true;
  };
  auto chain = [&](auto get) {
    for (std::size_t t = 0; t < n; ++t) {
      RuleFlags& f = get(out[t]);
      f.fdi = f.valid && f.anomaly && run[t] >= 2 && get(out[t - 1]).valid &&
              get(out[t - 1]).anomaly;
    }
  };

  for (std::size_t r = 0; r < kRodCount; ++r) {
    const auto& P = frame.column(position_signal(r));
    const auto& D = frame.column(active_signal(r));
    for (std::size_t t = 0; t < n; ++t) {
      if (run[t] < 3 || !present(P, t, 3) || !present(D, t, 3) ||
          !(P[t] > cfg.position_min)) {
        continue;
      }
      out[t].rod[r].valid = true;
      out[t].rod[r].anomaly =
          rod_motion_mismatch(P[t] - P[t - 1], D[t], D[t - 1], D[t - 2], cfg);
    }
    chain([r](RuleStep& s) -> RuleFlags& { return s.rod[r]; });
  }
  for (auto& s : out) {
    RuleFlags& c = s.rule[static_cast<std::size_t>(Rule::kControlRod)];
    for (const auto& f : s.rod) {
      c.valid = c.valid || f.valid;
      c.anomaly = c.anomaly || (f.valid && f.anomaly);
      c.fdi = c.fdi || f.fdi;
    }
  }

  const auto& N = frame.column(Signal::kNCounts);
  const auto& CR = frame.column(Signal::kNRate);
  for (std::size_t t = 0; t < n; ++t) {
    RuleFlags& f = out[t].rule[static_cast<std::size_t>(Rule::kCountsRate)];
    if (run[t] < 3 || !present(N, t, 3) || !present(CR, t, 3) || !(N[t] > cfg.counts_min)) {
      continue;
    }
    f.valid = true;
    f.anomaly = counts_rate_mismatch(expected_rate(N[t - 1], N[t], cfg), CR[t], cfg);
  }
  chain([](RuleStep& s) -> RuleFlags& {
    return s.rule[static_cast<std::size_t>(Rule::kCountsRate)];
  });

  const auto w = static_cast<std::size_t>(cfg.sigma_window);
  for (std::size_t t = 0; t < n; ++t) {
    RuleFlags& f = out[t].rule[static_cast<std::size_t>(Rule::kRateRod)];
    f.valid = out[t].rule[static_cast<std::size_t>(Rule::kCountsRate)].valid &&
              out[t].rod[0].valid && out[t].rod[1].valid && out[t].rod[2].valid;
    if (!f.valid || run[t] < w || !present(CR, t, w)) continue;
    bool still = true;
    for (std::size_t r = 0; r < kRodCount && still; ++r) {
      const auto& D = frame.column(active_signal(r));
      for (std::size_t b = 0; b < w; ++b) {
        if (D[t - b] != 0.0) {
          still = false;
          break;
        }
      }
    }
    f.anomaly = still && population_sigma(&CR[t + 1 - w], w) > cfg.sigma_threshold;
  }
  chain([](RuleStep& s) -> RuleFlags& {
    return s.rule[static_cast<std::size_t>(Rule::kRateRod)];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Classification of detector-flagged seconds

struct RuleReport {
  std::size_t flagged = 0;
  std::array<std::size_t, kRuleCount> broken{};
  // Fraction of flagged seconds at which each rule reports FDI; absent when
  // the detector flagged nothing.
  std::array<std::optional<double>, kRuleCount> fraction{};
  std::size_t events = 0;          // contiguous runs with at least one flag
  std::size_t events_fdi = 0;      // of those, runs where a rule fired
};

// `flag_index`/`flags` are detector verdicts; verdicts are matched to them
// by index. Seconds without a rule verdict count as not breaking any rule.
inline RuleReport classify(const std::vector<RuleStep>& verdicts,
                           const std::vector<std::int64_t>& flag_index,
                           const std::vector<bool>& flags) {
  require(flag_index.size() == flags.size(), ErrorKind::kDomain,
          "classify: flag index and flags differ in length");
  RuleReport rep;
  std::size_t v = 0;
  bool in_event = false, event_flagged = false, event_fdi = false;
  auto close_event = [&] {
    if (in_event && event_flagged) {
      ++rep.events;
      if (event_fdi) ++rep.events_fdi;
    }
    in_event = event_flagged = event_fdi = false;
  };
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!continues_run(flag_index, i)) close_event();
    in_event = true;
    while (v < verdicts.size() && verdicts[v].index < flag_index[i]) ++v;
    const RuleStep* step =
        v < verdicts.size() && verdicts[v].index == flag_index[i] ? &verdicts[v] : nullptr;
    if (!flags[i]) continue;
    ++rep.flagged;
    event_flagged = true;
    if (!step) continue;
    for (std::size_t r = 0; r < kRuleCount; ++r) {
      if (step->rule[r].fdi) {
        ++rep.broken[r];
        event_fdi = true;
      }
    }
  }
  close_event();
  for (std::size_t r = 0; r < kRuleCount; ++r) {
    if (rep.flagged > 0) {
      rep.fraction[r] =
          static_cast<double>(rep.broken[r]) / static_cast<double>(rep.flagged);
    }
  }
  return rep;
}

// Fraction of all seconds at which each rule reports FDI.
inline std::array<double, kRuleCount> rule_fdi_fraction(const std::vector<RuleStep>& v) {
  std::array<double, kRuleCount> out{};
  if (v.empty()) return out;
  for (const auto& s : v) {
    for (std::size_t r = 0; r < kRuleCount; ++r) out[r] += s.rule[r].fdi ? 1.0 : 0.0;
  }
  for (auto& x : out) x /= static_cast<double>(v.size());
  return out;
}

}  // namespace replayguard
