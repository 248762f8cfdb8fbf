#pragma once

// Residual thresholding: per-second and two-window rolling-mean detectors,
// detectability masks and detection scoring.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "replayguard/error.hpp"
#include "replayguard/signal_frame.hpp"

namespace replayguard {

struct DetectorConfig {
  int short_window = 5;
  double short_threshold = 0.07;
  int medium_window = 60;
  double medium_threshold = 0.04;
  std::optional<double> per_second_threshold;

  void validate() const {
    require(short_window >= 1 && medium_window >= 1, ErrorKind::kConfig,
            "detector windows must be >= 1");
    require(short_threshold > 0 && medium_threshold > 0, ErrorKind::kConfig,
            "detector thresholds must be > 0");
    require(!per_second_threshold || *per_second_threshold > 0, ErrorKind::kConfig,
            "per-second threshold must be > 0");
  }
};

struct ResidualTrace {
  std::vector<std::int64_t> index;
  std::vector<double> residual;

  std::size_t size() const { return residual.size(); }
};

inline ResidualTrace residual_trace(const std::vector<std::int64_t>& index,
                                    const std::vector<double>& predictions,
                                    const std::vector<double>& actuals) {
  require(predictions.size() == actuals.size() && index.size() == actuals.size(),
          ErrorKind::kDomain, "residual_trace: length mismatch");
  ResidualTrace tr;
  tr.index = index;
  tr.residual.reserve(actuals.size());
  for (std::size_t i = 0; i < actuals.size(); ++i) {
    require(i == 0 || index[i] > index[i - 1], ErrorKind::kDomain,
            "residual_trace: index not strictly increasing");
    tr.residual.push_back(std::abs(actuals[i] - predictions[i]));
  }
  return tr;
}

// Predictions and actuals carrying their own indices must line up exactly.
inline ResidualTrace residual_trace(const std::vector<std::int64_t>& pred_index,
                                    const std::vector<double>& predictions,
                                    const std::vector<std::int64_t>& actual_index,
                                    const std::vector<double>& actuals) {
  require(pred_index == actual_index, ErrorKind::kDomain,
          "residual_trace: prediction and actual indices are misaligned");
  return residual_trace(pred_index, predictions, actuals);
}

inline std::vector<bool> threshold_labels(const std::vector<double>& residual,
                                          double epsilon) {
  require(epsilon > 0, ErrorKind::kDomain, "threshold must be > 0");
  std::vector<bool> out(residual.size());
  for (std::size_t i = 0; i < residual.size(); ++i) out[i] = residual[i] > epsilon;
  return out;
}

inline double flagged_fraction(const std::vector<bool>& flags) {
  if (flags.empty()) return 0.0;
  return static_cast<double>(std::count(flags.begin(), flags.end(), true)) /
         static_cast<double>(flags.size());
}

// Fraction of seconds above each threshold.
inline std::vector<double> threshold_sweep(const std::vector<double>& residual,
                                           const std::vector<double>& thresholds) {
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double e : thresholds) out.push_back(flagged_fraction(threshold_labels(residual, e)));
  return out;
}

struct DetectorVerdict {
  std::int64_t index = 0;
  double residual = 0.0;
  double short_mean = 0.0;
  double medium_mean = 0.0;
  bool flag_short = false;
  bool flag_medium = false;
  bool flag = false;
};

// Streaming two-window detector. Windows hold at most their length of the
// most recent contiguous history; an index gap empties them.
class AdaptiveDetector {
 public:
  explicit AdaptiveDetector(DetectorConfig cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    ring_.assign(static_cast<std::size_t>(std::max(cfg_.short_window, cfg_.medium_window)),
                 0.0);
  }

  DetectorVerdict push(std::int64_t index, double residual) {
    if (count_ > 0 && index != last_ + 1) count_ = 0;
    last_ = index;
    ring_[head_] = residual;
    head_ = (head_ + 1) % ring_.size();
    count_ = std::min(count_ + 1, ring_.size());
    DetectorVerdict v;
    v.index = index;
    v.residual = residual;
    v.short_mean = mean_of_last(static_cast<std::size_t>(cfg_.short_window));
    v.medium_mean = mean_of_last(static_cast<std::size_t>(cfg_.medium_window));
    v.flag_short = v.short_mean > cfg_.short_threshold;
    v.flag_medium = v.medium_mean > cfg_.medium_threshold;
    v.flag = v.flag_short || v.flag_medium;
    return v;
  }

  void reset() { count_ = 0; }
  const DetectorConfig& config() const { return cfg_; }

 private:
  // Sums oldest to newest so the batch path can reproduce it bit for bit.
  double mean_of_last(std::size_t w) const {
    const std::size_t n = std::min(w, count_);
    double sum = 0.0;
    for (std::size_t i = n; i > 0; --i) {
      sum += ring_[(head_ + ring_.size() - i) % ring_.size()];
    }
    return sum / static_cast<double>(n);
  }

  DetectorConfig cfg_;
  std::vector<double> ring_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  std::int64_t last_ = 0;
};

struct AdaptiveFlags {
  std::vector<double> short_mean;
  std::vector<double> medium_mean;
  std::vector<bool> flag_short;
  std::vector<bool> flag_medium;
  std::vector<bool> flag;
};

// Whole-trace evaluation of the two-window rule.
inline AdaptiveFlags adaptive_detect(const ResidualTrace& trace,
                                     const DetectorConfig& cfg = {}) {
  cfg.validate();
  require(trace.index.size() == trace.residual.size(), ErrorKind::kDomain,
          "adaptive_detect: trace index and residual lengths differ");
  const std::size_t n = trace.size();
  AdaptiveFlags out;
  out.short_mean.resize(n);
  out.medium_mean.resize(n);
  out.flag_short.resize(n);
  out.flag_medium.resize(n);
  out.flag.resize(n);
  std::size_t run_start = 0;
  auto window_mean = [&](std::size_t t, int w) {
    const std::size_t first =
        std::max(run_start, t + 1 >= static_cast<std::size_t>(w) ? t + 1 - static_cast<std::size_t>(w) : 0);
    double sum = 0.0;
    for (std::size_t i = first; i <= t; ++i) sum += trace.residual[i];
    return sum / static_cast<double>(t + 1 - first);
  };
  for (std::size_t t = 0; t < n; ++t) {
    if (!continues_run(trace.index, t)) run_start = t;
    out.short_mean[t] = window_mean(t, cfg.short_window);
    out.medium_mean[t] = window_mean(t, cfg.medium_window);
    out.flag_short[t] = out.short_mean[t] > cfg.short_threshold;
    out.flag_medium[t] = out.medium_mean[t] > cfg.medium_threshold;
    out.flag[t] = out.flag_short[t] || out.flag_medium[t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detectability

struct HarmBound {
  double epsilon = 0.07;
  double epsilon_h = std::numeric_limits<double>::infinity();

  void validate() const {
    require(epsilon > 0 && epsilon <= epsilon_h, ErrorKind::kConfig,
            "harm bound needs 0 < epsilon <= epsilon_h");
  }
};

enum class Detectability : std::uint8_t { kUndetectable, kDetectable, kHarmful };

inline double max_deviation(const SignalFrame& truth, const SignalFrame& observed,
                            std::size_t r) {
  double dev = 0.0;
  for (std::size_t c = 0; c < kSignalCount; ++c) {
    const double a = truth.columns[c][r];
    const double b = observed.columns[c][r];
    if (is_missing(a) || is_missing(b)) continue;
    dev = std::max(dev, std::abs(a - b));
  }
  return dev;
}

// Frames in normalized units. Unfalsified columns contribute zero deviation,
// so the max over all columns equals the max over the falsified ones.
inline std::vector<Detectability> detectability_mask(const SignalFrame& truth,
                                                     const SignalFrame& observed,
                                                     const HarmBound& bound = {}) {
  bound.validate();
  require(truth.index == observed.index, ErrorKind::kDomain,
          "detectability_mask: frames are misaligned");
  std::vector<Detectability> out(truth.size());
  for (std::size_t r = 0; r < truth.size(); ++r) {
    const double dev = max_deviation(truth, observed, r);
    out[r] = dev <= bound.epsilon     ? Detectability::kUndetectable
             : dev > bound.epsilon_h ? Detectability::kHarmful
                                     : Detectability::kDetectable;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

struct DetectionMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t excluded = 0;  // undetectable rows left out
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  bool undetectable_excluded = true;

  std::size_t total() const { return tp + fp + tn + fn; }
  double flagged_fraction() const {
    return total() == 0 ? 0.0 : static_cast<double>(tp + fp) / static_cast<double>(total());
  }
};

// Rows whose truth label is undetectable, or masked undetectable, are left
// out entirely. Precision, recall and F1 are absent when undefined; on a
// frame with no anomalous rows every flag is a false alarm and only the
// accuracy is reported.
inline DetectionMetrics score(const std::vector<bool>& flags,
                              const std::vector<Label>& truth,
                              const std::vector<Detectability>* mask = nullptr) {
  require(flags.size() == truth.size() && (!mask || mask->size() == truth.size()),
          ErrorKind::kDomain, "score: length mismatch");
  DetectionMetrics m;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (truth[i] == Label::kUndetectable ||
        (mask && (*mask)[i] == Detectability::kUndetectable)) {
      ++m.excluded;
      continue;
    }
    const bool pos = truth[i] == Label::kAnomalous;
    if (flags[i]) {
      ++(pos ? m.tp : m.fp);
    } else {
      ++(pos ? m.fn : m.tn);
    }
  }
  require(m.total() > 0, ErrorKind::kDomain, "score: no rows left after masking");
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
  if (m.tp + m.fp > 0 && m.tp + m.fn > 0) {
    m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  }
  if (m.tp + m.fn > 0) {
    m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  }
  if (m.precision && m.recall && *m.precision + *m.recall > 0) {
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  return m;
}

}  // namespace replayguard
