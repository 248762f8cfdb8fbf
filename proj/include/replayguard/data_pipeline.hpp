#pragma once

// Scaling, cleaning, windowing and splitting of signal frames.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "replayguard/error.hpp"
#include "replayguard/signal_frame.hpp"

namespace replayguard {

// Columns that go through min-max scaling. Active states are already in
// {-1, 0, 1} and pass through.
inline constexpr std::size_t kScaledCount = 5;

inline constexpr int kScalerVersion = 1;

struct ScalerParams {
  std::array<double, kScaledCount> min{};
  std::array<double, kScaledCount> max{};
  bool fitted = false;

  double forward(std::size_t col, double x) const {
    if (col >= kScaledCount || is_missing(x)) return x;
    return (x - min[col]) / (max[col] - min[col]);
  }
  double inverse(std::size_t col, double y) const {
    if (col >= kScaledCount || is_missing(y)) return y;
    return min[col] + y * (max[col] - min[col]);
  }
  double span(std::size_t col) const {
    return col < kScaledCount ? max[col] - min[col] : 1.0;
  }
};

inline ScalerParams fit_scaler(const SignalFrame& train) {
  require(!train.empty(), ErrorKind::kDomain, "fit_scaler: empty training frame");
  ScalerParams p;
  for (std::size_t c = 0; c < kScaledCount; ++c) {
    double lo = INFINITY, hi = -INFINITY;
    for (double v : train.columns[c]) {
      require(!is_missing(v), ErrorKind::kDomain,
              "fit_scaler: missing value in column " + std::string(kSignalNames[c]));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    require(hi > lo, ErrorKind::kDomain,
            "fit_scaler: column " + std::string(kSignalNames[c]) + " is constant");
    p.min[c] = lo;
    p.max[c] = hi;
  }
  p.fitted = true;
  return p;
}

enum class ScaleDirection { kForward, kInverse };

inline SignalFrame scale(const SignalFrame& frame, const ScalerParams& p,
                         ScaleDirection dir = ScaleDirection::kForward) {
  require(p.fitted, ErrorKind::kConfig, "scale: scaler parameters not fitted");
  SignalFrame out = frame;
  for (std::size_t c = 0; c < kScaledCount; ++c) {
    for (double& v : out.columns[c]) {
      v = dir == ScaleDirection::kForward ? p.forward(c, v) : p.inverse(c, v);
    }
  }
  return out;
}

inline void write_scaler(std::ostream& os, const ScalerParams& p) {
  os << "version=" << kScalerVersion << '\n';
  std::string line;
  for (std::size_t c = 0; c < kScaledCount; ++c) {
    line.clear();
    line.append(kSignalNames[c]).append(".min=");
    append_number(line, p.min[c]);
    os << line << '\n';
    line.clear();
    line.append(kSignalNames[c]).append(".max=");
    append_number(line, p.max[c]);
    os << line << '\n';
  }
}

inline void save_scaler(const std::string& path, const ScalerParams& p) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::kConfig,
          "cannot open '" + path + "' for writing");
  write_scaler(os, p);
}

inline ScalerParams read_scaler(std::istream& is) {
  ScalerParams p;
  std::array<bool, 2 * kScaledCount> seen{};
  bool version_seen = false;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::kFormat,
            "scaler: expected key=value, got '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "version") {
      require(val == std::to_string(kScalerVersion), ErrorKind::kVersion,
              "scaler: unsupported version " + val);
      version_seen = true;
      continue;
    }
    const auto dot = key.rfind('.');
    require(dot != std::string::npos, ErrorKind::kFormat, "scaler: bad key " + key);
    auto sig = signal_from_name(key.substr(0, dot));
    const std::string bound = key.substr(dot + 1);
    require(sig && to_index(*sig) < kScaledCount && (bound == "min" || bound == "max"),
            ErrorKind::kFormat, "scaler: bad key " + key);
    auto v = parse_double(val);
    require(v.has_value(), ErrorKind::kFormat, "scaler: bad value for " + key);
    const std::size_t c = to_index(*sig);
    (bound == "min" ? p.min : p.max)[c] = *v;
    seen[2 * c + (bound == "max")] = true;
  }
  require(version_seen, ErrorKind::kFormat, "scaler: missing version");
  for (std::size_t c = 0; c < kScaledCount; ++c) {
    require(seen[2 * c] && seen[2 * c + 1], ErrorKind::kFormat,
            "scaler: missing bounds for " + std::string(kSignalNames[c]));
    require(p.max[c] > p.min[c], ErrorKind::kFormat,
            "scaler: empty range for " + std::string(kSignalNames[c]));
  }
  p.fitted = true;
  return p;
}

inline ScalerParams load_scaler(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kDependency,
          "cannot open scaler '" + path + "'");
  return read_scaler(is);
}

// Removes every row with a missing cell. Index gaps are left in place.
inline SignalFrame drop_missing(const SignalFrame& frame) {
  SignalFrame out;
  out.reserve(frame.size());
  for (std::size_t r = 0; r < frame.size(); ++r) {
    if (!frame.row_has_missing(r)) out.push_row(frame.index[r], frame.row(r), frame.label[r]);
  }
  return out;
}

struct WindowingConfig {
  int k = 30;    // input steps
  int tau = 5;   // horizon, s
  Signal target = Signal::kNCounts;

  void validate() const {
    require(k >= 1, ErrorKind::kConfig, "window k must be >= 1");
    require(tau >= 1, ErrorKind::kConfig, "window tau must be >= 1");
  }
};

struct WindowedSample {
  std::vector<double> inputs;         // k x 8, row-major by time step
  double target = 0.0;
  std::vector<std::int64_t> indices;  // k input indices then the target index
  std::size_t start_row = 0;          // first input row in the source frame

  int steps() const { return static_cast<int>(inputs.size() / kSignalCount); }
  double at(int step, std::size_t col) const {
    return inputs[static_cast<std::size_t>(step) * kSignalCount + col];
  }
  std::int64_t target_index() const { return indices.back(); }
  // Index of the last input step.
  std::int64_t last_input_index() const { return indices[indices.size() - 2]; }
};

// Rows r such that rows r .. r+k-1+tau carry consecutive indices.
inline std::vector<std::size_t> window_starts(const SignalFrame& frame,
                                              const WindowingConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> out;
  const auto span = static_cast<std::size_t>(cfg.k - 1 + cfg.tau);
  if (frame.size() <= span) return out;
  // run[r]: length of the contiguous run ending at r.
  std::size_t run = 0;
  for (std::size_t r = 0; r < frame.size(); ++r) {
    run = continues_run(frame.index, r) ? run + 1 : 1;
    if (run > span) out.push_back(r - span);
  }
  return out;
}

inline WindowedSample make_sample(const SignalFrame& frame, std::size_t start,
                                  const WindowingConfig& cfg) {
  WindowedSample s;
  const auto k = static_cast<std::size_t>(cfg.k);
  s.start_row = start;
  s.inputs.resize(k * kSignalCount);
  s.indices.reserve(k + 1);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t c = 0; c < kSignalCount; ++c) {
      s.inputs[t * kSignalCount + c] = frame.columns[c][start + t];
    }
    s.indices.push_back(frame.index[start + t]);
  }
  const std::size_t target_row = start + k - 1 + static_cast<std::size_t>(cfg.tau);
  s.target = frame.column(cfg.target)[target_row];
  s.indices.push_back(frame.index[target_row]);
  return s;
}

inline std::vector<WindowedSample> window_samples(const SignalFrame& frame,
                                                  const WindowingConfig& cfg) {
  std::vector<WindowedSample> out;
  const auto starts = window_starts(frame, cfg);
  out.reserve(starts.size());
  for (std::size_t s : starts) out.push_back(make_sample(frame, s, cfg));
  return out;
}

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct SplitFrames {
  SignalFrame train;
  SignalFrame val;
  SignalFrame test;
};

// Chronological split by row count. Validation and test sizes are floored,
// the remainder goes to training.
inline SplitFrames split_dataset(const SignalFrame& frame, const SplitRatios& r = {}) {
  require(r.train >= 0 && r.val >= 0 && r.test >= 0, ErrorKind::kConfig,
          "split ratios must be non-negative");
  require(std::abs(r.train + r.val + r.test - 1.0) < 1e-9, ErrorKind::kConfig,
          "split ratios must sum to 1");
  const std::size_t n = frame.size();
  // A small tolerance keeps 0.2 * 10 from flooring to 1.
  auto part = [&](double ratio) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_val = part(r.val);
  const std::size_t n_test = part(r.test);
  const std::size_t n_train = n - n_val - n_test;
  SplitFrames out;
  out.train = frame.slice(0, n_train);
  out.val = frame.slice(n_train, n_train + n_val);
  out.test = frame.slice(n_train + n_val, n);
  return out;
}

}  // namespace replayguard
