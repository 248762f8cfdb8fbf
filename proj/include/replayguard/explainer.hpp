#pragma once

// Windowed kernel SHAP over (signal x time window) features with a moving
// occlusion baseline, plus exact Shapley enumeration for small feature sets.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "replayguard/error.hpp"
#include "replayguard/random.hpp"
#include "replayguard/signal_frame.hpp"

namespace replayguard {

struct WindowSpan {
  int start = 0;
  int length = 0;
};

struct WindowPartition {
  int k = 0;
  int w = 0;
  std::vector<WindowSpan> spans;

  std::size_t size() const { return spans.size(); }
  bool operator==(const WindowPartition& o) const { return k == o.k && w == o.w; }
};

inline WindowPartition partition_windows(int k, int w) {
  require(k >= 1, ErrorKind::kDomain, "partition_windows: k must be >= 1");
  require(w >= 1 && w <= k, ErrorKind::kDomain,
          "partition_windows: window length must lie in [1, k]");
  WindowPartition p{k, w, {}};
  for (int s = 0; s < k; s += w) p.spans.push_back({s, std::min(w, k - s)});
  return p;
}

enum class BaselineRule { kHoldFirst, kZero };

struct BaselinePolicy {
  std::array<BaselineRule, kSignalCount> rule{};
  // Value written for kZero signals, in model input units.
  std::array<double, kSignalCount> zero_level{};

  // Constant power with no rod movement: level signals hold their value at
  // the first second, rate and direction signals go to zero.
  static BaselinePolicy moving() {
    BaselinePolicy p;
    for (std::size_t c = 0; c < kSignalCount; ++c) {
      const bool zero = c == to_index(Signal::kNRate) || is_active_signal(c);
      p.rule[c] = zero ? BaselineRule::kZero : BaselineRule::kHoldFirst;
    }
    return p;
  }
};

// Features are (explained signal, window) pairs; feature j covers signal
// signals[j / windows] over span j % windows. Signals not listed are never
// occluded.
struct FeatureSpace {
  WindowPartition partition;
  std::vector<std::size_t> signals;

  std::size_t size() const { return signals.size() * partition.size(); }
  std::size_t signal_of(std::size_t j) const { return signals[j / partition.size()]; }
  const WindowSpan& span_of(std::size_t j) const { return partition.spans[j % partition.size()]; }

  static FeatureSpace all_signals(const WindowPartition& part) {
    FeatureSpace f{part, {}};
    for (std::size_t c = 0; c < kSignalCount; ++c) f.signals.push_back(c);
    return f;
  }
};

using CoalitionMask = std::vector<std::uint8_t>;

// Replaces absent features by the baseline. `inputs` is k x 8 row-major.
inline void occlude_into(const double* inputs, const CoalitionMask& mask,
                         const FeatureSpace& fs, const BaselinePolicy& policy,
                         double* out) {
  const auto k = static_cast<std::size_t>(fs.partition.k);
  std::copy(inputs, inputs + k * kSignalCount, out);
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j]) continue;
    const std::size_t c = fs.signal_of(j);
    const WindowSpan& sp = fs.span_of(j);
    const double v = policy.rule[c] == BaselineRule::kHoldFirst ? inputs[c]
                                                               : policy.zero_level[c];
    for (int t = sp.start; t < sp.start + sp.length; ++t) {
      out[static_cast<std::size_t>(t) * kSignalCount + c] = v;
    }
  }
}

inline std::vector<double> occlude(const std::vector<double>& inputs,
                                   const CoalitionMask& mask, const FeatureSpace& fs,
                                   const BaselinePolicy& policy) {
  require(mask.size() == fs.size(), ErrorKind::kDomain,
          "occlude: mask length does not match feature count");
  require(inputs.size() == static_cast<std::size_t>(fs.partition.k) * kSignalCount,
          ErrorKind::kDomain, "occlude: input shape does not match partition");
  std::vector<double> out(inputs.size());
  occlude_into(inputs.data(), mask, fs, policy, out.data());
  return out;
}

// Shapley kernel weight for a coalition of size s among p features.
inline double kernel_weight(int p, int s) {
  require(p >= 2 && s > 0 && s < p, ErrorKind::kDomain,
          "kernel_weight: empty and full coalitions are constraints, not weighted rows");
  // C(p, s) built from the smaller side so weight(p, s) == weight(p, p - s).
  const int m = std::min(s, p - s);
  double binom = 1.0;
  for (int i = 1; i <= m; ++i) binom = binom * (p - m + i) / i;
  return (p - 1) / (binom * (s * (p - s)));
}

// Batched model: one output per window pointer.
using BatchModel =
    std::function<void(const std::vector<const double*>&, std::vector<double>&)>;

struct Attribution {
  FeatureSpace features;
  std::vector<double> phi;  // one per feature
  double base_value = 0.0;  // f(all occluded)
  double output = 0.0;      // f(x)
  std::size_t n_coalitions = 0;
  std::uint64_t seed = 0;
  bool enumerated = false;
  bool regularized = false;

  double at(std::size_t signal_pos, std::size_t window) const {
    return phi[signal_pos * features.partition.size() + window];
  }
  double efficiency_residual() const {
    double s = 0.0;
    for (double v : phi) s += v;
    return s - (output - base_value);
  }
};

namespace detail {

// Evaluates the model on occluded copies of the sample, in chunks.
class CoalitionEvaluator {
 public:
  CoalitionEvaluator(const BatchModel& model, const std::vector<double>& inputs,
                     const FeatureSpace& fs, const BaselinePolicy& policy)
      : model_(model), inputs_(inputs), fs_(fs), policy_(policy) {}

  std::vector<double> operator()(const std::vector<CoalitionMask>& masks) const {
    constexpr std::size_t kChunk = 1024;
    const std::size_t width = inputs_.size();
    std::vector<double> out;
    out.reserve(masks.size());
    std::vector<double> buf;
    std::vector<const double*> ptrs;
    std::vector<double> y;
    for (std::size_t s = 0; s < masks.size(); s += kChunk) {
      const std::size_t n = std::min(kChunk, masks.size() - s);
      buf.resize(n * width);
      ptrs.clear();
      for (std::size_t i = 0; i < n; ++i) {
        occlude_into(inputs_.data(), masks[s + i], fs_, policy_, buf.data() + i * width);
      }
      for (std::size_t i = 0; i < n; ++i) ptrs.push_back(buf.data() + i * width);
      y.clear();
      model_(ptrs, y);
      require(y.size() == n, ErrorKind::kDomain, "model returned wrong output count");
      out.insert(out.end(), y.begin(), y.end());
    }
    return out;
  }

 private:
  const BatchModel& model_;
  const std::vector<double>& inputs_;
  const FeatureSpace& fs_;
  const BaselinePolicy& policy_;
};

inline void check_inputs(const std::vector<double>& inputs, const FeatureSpace& fs) {
  require(inputs.size() == static_cast<std::size_t>(fs.partition.k) * kSignalCount,
          ErrorKind::kDomain, "explainer: input shape does not match partition");
  require(fs.size() >= 1, ErrorKind::kDomain, "explainer: no features");
  for (std::size_t c : fs.signals) {
    require(c < kSignalCount, ErrorKind::kDomain, "explainer: bad signal");
  }
}

}  // namespace detail

// Exact Shapley values by enumerating all 2^p coalitions.
inline Attribution exact_shap(const BatchModel& model, const std::vector<double>& inputs,
                              const FeatureSpace& fs, const BaselinePolicy& policy) {
  detail::check_inputs(inputs, fs);
  const std::size_t p = fs.size();
  require(p <= 16, ErrorKind::kDomain, "exact_shap: at most 16 features");
  const std::size_t total = std::size_t{1} << p;
  std::vector<CoalitionMask> masks(total, CoalitionMask(p));
  for (std::size_t m = 0; m < total; ++m) {
    for (std::size_t j = 0; j < p; ++j) masks[m][j] = (m >> j) & 1u;
  }
  const auto v = detail::CoalitionEvaluator(model, inputs, fs, policy)(masks);
  // weight[s] = s! (p - s - 1)! / p!
  std::vector<double> weight(p);
  for (std::size_t s = 0; s < p; ++s) {
    weight[s] = std::exp(std::lgamma(s + 1.0) + std::lgamma(static_cast<double>(p - s)) -
                         std::lgamma(p + 1.0));
  }
  Attribution a;
  a.features = fs;
  a.phi.assign(p, 0.0);
  for (std::size_t m = 0; m < total; ++m) {
    const auto s = static_cast<std::size_t>(__builtin_popcountll(m));
    for (std::size_t j = 0; j < p; ++j) {
      if ((m >> j) & 1u) continue;
      a.phi[j] += weight[s] * (v[m | (std::size_t{1} << j)] - v[m]);
    }
  }
  a.base_value = v[0];
  a.output = v[total - 1];
  a.n_coalitions = total;
  a.enumerated = true;
  return a;
}

// Kernel SHAP: weighted least squares over coalitions with the empty and
// full coalitions imposed exactly. Enumerates every coalition when
// 2^p <= n_coalitions, otherwise samples sizes in proportion to their kernel
// mass and pairs each subset with its complement.
inline Attribution kernel_shap(const BatchModel& model, const std::vector<double>& inputs,
                               const FeatureSpace& fs, const BaselinePolicy& policy,
                               std::size_t n_coalitions, std::uint64_t seed) {
  detail::check_inputs(inputs, fs);
  const std::size_t p = fs.size();
  require(n_coalitions >= p + 2, ErrorKind::kDomain,
          "kernel_shap: n_coalitions must be at least p + 2");
  detail::CoalitionEvaluator eval(model, inputs, fs, policy);
  Attribution a;
  a.features = fs;
  a.seed = seed;
  {
    const auto ends = eval({CoalitionMask(p, 0), CoalitionMask(p, 1)});
    a.base_value = ends[0];
    a.output = ends[1];
  }
  const double delta = a.output - a.base_value;
  if (p == 1) {
    a.phi = {delta};
    a.n_coalitions = 2;
    a.enumerated = true;
    return a;
  }

  std::vector<CoalitionMask> masks;
  std::vector<double> weights;
  const bool enumerate = p < 63 && (std::uint64_t{1} << p) <= n_coalitions;
  if (enumerate) {
    const std::uint64_t total = std::uint64_t{1} << p;
    for (std::uint64_t m = 1; m + 1 < total; ++m) {
      CoalitionMask c(p);
      int s = 0;
      for (std::size_t j = 0; j < p; ++j) {
        c[j] = (m >> j) & 1u;
        s += c[j];
      }
      masks.push_back(std::move(c));
      weights.push_back(kernel_weight(static_cast<int>(p), s));
    }
  } else {
    // Size distribution proportional to the kernel mass C(p,s) * pi(p,s).
    std::vector<double> cdf(p);
    double acc = 0.0;
    for (std::size_t s = 1; s < p; ++s) {
      acc += 1.0 / (static_cast<double>(s) * static_cast<double>(p - s));
      cdf[s] = acc;
    }
    Rng rng(seed);
    std::vector<std::size_t> perm(p);
    const std::size_t pairs = (n_coalitions - 2) / 2;
    for (std::size_t i = 0; i < pairs; ++i) {
      const double u = rng.uniform() * acc;
      std::size_t s = 1;
      while (s + 1 < p && cdf[s] <= u) ++s;
      for (std::size_t j = 0; j < p; ++j) perm[j] = j;
      for (std::size_t j = 0; j < s; ++j) {
        const std::size_t r = j + static_cast<std::size_t>(rng.below(p - j));
        std::swap(perm[j], perm[r]);
      }
      CoalitionMask c(p, 0);
      for (std::size_t j = 0; j < s; ++j) c[perm[j]] = 1;
      CoalitionMask comp(p);
      for (std::size_t j = 0; j < p; ++j) comp[j] = 1 - c[j];
      masks.push_back(std::move(c));
      masks.push_back(std::move(comp));
      // Sampling already follows the kernel, so rows carry equal weight.
      weights.push_back(1.0);
      weights.push_back(1.0);
    }
  }
  const auto values = eval(masks);
  a.n_coalitions = masks.size() + 2;
  a.enumerated = enumerate;

  // Substitute phi_p = delta - sum(phi_1..p-1):
  //   y - z_p * delta = sum_j (z_j - z_p) phi_j
  const auto q = static_cast<Eigen::Index>(p - 1);
  Eigen::MatrixXd XtWX = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd XtWy = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd row(q);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const double zp = masks[i][p - 1];
    for (Eigen::Index j = 0; j < q; ++j) row[j] = masks[i][static_cast<std::size_t>(j)] - zp;
    const double y = values[i] - a.base_value - zp * delta;
    XtWX.selfadjointView<Eigen::Lower>().rankUpdate(row, weights[i]);
    XtWy.noalias() += weights[i] * y * row;
  }
  XtWX = XtWX.selfadjointView<Eigen::Lower>();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(XtWX);
  Eigen::VectorXd sol;
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-12)) {
    a.regularized = true;
    XtWX.diagonal().array() += 1e-8;
    sol = XtWX.ldlt().solve(XtWy);
  } else {
    sol = ldlt.solve(XtWy);
  }
  a.phi.assign(p, 0.0);
  double rest = delta;
  for (Eigen::Index j = 0; j < q; ++j) {
    a.phi[static_cast<std::size_t>(j)] = sol[j];
    rest -= sol[j];
  }
  a.phi[p - 1] = rest;
  return a;
}

// Explanation target applied on top of a prediction model.
enum class ExplainTarget { kPrediction, kAbsoluteError };

inline BatchModel explain_target(BatchModel model, ExplainTarget target, double actual) {
  if (target == ExplainTarget::kPrediction) return model;
  return [model = std::move(model), actual](const std::vector<const double*>& in,
                                            std::vector<double>& out) {
    model(in, out);
    for (double& v : out) v = std::abs(v - actual);
  };
}

// ---------------------------------------------------------------------------
// Aggregation over events

struct SignalAttribution {
  std::vector<std::size_t> signals;
  std::vector<double> mean_phi;  // per signal, final-span windows summed
  std::size_t count = 0;
};

// Sum of a signal's phi over windows lying inside the last `span` seconds.
inline double final_span_phi(const Attribution& a, std::size_t signal_pos, int span) {
  const auto& part = a.features.partition;
  double s = 0.0;
  for (std::size_t w = 0; w < part.size(); ++w) {
    if (part.spans[w].start >= part.k - span) s += a.at(signal_pos, w);
  }
  return s;
}

inline SignalAttribution aggregate_attributions(const std::vector<Attribution>& atts,
                                                int span = 5) {
  require(!atts.empty(), ErrorKind::kDomain, "aggregate_attributions: nothing to aggregate");
  const auto& first = atts.front().features;
  SignalAttribution out;
  out.signals = first.signals;
  out.mean_phi.assign(first.signals.size(), 0.0);
  for (const auto& a : atts) {
    require(a.features.partition == first.partition && a.features.signals == first.signals,
            ErrorKind::kDomain, "aggregate_attributions: attributions use different partitions");
    for (std::size_t s = 0; s < out.signals.size(); ++s) {
      out.mean_phi[s] += final_span_phi(a, s, span);
    }
  }
  out.count = atts.size();
  for (double& v : out.mean_phi) v /= static_cast<double>(atts.size());
  return out;
}

}  // namespace replayguard
