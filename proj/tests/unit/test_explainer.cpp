#include <gtest/gtest.h>

#include "oracles.hpp"
#include "replayguard/explainer.hpp"

using namespace replayguard;

namespace {

// f = sum_i a_i * x_i over a k x 8 window, evaluated on a batch.
BatchModel linear_model(std::vector<double> a) {
  return [a = std::move(a)](const std::vector<const double*>& in, std::vector<double>& out) {
    out.resize(in.size());
    for (std::size_t b = 0; b < in.size(); ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * in[b][i];
      out[b] = s;
    }
  };
}

// Smooth nonlinear model with interactions across steps and signals.
BatchModel nonlinear_model(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> a(n), c(n);
  for (auto& v : a) v = rng.uniform(-1, 1);
  for (auto& v : c) v = rng.uniform(-1, 1);
  return [a, c](const std::vector<const double*>& in, std::vector<double>& out) {
    out.resize(in.size());
    for (std::size_t b = 0; b < in.size(); ++b) {
      double s = 0.0, t = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * in[b][i];
        t += c[i] * in[b][i];
      }
      out[b] = std::tanh(s) * t + 0.3 * s * s;
    }
  };
}

std::vector<double> random_window(int k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(static_cast<std::size_t>(k) * kSignalCount);
  for (auto& v : x) v = rng.uniform(-1, 1);
  return x;
}

FeatureSpace space(int k, int w, std::vector<std::size_t> signals) {
  return {partition_windows(k, w), std::move(signals)};
}

}  // namespace

TEST(Partition, Tiling) {
  EXPECT_EQ(partition_windows(30, 5).size(), 6u);
  EXPECT_EQ(partition_windows(30, 30).size(), 1u);
  const auto p = partition_windows(10, 4);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p.spans[0].length, 4);
  EXPECT_EQ(p.spans[1].length, 4);
  EXPECT_EQ(p.spans[2].length, 2);
  EXPECT_EQ(p.spans[2].start, 8);
  EXPECT_THROW(partition_windows(10, 11), Error);
  EXPECT_THROW(partition_windows(10, 0), Error);
}

TEST(Occlude, FullAndEmptyMasks) {
  const int k = 6;
  const auto fs = FeatureSpace::all_signals(partition_windows(k, 3));
  const auto x = random_window(k, 1);
  const auto policy = BaselinePolicy::moving();
  EXPECT_EQ(occlude(x, CoalitionMask(fs.size(), 1), fs, policy), x);
  const auto o = occlude(x, CoalitionMask(fs.size(), 0), fs, policy);
  for (int t = 0; t < k; ++t) {
    for (std::size_t c = 0; c < kSignalCount; ++c) {
      const double v = o[static_cast<std::size_t>(t) * kSignalCount + c];
      if (c == to_index(Signal::kNRate) || is_active_signal(c)) {
        EXPECT_EQ(v, 0.0);
      } else {
        EXPECT_EQ(v, x[c]);
      }
    }
  }
  EXPECT_THROW(occlude(x, CoalitionMask(3, 0), fs, policy), Error);
}

TEST(Occlude, BaselineSampleIsFixedPoint) {
  const int k = 10;
  std::vector<double> x(static_cast<std::size_t>(k) * kSignalCount, 0.0);
  for (int t = 0; t < k; ++t) {
    x[static_cast<std::size_t>(t) * kSignalCount + 0] = 0.6;
    x[static_cast<std::size_t>(t) * kSignalCount + 2] = 0.7;
  }
  const auto fs = FeatureSpace::all_signals(partition_windows(k, 5));
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    CoalitionMask m(fs.size());
    for (auto& b : m) b = static_cast<std::uint8_t>(rng.below(2));
    EXPECT_EQ(occlude(x, m, fs, BaselinePolicy::moving()), x);
  }
}

TEST(KernelWeight, Values) {
  EXPECT_DOUBLE_EQ(kernel_weight(4, 1), 0.25);
  EXPECT_DOUBLE_EQ(kernel_weight(4, 2), 0.125);
  for (int p = 2; p < 12; ++p) {
    for (int s = 1; s < p; ++s) EXPECT_DOUBLE_EQ(kernel_weight(p, s), kernel_weight(p, p - s));
  }
  EXPECT_THROW(kernel_weight(4, 0), Error);
  EXPECT_THROW(kernel_weight(4, 4), Error);
}

TEST(ExactShap, MatchesPermutationDefinition) {
  const int k = 4;
  const auto fs = space(k, 2, {0, 1, 4});  // p = 6
  const auto x = random_window(k, 5);
  const auto model = nonlinear_model(static_cast<std::size_t>(k) * kSignalCount, 6);
  const auto policy = BaselinePolicy::moving();
  const auto a = exact_shap(model, x, fs, policy);
  const auto v = [&](const std::vector<bool>& present) {
    CoalitionMask m(present.begin(), present.end());
    const auto o = occlude(x, m, fs, policy);
    std::vector<double> out;
    model({o.data()}, out);
    return out[0];
  };
  const auto ref = oracle::permutation_shapley(v, fs.size());
  for (std::size_t j = 0; j < fs.size(); ++j) EXPECT_NEAR(a.phi[j], ref[j], 1e-12);
  EXPECT_LT(std::abs(a.efficiency_residual()), 1e-12);
}

TEST(KernelShap, EnumeratedMatchesExact) {
  const int k = 4;
  const auto fs = space(k, 1, {0, 1});  // p = 8
  const auto policy = BaselinePolicy::moving();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = random_window(k, 10 + seed);
    const auto model = nonlinear_model(static_cast<std::size_t>(k) * kSignalCount, 20 + seed);
    const auto e = exact_shap(model, x, fs, policy);
    const auto s = kernel_shap(model, x, fs, policy, 1u << fs.size(), seed);
    EXPECT_TRUE(s.enumerated);
    for (std::size_t j = 0; j < fs.size(); ++j) EXPECT_NEAR(s.phi[j], e.phi[j], 1e-6);
    EXPECT_LT(std::abs(s.efficiency_residual()), 1e-6);
  }
}

TEST(KernelShap, AdditiveModelClosedForm) {
  const int k = 10;
  const auto fs = FeatureSpace::all_signals(partition_windows(k, 5));  // p = 16
  const auto x = random_window(k, 2);
  Rng rng(4);
  std::vector<double> a(x.size());
  for (auto& v : a) v = rng.uniform(-1, 1);
  const auto policy = BaselinePolicy::moving();
  const auto base = occlude(x, CoalitionMask(fs.size(), 0), fs, policy);
  // Sampled, not enumerated: 2^16 > 2000.
  const auto att = kernel_shap(linear_model(a), x, fs, policy, 2000, 9);
  EXPECT_FALSE(att.enumerated);
  for (std::size_t j = 0; j < fs.size(); ++j) {
    const std::size_t c = fs.signal_of(j);
    const auto& sp = fs.span_of(j);
    double expect = 0.0;
    for (int t = sp.start; t < sp.start + sp.length; ++t) {
      const std::size_t i = static_cast<std::size_t>(t) * kSignalCount + c;
      expect += a[i] * (x[i] - base[i]);
    }
    EXPECT_NEAR(att.phi[j], expect, 1e-8) << j;
  }
  EXPECT_LT(std::abs(att.efficiency_residual()), 1e-9);
}

TEST(KernelShap, DummyAndSymmetry) {
  const int k = 2;
  const auto fs = space(k, 2, {0, 1, 2, 3});
  std::vector<double> x(static_cast<std::size_t>(k) * kSignalCount, 0.0);
  for (int t = 0; t < k; ++t) {
    x[static_cast<std::size_t>(t) * kSignalCount + 0] = t == 0 ? 0.1 : 0.9;
    x[static_cast<std::size_t>(t) * kSignalCount + 1] = 0.5;
    x[static_cast<std::size_t>(t) * kSignalCount + 2] = t == 0 ? 0.2 : 0.8;
    x[static_cast<std::size_t>(t) * kSignalCount + 3] = t == 0 ? 0.2 : 0.8;
  }
  // Ignores signal 0; signals 2 and 3 enter symmetrically.
  BatchModel model = [](const std::vector<const double*>& in, std::vector<double>& out) {
    out.resize(in.size());
    for (std::size_t b = 0; b < in.size(); ++b) {
      const double* w = in[b] + kSignalCount;
      out[b] = w[1] * w[1] + std::sin(w[2] * w[3]) + w[2] + w[3];
    }
  };
  const auto a = kernel_shap(model, x, fs, BaselinePolicy::moving(), 64, 1);
  EXPECT_NEAR(a.phi[0], 0.0, 1e-12);
  EXPECT_NEAR(a.phi[2], a.phi[3], 1e-12);
  EXPECT_NEAR(a.phi[1], 0.25, 1e-12);
}

TEST(KernelShap, SingleFeature) {
  const int k = 3;
  const auto fs = space(k, 3, {0});
  const auto x = random_window(k, 8);
  const auto model = nonlinear_model(static_cast<std::size_t>(k) * kSignalCount, 3);
  const auto a = kernel_shap(model, x, fs, BaselinePolicy::moving(), 16, 0);
  std::vector<double> fx, fb;
  const auto b = occlude(x, CoalitionMask(1, 0), fs, BaselinePolicy::moving());
  model({x.data()}, fx);
  model({b.data()}, fb);
  EXPECT_NEAR(a.phi[0], fx[0] - fb[0], 1e-15);
}

TEST(KernelShap, SampledIsSeededAndNearExact) {
  const int k = 6;
  const auto fs = space(k, 1, {0, 1});  // p = 12
  const auto x = random_window(k, 3);
  const auto model = nonlinear_model(static_cast<std::size_t>(k) * kSignalCount, 4);
  const auto policy = BaselinePolicy::moving();
  const auto a = kernel_shap(model, x, fs, policy, 3000, 42);
  const auto b = kernel_shap(model, x, fs, policy, 3000, 42);
  EXPECT_EQ(a.phi, b.phi);
  EXPECT_FALSE(a.enumerated);
  EXPECT_LT(std::abs(a.efficiency_residual()), 1e-3);
  const auto e = exact_shap(model, x, fs, policy);
  double worst = 0.0, scale = 0.0;
  for (std::size_t j = 0; j < fs.size(); ++j) {
    worst = std::max(worst, std::abs(a.phi[j] - e.phi[j]));
    scale = std::max(scale, std::abs(e.phi[j]));
  }
  EXPECT_LT(worst, 0.1 * scale);
  EXPECT_THROW(kernel_shap(model, x, fs, policy, 5, 0), Error);
}

TEST(ExplainTarget, AbsoluteError) {
  const auto m = explain_target(linear_model({1.0}), ExplainTarget::kAbsoluteError, 0.5);
  std::vector<double> x(kSignalCount, 0.2), out;
  m({x.data()}, out);
  EXPECT_DOUBLE_EQ(out[0], 0.3);
}

TEST(Aggregate, FinalSpanMean) {
  const auto fs = space(10, 5, {0, 1});
  Attribution a, b;
  a.features = b.features = fs;
  a.phi = {1.0, 0.2, 5.0, -0.1};
  b.phi = {1.0, 0.4, 5.0, -0.3};
  const auto one = aggregate_attributions({a}, 5);
  EXPECT_DOUBLE_EQ(one.mean_phi[0], 0.2);
  EXPECT_DOUBLE_EQ(one.mean_phi[1], -0.1);
  const auto two = aggregate_attributions({a, b}, 5);
  EXPECT_DOUBLE_EQ(two.mean_phi[0], 0.3);
  EXPECT_DOUBLE_EQ(two.mean_phi[1], -0.2);
  EXPECT_DOUBLE_EQ(aggregate_attributions({a}, 10).mean_phi[0], 1.2);
  EXPECT_THROW(aggregate_attributions({}, 5), Error);
}
