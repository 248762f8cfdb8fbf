#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "replayguard/forecaster.hpp"

using namespace replayguard;

namespace {

ModelSpec toy(Arch a, int layers = 1) {
  ModelSpec s = ModelSpec::defaults(a);
  s.neurons = 6;
  s.window = 4;
  s.hidden_layers = layers;
  s.seed = 3;
  return s;
}

std::vector<WindowedSample> constant_series(int n, int k, double value) {
  std::vector<WindowedSample> out(static_cast<std::size_t>(n));
  for (auto& s : out) {
    s.inputs.assign(static_cast<std::size_t>(k) * kSignalCount, value);
    s.target = value;
  }
  return out;
}

class PerArch : public ::testing::TestWithParam<Arch> {};

}  // namespace

TEST(ModelSpec, TunedDefaultsAndValidation) {
  const auto g = ModelSpec::defaults(Arch::kGru);
  EXPECT_EQ(g.learning_rate, 1e-4);
  EXPECT_EQ(g.epochs, 50);
  EXPECT_EQ(g.batch_size, 4);
  EXPECT_EQ(g.window, 30);
  EXPECT_EQ(g.neurons, 100);
  EXPECT_NO_THROW(g.validate());
  auto bad = g;
  bad.neurons = 0;
  EXPECT_THROW(init_model(bad, 1), Error);
}

TEST_P(PerArch, InitIsSeeded) {
  const auto a = init_model(toy(GetParam()), 5);
  const auto b = init_model(toy(GetParam()), 5);
  const auto c = init_model(toy(GetParam()), 6);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, c.params);
  EXPECT_EQ(a.block("out.b")(0, 0), 0.0);
}

TEST_P(PerArch, ZeroWeightsGiveOutputBias) {
  auto w = init_model(toy(GetParam()), 1);
  w.params.setZero();
  w.block("out.b")(0, 0) = 0.25;
  const auto batch = oracle::random_batch(3, w.spec.window, 4);
  for (const auto& s : batch) EXPECT_EQ(forward(w, s), 0.25);
}

TEST_P(PerArch, MatchesStraightLineReference) {
  for (int layers : {1, 2}) {
    const auto w = init_model(toy(GetParam(), layers), 11);
    const auto batch = oracle::random_batch(5, w.spec.window, 12);
    Forecaster f(w);
    std::vector<const double*> ptrs;
    for (const auto& s : batch) ptrs.push_back(s.inputs.data());
    const auto batched = f.predict_batch(ptrs);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double ref = oracle::predict(w, batch[i].inputs.data());
      EXPECT_NEAR(f.predict(batch[i]), ref, 1e-12);
      EXPECT_NEAR(batched[i], ref, 1e-12);
    }
  }
}

TEST_P(PerArch, GradientMatchesFiniteDifferences) {
  for (int layers : {1, 2}) {
    const auto w = init_model(toy(GetParam(), layers), 21);
    const auto batch = oracle::random_batch(3, w.spec.window, 22);
    Eigen::VectorXd g;
    const double loss = loss_and_gradient(w, batch, &g);
    EXPECT_NEAR(loss, oracle::mse(w, batch), 1e-12);
    const auto num = oracle::numeric_gradient(w, batch);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      EXPECT_LT(oracle::guarded_rel_error(g[i], num[i]), 1e-4) << "param " << i;
    }
  }
}

TEST_P(PerArch, LearnsConstantSeries) {
  auto spec = toy(GetParam());
  spec.epochs = 30;
  spec.learning_rate = 1e-2;
  spec.batch_size = 8;
  const auto data = constant_series(64, spec.window, 0.4);
  const auto r = train(init_model(spec, 2), data, data);
  EXPECT_LT(r.report.epochs.back().train_mse, 1e-4);
  EXPECT_EQ(r.report.epochs.size(), 30u);
}

TEST_P(PerArch, TrainingIsDeterministic) {
  auto spec = toy(GetParam());
  spec.epochs = 3;
  const auto data = oracle::random_batch(40, spec.window, 8);
  const auto a = train(init_model(spec, 2), data, data);
  const auto b = train(init_model(spec, 2), data, data);
  EXPECT_EQ(a.weights.params, b.weights.params);
  for (std::size_t e = 0; e < a.report.epochs.size(); ++e) {
    EXPECT_EQ(a.report.epochs[e].train_mse, b.report.epochs[e].train_mse);
    EXPECT_EQ(a.report.epochs[e].val_mse, b.report.epochs[e].val_mse);
  }
}

TEST_P(PerArch, WeightFileRoundTrip) {
  const auto w = init_model(toy(GetParam(), 2), 13);
  std::stringstream ss;
  write_weights(ss, w);
  const auto back = read_weights(ss);
  EXPECT_EQ(back.params, w.params);
  EXPECT_EQ(back.spec.arch, w.spec.arch);
  const auto batch = oracle::random_batch(100, w.spec.window, 14);
  Forecaster a(w), b(back);
  for (const auto& s : batch) EXPECT_EQ(a.predict(s), b.predict(s));
}

INSTANTIATE_TEST_SUITE_P(AllArchitectures, PerArch,
                         ::testing::Values(Arch::kAnn, Arch::kRnn, Arch::kGru, Arch::kLstm),
                         [](const auto& info) { return std::string(arch_name(info.param)); });

TEST(Gru, SaturatedUpdateGateKeepsZeroState) {
  auto w = init_model(toy(Arch::kGru), 1);
  const int h = w.spec.neurons;
  w.block("gru0.b_ih").middleRows(h, h).setConstant(1e3);
  w.block("out.b")(0, 0) = 0.3;
  WindowedSample s;
  s.inputs.assign(static_cast<std::size_t>(w.spec.window) * kSignalCount, 0.0);
  EXPECT_DOUBLE_EQ(forward(w, s), 0.3);
}

TEST(WeightFile, TruncatedVersionAndChecksum) {
  const auto w = init_model(toy(Arch::kLstm), 13);
  std::stringstream ss;
  write_weights(ss, w);
  const std::string bytes = ss.str();
  auto kind_of = [](const std::string& data) {
    std::stringstream in(data);
    try {
      read_weights(in);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kDomain;
  };
  EXPECT_EQ(kind_of(bytes.substr(0, bytes.size() - 9)), ErrorKind::kFormat);
  EXPECT_EQ(kind_of(bytes.substr(0, 3)), ErrorKind::kFormat);
  std::string v = bytes;
  v[4] = 9;
  EXPECT_EQ(kind_of(v), ErrorKind::kVersion);
  std::string flipped = bytes;
  flipped[bytes.size() - 20] ^= 1;
  EXPECT_EQ(kind_of(flipped), ErrorKind::kFormat);
  EXPECT_THROW(load_weights("/nonexistent/weights.rgfw"), Error);
}

TEST(Metrics, ErrorsToMetrics) {
  auto m = metrics_from_errors({0.0, 0.0, 0.0});
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  m = metrics_from_errors({0.1, -0.1, 0.1, -0.1});
  EXPECT_NEAR(m.rmse, 0.1, 1e-15);
  EXPECT_NEAR(m.mae, 0.1, 1e-15);
  EXPECT_NEAR(m.max_abs_error, 0.1, 1e-15);
  EXPECT_THROW(metrics_from_errors({}), Error);
}

TEST(Train, RejectsShapeMismatchAndEmpty) {
  const auto spec = toy(Arch::kGru);
  EXPECT_THROW(train(init_model(spec, 1), {}, {}), Error);
  const auto wrong = oracle::random_batch(4, spec.window + 1, 1);
  EXPECT_THROW(train(init_model(spec, 1), wrong, {}), Error);
}

TEST(Train, DivergenceIsNumericError) {
  auto spec = toy(Arch::kRnn);
  spec.learning_rate = 1e30;
  spec.epochs = 5;
  auto data = oracle::random_batch(16, spec.window, 3);
  for (auto& s : data) s.target *= 1e30;
  try {
    train(init_model(spec, 1), data, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}
