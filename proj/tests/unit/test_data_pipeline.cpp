#include <gtest/gtest.h>

#include <sstream>

#include "replayguard/data_pipeline.hpp"

using namespace replayguard;

namespace {

SignalFrame ramp_frame(std::size_t rows, std::int64_t start = 0) {
  SignalFrame f;
  for (std::size_t t = 0; t < rows; ++t) {
    const double x = static_cast<double>(t);
    f.push_row(start + static_cast<std::int64_t>(t),
               {1000.0 + x, 0.1 * x, x, 2 * x, 3 * x, 1.0, 0.0, -1.0});
  }
  return f;
}

}  // namespace

TEST(Scaler, FitsMinMaxOfTrainingColumns) {
  SignalFrame f;
  for (double v : {2.0, 4.0, 6.0}) f.push_row(static_cast<std::int64_t>(v), {v, v, v, v, v, 0, 0, 0});
  const auto p = fit_scaler(f);
  EXPECT_EQ(p.min[0], 2.0);
  EXPECT_EQ(p.max[0], 6.0);
  EXPECT_DOUBLE_EQ(p.forward(0, 8.0), 1.5);
  EXPECT_DOUBLE_EQ(p.forward(0, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(p.forward(0, 6.0), 1.0);
}

TEST(Scaler, RoundTrip) {
  const auto f = ramp_frame(50);
  const auto p = fit_scaler(f);
  const auto back = scale(scale(f, p), p, ScaleDirection::kInverse);
  for (std::size_t c = 0; c < kSignalCount; ++c) {
    for (std::size_t r = 0; r < f.size(); ++r) {
      EXPECT_NEAR(back.columns[c][r], f.columns[c][r], 1e-12);
    }
  }
}

TEST(Scaler, ActiveColumnsPassThrough) {
  const auto f = ramp_frame(10);
  const auto s = scale(f, fit_scaler(f));
  for (std::size_t r = 0; r < kRodCount; ++r) {
    EXPECT_EQ(s.column(active_signal(r)), f.column(active_signal(r)));
  }
}

TEST(Scaler, Errors) {
  EXPECT_THROW(fit_scaler(SignalFrame{}), Error);
  auto f = ramp_frame(1);
  EXPECT_THROW(fit_scaler(f), Error);  // constant column
  f = ramp_frame(5);
  f.columns[0][2] = kMissing;
  EXPECT_THROW(fit_scaler(f), Error);
}

TEST(Scaler, PersistenceRoundTripAndVersion) {
  const auto p = fit_scaler(ramp_frame(20));
  std::stringstream ss;
  write_scaler(ss, p);
  const auto q = read_scaler(ss);
  EXPECT_EQ(p.min, q.min);
  EXPECT_EQ(p.max, q.max);
  std::string text;
  {
    std::stringstream out;
    write_scaler(out, p);
    text = out.str();
  }
  const auto pos = text.find("version=1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 9, "version=9");
  std::stringstream bad(text);
  try {
    read_scaler(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kVersion);
  }
}

TEST(DropMissing, Cases) {
  auto f = ramp_frame(10);
  EXPECT_EQ(drop_missing(f).index, f.index);
  f.columns[3][7] = kMissing;
  const auto g = drop_missing(f);
  ASSERT_EQ(g.size(), 9u);
  EXPECT_EQ(g.index[6], 6);
  EXPECT_EQ(g.index[7], 8);
  for (auto& c : f.columns) std::fill(c.begin(), c.end(), kMissing);
  EXPECT_TRUE(drop_missing(f).empty());
}

TEST(Windows, CountOnContiguousFrame) {
  WindowingConfig cfg{10, 5, Signal::kNCounts};
  EXPECT_EQ(window_samples(ramp_frame(100), cfg).size(), 86u);
  EXPECT_EQ(window_samples(ramp_frame(15), cfg).size(), 1u);
  EXPECT_EQ(window_samples(ramp_frame(14), cfg).size(), 0u);
}

TEST(Windows, SampleContents) {
  WindowingConfig cfg{3, 2, Signal::kNCounts};
  const auto s = window_samples(ramp_frame(10), cfg);
  ASSERT_EQ(s.size(), 6u);
  EXPECT_EQ(s[1].at(0, 0), 1001.0);
  EXPECT_EQ(s[1].at(2, 0), 1003.0);
  EXPECT_EQ(s[1].target, 1000.0 + 1 + 3 - 1 + 2);
  EXPECT_EQ(s[1].target_index(), 5);
  EXPECT_EQ(s[1].last_input_index(), 3);
}

TEST(Windows, GapExcludesCoveringWindows) {
  auto f = ramp_frame(100);
  f = drop_missing([&] {
    auto g = f;
    g.columns[0][50] = kMissing;
    return g;
  }());
  WindowingConfig cfg{10, 5, Signal::kNCounts};
  const auto s = window_samples(f, cfg);
  for (const auto& w : s) {
    EXPECT_FALSE(w.indices.front() <= 50 && w.target_index() >= 50);
    EXPECT_EQ(w.target_index() - w.indices.front(), 14);
  }
  // 36 windows before the gap (0..49), 35 after (51..99).
  EXPECT_EQ(s.size(), 36u + 35u);
}

TEST(Split, Sizes) {
  auto check = [](std::size_t n, SplitRatios r, std::size_t a, std::size_t b, std::size_t c) {
    const auto s = split_dataset(ramp_frame(n), r);
    EXPECT_EQ(s.train.size(), a);
    EXPECT_EQ(s.val.size(), b);
    EXPECT_EQ(s.test.size(), c);
  };
  check(200000, {}, 120000, 40000, 40000);
  check(10, {}, 6, 2, 2);
  check(10, {1.0, 0.0, 0.0}, 10, 0, 0);
  check(11, {}, 7, 2, 2);
}

TEST(Split, ChronologicalAndRejectsBadRatios) {
  const auto s = split_dataset(ramp_frame(10));
  EXPECT_EQ(s.train.index.back(), 5);
  EXPECT_EQ(s.val.index.front(), 6);
  EXPECT_EQ(s.test.index.front(), 8);
  EXPECT_THROW(split_dataset(ramp_frame(10), {0.5, 0.2, 0.2}), Error);
  EXPECT_THROW(split_dataset(ramp_frame(10), {1.2, -0.1, -0.1}), Error);
}

TEST(Csv, RoundTripAndMalformedRows) {
  auto f = ramp_frame(5);
  f.columns[2][3] = kMissing;
  f.label[4] = Label::kAnomalous;
  std::stringstream ss;
  write_csv(ss, f);
  const auto g = read_csv(ss);
  EXPECT_EQ(g.index, f.index);
  EXPECT_EQ(g.label, f.label);
  EXPECT_TRUE(is_missing(g.columns[2][3]));
  EXPECT_EQ(g.columns[0], f.columns[0]);

  std::string why;
  EXPECT_FALSE(parse_csv_row("1,2,3", &why).has_value());
  EXPECT_FALSE(why.empty());
  EXPECT_FALSE(parse_csv_row("x,1,1,1,1,1,0,0,0", &why).has_value());
  EXPECT_TRUE(parse_csv_row("3,1,1,1,1,1,0,0,0", &why).has_value());
  std::stringstream bad("index,n_counts\n1,2\n");
  EXPECT_THROW(read_csv(bad), Error);
}
