#include <gtest/gtest.h>

#include <cmath>

#include "pbdetect/preprocess.hpp"
#include "support.hpp"

using namespace pbdetect;

namespace {

/// Direct transcription of the filter over whole arrays, raw-input history.
std::vector<double> naive_filter(const std::vector<double>& x, const PipelineConfig& cfg) {
  const std::size_t W = static_cast<std::size_t>(cfg.window_n);
  std::vector<double> avg(x.size()), r(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    const std::size_t N = std::min(n, W);
    if (N == 0) {
      avg[n] = x[n];
      continue;
    }
    double sum = 0;
    for (std::size_t k = n - N; k < n; ++k)
      sum += cfg.smoothing_history == SmoothingHistory::raw ? x[k] : avg[k];
    const double mean = sum / static_cast<double>(N);
    avg[n] = std::abs(x[n] - mean) > cfg.r_thresh ? x[n] : mean;
    const double d = avg[n] - avg[n - N];
    const bool pass = cfg.formula.fod_abs ? std::abs(d) > cfg.fod_clearance_threshold
                                          : d > cfg.fod_clearance_threshold;
    r[n] = pass ? d : 0.0;
  }
  return r;
}

std::vector<double> noisy_signal(std::uint64_t seed, std::size_t n) {
  pbtest::Gen g(seed);
  std::vector<double> x(n);
  double level = 0;
  for (auto& v : x) {
    if (g.index(0, 40) == 0) level = g.real(-1, 1);
    v = level + g.real(-0.05, 0.05);
  }
  return x;
}

}  // namespace

TEST(Preprocess, ConstantInputGivesZero) {
  const std::vector<double> x(500, 0.37);
  for (double r : preprocess(x, PipelineConfig{})) EXPECT_EQ(r, 0.0);
}

TEST(Preprocess, SingleSampleGivesZero) {
  const std::vector<double> x{0.9};
  EXPECT_EQ(preprocess(x, PipelineConfig{}), std::vector<double>{0.0});
}

TEST(Preprocess, ZeroRegularizationPassesInputThrough) {
  // With r_thresh = 0 every sample deviating from its mean passes unchanged,
  // so r is the plain clearance-gated N-sample difference of x.
  PipelineConfig cfg;
  cfg.r_thresh = 0.0;
  const auto x = noisy_signal(3, 400);
  const auto r = preprocess(x, cfg);
  for (std::size_t n = 1; n < x.size(); ++n) {
    const std::size_t N = std::min<std::size_t>(n, 25);
    const double d = x[n] - x[n - N];
    EXPECT_DOUBLE_EQ(r[n], std::abs(d) > 0.1 ? d : 0.0) << n;
  }
}

TEST(Preprocess, StepBelowClearanceIsSuppressed) {
  std::vector<double> x(100, 0.0);
  for (std::size_t i = 50; i < x.size(); ++i) x[i] = 0.05;
  for (double r : preprocess(x, PipelineConfig{})) EXPECT_EQ(r, 0.0);
}

TEST(Preprocess, RampSettlesToWindowTimesSlope) {
  std::vector<double> x(300);
  for (std::size_t n = 0; n < x.size(); ++n) x[n] = 0.01 * static_cast<double>(n);
  const auto r = preprocess(x, PipelineConfig{});
  for (std::size_t n = 60; n < x.size(); ++n) EXPECT_NEAR(r[n], 0.25, 1e-9) << n;
}

TEST(Preprocess, MatchesNaiveOracleOnRandomSignals) {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    pbtest::Gen g(seed * 31);
    PipelineConfig cfg;
    cfg.window_n = static_cast<int>(g.index(1, 40));
    cfg.r_thresh = g.real(0.0, 1.2);
    cfg.fod_clearance_threshold = g.real(0.0, 0.3);
    cfg.formula.fod_abs = g.coin();
    cfg.smoothing_history = g.coin() ? SmoothingHistory::raw : SmoothingHistory::smoothed;
    const auto x = noisy_signal(seed, 600);
    const auto got = preprocess(x, cfg);
    const auto want = naive_filter(x, cfg);
    for (std::size_t n = 0; n < x.size(); ++n) ASSERT_NEAR(got[n], want[n], 1e-12) << seed << ":" << n;
  }
}

TEST(Preprocess, ScalesWithPowerOfTwoGain) {
  PipelineConfig cfg;
  const auto x = noisy_signal(8, 500);
  const auto base = preprocess(x, cfg);
  for (double k : {0.5, 2.0, 4.0}) {
    PipelineConfig scaled = cfg;
    scaled.r_thresh *= k;
    scaled.fod_clearance_threshold *= k;
    std::vector<double> xs(x);
    for (auto& v : xs) v *= k;
    const auto r = preprocess(xs, scaled);
    for (std::size_t n = 0; n < x.size(); ++n) ASSERT_EQ(r[n], k * base[n]);
  }
}

TEST(Preprocess, RejectsSlowBaselineWander) {
  std::vector<double> x(5000);
  for (std::size_t n = 0; n < x.size(); ++n)
    x[n] = 0.1 * std::sin(2 * 3.14159265358979 * 0.1 * static_cast<double>(n) / 250.0);
  for (double r : preprocess(x, PipelineConfig{})) EXPECT_EQ(r, 0.0);
}

TEST(Preprocess, StreamingEqualsBatch) {
  const auto x = noisy_signal(21, 700);
  const PipelineConfig cfg;
  const auto batch = preprocess(x, cfg);
  PreprocessStream stream(cfg);
  for (std::size_t n = 0; n < x.size(); ++n) EXPECT_EQ(stream.push({n, x[n]}), batch[n]);
}

TEST(Preprocess, StoredValuesBoundedByTwoWindows) {
  Preprocessor pre(PipelineConfig{});
  for (int i = 0; i < 1000; ++i) {
    pre.step(std::sin(i * 0.1));
    ASSERT_LE(pre.stored_values(), 50u);
  }
}

TEST(Preprocess, StreamGapHalts) {
  PreprocessStream stream(PipelineConfig{});
  stream.push({0, 0.1});
  EXPECT_THROW(stream.push({2, 0.1}), StreamError);
  EXPECT_THROW(stream.push({1, 0.1}), StreamError);
}

TEST(Preprocess, ChargesItsBuffers) {
  BudgetAccountant acct(32768);
  {
    Preprocessor pre(PipelineConfig{}, &acct);
    EXPECT_EQ(acct.owner_bytes("preprocess"), 100);
  }
  EXPECT_EQ(acct.live_bytes(), 0);
}

TEST(Preprocess, ResetRestartsTheFilter) {
  const auto x = noisy_signal(4, 300);
  Preprocessor pre(PipelineConfig{});
  for (double v : x) pre.step(v);
  pre.reset();
  const auto batch = preprocess(x, PipelineConfig{});
  for (std::size_t n = 0; n < x.size(); ++n) EXPECT_EQ(pre.step(x[n]), batch[n]);
}
