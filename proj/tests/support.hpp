#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "pbdetect/isolator.hpp"

namespace pbtest {

/// Seeded generator for property tests; every test names its own seed.
class Gen {
public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}

  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng_);
  }
  bool coin() { return index(0, 1) == 1; }

  std::vector<double> reals(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = real(lo, hi);
    return v;
  }

private:
  std::mt19937_64 eng_;
};

/// r-domain PB skeleton: `neg` negative samples, `gap` zeros, `pos` positive
/// samples, then `tail` zeros. Half cycles are half-sine lobes of `depth`.
inline std::vector<double> pb_shape(std::size_t neg, std::size_t gap, std::size_t pos,
                                    std::size_t tail, double depth = 0.2) {
  std::vector<double> r;
  const double pi = 3.14159265358979323846;
  for (std::size_t i = 0; i < neg; ++i)
    r.push_back(-depth * (0.5 + 0.5 * std::sin(pi * (static_cast<double>(i) + 0.5) / static_cast<double>(neg))));
  r.insert(r.end(), gap, 0.0);
  for (std::size_t i = 0; i < pos; ++i)
    r.push_back(depth * (0.5 + 0.5 * std::sin(pi * (static_cast<double>(i) + 0.5) / static_cast<double>(pos))));
  r.insert(r.end(), tail, 0.0);
  return r;
}

inline pbdetect::Wavelet make_wavelet(std::vector<double> samples, std::size_t start = 0,
                                      double fs = 250.0) {
  pbdetect::Wavelet w;
  w.end_index = start + samples.size() - 1;
  w.start_index = start;
  w.samples = std::move(samples);
  w.sampling_rate_hz = fs;
  return w;
}

}  // namespace pbtest

#include <optional>

#include "pbdetect/classifier.hpp"

namespace pbtest {

/// Every band [-1, 1], so membership of v is exp(-v^2 / 2).
inline pbdetect::ThresholdSet unit_bands() {
  pbdetect::ThresholdSet t;
  for (auto& b : t.bands) b = {-1, 1, -5, -4};
  return t;
}

/// Three centred features (1 each), one whose membership brings pass_sum to
/// exactly 3.6 in double arithmetic, and two so far out they contribute 0.
/// Found by stepping through neighbouring doubles of sqrt(-2 ln 0.6).
inline std::optional<pbdetect::FeatureVector> boundary_vector() {
  const double v0 = std::sqrt(-2.0 * std::log(0.6));
  double lo = v0, hi = v0;
  for (int step = 0; step < 100000; ++step) {
    for (double v : {lo, hi}) {
      const auto f = pbdetect::FeatureVector::from_values({0, 0, 0, v, 1e3, 1e3});
      if (pbdetect::classify(f, unit_bands(), pbdetect::PipelineConfig{}).pass_sum == 3.6) return f;
    }
    lo = std::nextafter(lo, 0.0);
    hi = std::nextafter(hi, 10.0);
  }
  return std::nullopt;
}

}  // namespace pbtest
