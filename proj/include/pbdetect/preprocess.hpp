#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "pbdetect/memstore.hpp"
#include "pbdetect/signal_model.hpp"

namespace pbdetect {

/// Streaming regularized moving-average filter followed by a clearance-gated
/// windowed difference. One instance per stream.
///
/// For sample n with N = min(n, window_n):
///   mean(n)  = average of the previous N history values
///   x_avg(n) = x(n) if |x(n) - mean(n)| > r_thresh, else mean(n)   (x_avg(0) = x(0))
///   d(n)     = x_avg(n) - x_avg(n - N)
///   r(n)     = d(n) if |d(n)| > clearance, else 0                   (r(0) = 0)
///
/// The history feeding mean(n) holds raw inputs by default, or previous
/// x_avg outputs with SmoothingHistory::smoothed. Storage is two circular
/// buffers of window_n slots (one when the history is the smoothed one).
class Preprocessor {
public:
  explicit Preprocessor(const PipelineConfig& cfg, BudgetAccountant* accountant = nullptr)
      : cfg_(cfg),
        raw_history_(static_cast<std::size_t>(cfg.window_n)),
        smoothed_history_(static_cast<std::size_t>(cfg.window_n)),
        charge_(accountant, "preprocess",
                static_cast<long>(cfg.window_n) * cfg.bytes_per_sample *
                    (cfg.smoothing_history == SmoothingHistory::raw ? 2 : 1)) {
    cfg.validate();
  }

  /// Eq.-1 smoothing of x(n). Must be followed by difference() with the
  /// returned value before the next call.
  double smooth(double x) {
    if (cfg_.invert_signal) x = -x;
    double out = x;
    const auto& history =
        cfg_.smoothing_history == SmoothingHistory::raw ? raw_history_ : smoothed_history_;
    if (!history.empty()) {
      const double mean = history_sum(history) / static_cast<double>(history.size());
      out = std::abs(x - mean) > cfg_.r_thresh ? x : mean;
    }
    if (cfg_.smoothing_history == SmoothingHistory::raw) raw_history_.push(x);
    return out;
  }

  /// Clearance-gated difference of x_avg(n) against x_avg(n - N).
  double difference(double x_avg) {
    double r = 0.0;
    if (!smoothed_history_.empty()) {
      const double d = x_avg - smoothed_history_.oldest();
      const bool passes = cfg_.formula.fod_abs ? std::abs(d) > cfg_.fod_clearance_threshold
                                               : d > cfg_.fod_clearance_threshold;
      r = passes ? d : 0.0;
    }
    smoothed_history_.push(x_avg);
    ++samples_seen_;
    return r;
  }

  double step(double x) { return difference(smooth(x)); }

  /// Sum of the buffered values that feed the moving-average mean.
  double running_sum() const {
    return history_sum(cfg_.smoothing_history == SmoothingHistory::raw ? raw_history_
                                                                       : smoothed_history_);
  }

  std::size_t samples_seen() const { return samples_seen_; }
  std::size_t history_size() const {
    return cfg_.smoothing_history == SmoothingHistory::raw ? raw_history_.size()
                                                           : smoothed_history_.size();
  }
  /// Values held across both buffers; bounded by 2 * window_n.
  std::size_t stored_values() const { return raw_history_.size() + smoothed_history_.size(); }

  void reset() {
    raw_history_.clear();
    smoothed_history_.clear();
    samples_seen_ = 0;
  }

private:
  static double history_sum(const CircularBuffer<double>& h) {
    // Summed oldest to newest on every step; window_n is small and this keeps
    // the mean free of incremental rounding drift.
    double sum = 0.0;
    h.for_each([&](double v) { sum += v; });
    return sum;
  }

  PipelineConfig cfg_;
  CircularBuffer<double> raw_history_;
  CircularBuffer<double> smoothed_history_;
  std::size_t samples_seen_ = 0;
  ScopedCharge charge_;
};

/// Feeds samples in index order, rejecting gaps or reordering.
class PreprocessStream {
public:
  explicit PreprocessStream(const PipelineConfig& cfg, BudgetAccountant* accountant = nullptr)
      : pre_(cfg, accountant) {}

  double push(const EogSample& s) {
    if (halted_) throw StreamError("preprocess stream halted after an ordering error");
    if (s.index != next_index_) {
      halted_ = true;
      throw StreamError("expected sample index " + std::to_string(next_index_) + ", got " +
                        std::to_string(s.index));
    }
    ++next_index_;
    return pre_.step(s.amplitude);
  }

  std::size_t next_index() const { return next_index_; }
  const Preprocessor& preprocessor() const { return pre_; }

private:
  Preprocessor pre_;
  std::size_t next_index_ = 0;
  bool halted_ = false;
};

/// Whole-trace convenience: one r value per input sample.
inline std::vector<double> preprocess(std::span<const double> samples, const PipelineConfig& cfg) {
  Preprocessor pre(cfg);
  std::vector<double> r;
  r.reserve(samples.size());
  for (double x : samples) r.push_back(pre.step(x));
  return r;
}

}  // namespace pbdetect
