#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pbdetect/features.hpp"
#include "pbdetect/isolator.hpp"
#include "pbdetect/preprocess.hpp"
#include "pbdetect/trainer.hpp"

namespace pbdetect {

/// Gaussian membership of `value` in the band [lt, ut]: centre c = (lt+ut)/2,
/// half-width h = (ut-lt)/2, z = (value-c)/h, result exp(-z^2/2).
/// With `squared` false the exponent is the unsquared exp(-z/2), which is
/// neither symmetric nor bounded by 1.
inline double fuzzy_membership(double value, double lt, double ut, bool squared = true) {
  if (!(lt < ut)) throw ConfigError("membership band requires lt < ut");
  const double c = (ut + lt) / 2.0;
  const double h = (ut - lt) / 2.0;
  const double z = (value - c) / h;
  return squared ? std::exp(-(z * z) / 2.0) : std::exp(-z / 2.0);
}

struct DetectionEvent {
  std::size_t start_index = 0;
  std::size_t end_index = 0;
  std::size_t confirm_index = 0;  // isolator sample that confirmed the wavelet
  double t_s = 0.0;               // confirm_index / fs
  FeatureVector features;
  std::array<double, kFeatureCount> fuzz_val{};
  double pass_sum = 0.0;
  bool is_pb = false;
  double decision_latency_ms = 0.0;
};

/// Memberships of the first cfg.total_features features, summed into
/// pass_sum; is_pb when pass_sum / total_features >= pass_ratio. Features
/// outside their band still contribute their membership.
inline DetectionEvent classify(const FeatureVector& v, const ThresholdSet& t,
                               const PipelineConfig& cfg) {
  if (cfg.total_features < 1 || static_cast<std::size_t>(cfg.total_features) > kFeatureCount)
    throw ConfigError("total_features must be in [1, " + std::to_string(kFeatureCount) + "]");
  DetectionEvent ev;
  ev.features = v;
  const auto values = v.values();
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.total_features); ++i) {
    ev.fuzz_val[i] = fuzzy_membership(values[i], t.bands[i].lt, t.bands[i].ut,
                                      cfg.formula.gaussian_square);
    ev.pass_sum += ev.fuzz_val[i];
  }
  ev.is_pb = ev.pass_sum / static_cast<double>(cfg.total_features) >= cfg.pass_ratio;
  return ev;
}

inline DetectionEvent classify(const FeatureVector& v, const TrainedModel& m) {
  return classify(v, m.thresholds, m.config);
}

// ---------------------------------------------------------------------------
// Episode monitor

struct DrowsinessAlert {
  double t_s = 0.0;
  std::vector<double> pb_times;
  double window_s = 0.0;

  std::size_t count() const { return pb_times.size(); }
};

/// Sliding window of PB timestamps. A timestamp stays while t - t_old <=
/// window; reaching episode_min_pbs raises one alert and empties the window.
class EpisodeMonitor {
public:
  explicit EpisodeMonitor(const PipelineConfig& cfg)
      : window_s_(cfg.episode_window_s), min_pbs_(static_cast<std::size_t>(cfg.episode_min_pbs)) {}

  std::optional<DrowsinessAlert> step(bool is_pb, double t_s) {
    if (last_t_ && t_s < *last_t_)
      throw StreamError("episode monitor timestamps must be non-decreasing");
    last_t_ = t_s;
    while (!times_.empty() && t_s - times_.front() > window_s_) times_.pop_front();
    if (!is_pb) return std::nullopt;
    times_.push_back(t_s);
    if (times_.size() < min_pbs_) return std::nullopt;
    DrowsinessAlert alert{t_s, {times_.begin(), times_.end()}, window_s_};
    times_.clear();
    return alert;
  }

  std::optional<DrowsinessAlert> step(const DetectionEvent& ev, double t_s) {
    return step(ev.is_pb, t_s);
  }

  std::size_t pending() const { return times_.size(); }

private:
  double window_s_;
  std::size_t min_pbs_;
  std::deque<double> times_;
  std::optional<double> last_t_;
};

// ---------------------------------------------------------------------------
// Operational pipeline

/// Throws ConfigError naming the first setting that differs between the
/// model's training configuration and the stream configuration in a way
/// that would change features or thresholds.
inline void check_compatible(const PipelineConfig& model_cfg, const PipelineConfig& cfg) {
  auto refuse = [](const std::string& what) {
    throw ConfigError("model/stream configuration mismatch: " + what);
  };
  if (model_cfg.formula != cfg.formula)
    refuse("formula mode " + std::string(to_string(model_cfg.formula.mode)) + " model vs " +
           std::string(to_string(cfg.formula.mode)) + " run (or differing formula overrides)");
  if (model_cfg.sampling_rate_hz != cfg.sampling_rate_hz) refuse("sampling_rate_hz");
  if (model_cfg.window_n != cfg.window_n) refuse("window_n");
  if (model_cfg.r_thresh != cfg.r_thresh) refuse("r_thresh");
  if (model_cfg.fod_clearance_threshold != cfg.fod_clearance_threshold)
    refuse("fod_clearance_threshold");
  if (model_cfg.smoothing_history != cfg.smoothing_history) refuse("smoothing_history");
  if (model_cfg.invert_signal != cfg.invert_signal) refuse("invert_signal");
  if (model_cfg.hold_samples() != cfg.hold_samples()) refuse("state4_hold_ms");
  if (model_cfg.ihc_max_samples() != cfg.ihc_max_samples()) refuse("ihc_max_ms");
  if (model_cfg.similarity_backend != cfg.similarity_backend) refuse("similarity_backend");
  if (model_cfg.sakoe_chiba_band != cfg.sakoe_chiba_band) refuse("sakoe_chiba_band");
  if (model_cfg.integer_ncc != cfg.integer_ncc) refuse("integer_ncc");
}

struct DetectorStep {
  IsolatorEvent isolator;  // the isolator's result for this sample
  std::optional<DetectionEvent> detection;
  std::optional<DrowsinessAlert> alert;
};

/// Streaming operational period for one subject: preprocess, isolate,
/// extract features against the model's buffer, classify, monitor episodes.
/// Storage is charged to `accountant` when given.
class Detector {
public:
  Detector(const TrainedModel& model, const PipelineConfig& cfg,
           BudgetAccountant* accountant = nullptr)
      : cfg_(cfg),
        thresholds_(model.thresholds),
        pre_(cfg, accountant),
        iso_(cfg, accountant),
        buffer_(cfg, accountant),
        monitor_(cfg) {
    model.validate();
    check_compatible(model.config, cfg);
    for (const auto& w : model.buffer) buffer_.append(w);
  }

  DetectorStep step(double x) {
    DetectorStep out{iso_.step(pre_.step(x)), std::nullopt, std::nullopt};
    if (!out.isolator.is_candidate()) return out;
    const auto t0 = std::chrono::steady_clock::now();
    const Wavelet& w = out.isolator.wavelet();
    auto ev = classify(extract_features(w, buffer_, cfg_), thresholds_, cfg_);
    ev.start_index = w.start_index;
    ev.end_index = w.end_index;
    ev.confirm_index = out.isolator.index;
    ev.t_s = static_cast<double>(out.isolator.index) / cfg_.sampling_rate_hz;
    if (ev.is_pb && cfg_.retain_detected_pbs) buffer_.append(w);
    ev.decision_latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.alert = monitor_.step(ev, ev.t_s);
    out.detection = std::move(ev);
    return out;
  }

  const WaveletBuffer& buffer() const { return buffer_; }
  std::size_t samples_seen() const { return pre_.samples_seen(); }

private:
  PipelineConfig cfg_;
  ThresholdSet thresholds_;
  Preprocessor pre_;
  Isolator iso_;
  WaveletBuffer buffer_;
  EpisodeMonitor monitor_;
};

struct OperationalResult {
  std::vector<DetectionEvent> detections;
  std::vector<DrowsinessAlert> alerts;
  std::vector<IsolatorEvent> isolator_events;  // non-None, when requested
};

inline OperationalResult run_operational(std::span<const double> samples, const TrainedModel& model,
                                         const PipelineConfig& cfg,
                                         BudgetAccountant* accountant = nullptr,
                                         bool keep_isolator_events = false) {
  Detector det(model, cfg, accountant);
  OperationalResult out;
  for (double x : samples) {
    auto s = det.step(x);
    if (keep_isolator_events && !s.isolator.is_none()) {
      IsolatorEvent e{s.isolator.index, std::monostate{}};
      if (s.isolator.is_rejected()) e.payload = s.isolator.rejection();
      else e.payload = s.isolator.wavelet();
      out.isolator_events.push_back(std::move(e));
    }
    if (s.detection) out.detections.push_back(std::move(*s.detection));
    if (s.alert) out.alerts.push_back(std::move(*s.alert));
  }
  return out;
}

/// Producer/consumer wrapper: push() hands samples to a worker thread through
/// a bounded queue (blocking when full); results keep stream order.
class AsyncDetector {
public:
  AsyncDetector(const TrainedModel& model, const PipelineConfig& cfg,
                std::size_t queue_capacity = 4096, BudgetAccountant* accountant = nullptr)
      : detector_(model, cfg, accountant), capacity_(queue_capacity ? queue_capacity : 1) {
    worker_ = std::thread([this] { run(); });
  }

  AsyncDetector(const AsyncDetector&) = delete;
  AsyncDetector& operator=(const AsyncDetector&) = delete;

  ~AsyncDetector() {
    try {
      finish();
    } catch (...) {
    }
  }

  void push(double x) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return queue_.size() < capacity_ || failure_ || closed_; });
    if (closed_) throw StreamError("push after finish");
    if (failure_) return;
    queue_.push_back(x);
    max_depth_ = std::max(max_depth_, queue_.size());
    not_empty_.notify_one();
  }

  /// Drains the queue, joins the worker, and returns everything produced.
  /// Rethrows the first worker error.
  OperationalResult finish() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    not_empty_.notify_all();
    if (worker_.joinable()) worker_.join();
    if (failure_) std::rethrow_exception(std::exchange(failure_, nullptr));
    return std::move(result_);
  }

  std::size_t max_queue_depth() const {
    std::lock_guard lock(mu_);
    return max_depth_;
  }

private:
  void run() {
    for (;;) {
      double x;
      {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return !queue_.empty() || closed_; });
        if (queue_.empty()) return;
        x = queue_.front();
        queue_.pop_front();
        not_full_.notify_one();
      }
      try {
        auto s = detector_.step(x);
        if (s.detection) result_.detections.push_back(std::move(*s.detection));
        if (s.alert) result_.alerts.push_back(std::move(*s.alert));
      } catch (...) {
        std::lock_guard lock(mu_);
        failure_ = std::current_exception();
        queue_.clear();
        not_full_.notify_all();
        return;
      }
    }
  }

  Detector detector_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<double> queue_;
  std::size_t max_depth_ = 0;
  bool closed_ = false;
  std::exception_ptr failure_;
  OperationalResult result_;
  std::thread worker_;
};

}  // namespace pbdetect
