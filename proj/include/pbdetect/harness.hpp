#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pbdetect/classifier.hpp"
#include "pbdetect/simulator.hpp"
#include "pbdetect/strictmode.hpp"
#include "pbdetect/trainer.hpp"

namespace pbdetect {

class ScoringError : public Error {
public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Scoring

struct OutcomeTally {
  std::string profile;
  std::size_t total_readings = 0;
  std::size_t correct_detections = 0;
  std::size_t wrong_detections = 0;
  std::size_t false_positives = 0;
  std::size_t true_negatives = 0;
  std::size_t unclassified = 0;
  std::size_t upward_gazes = 0;
  std::size_t upward_false_positives = 0;
  double avg_detection_ms = 0.0;
  double accuracy_pct = 0.0;
  bool failed = false;
  std::string failure;

  double upward_fp_pct() const {
    return upward_gazes ? 100.0 * static_cast<double>(upward_false_positives) /
                              static_cast<double>(upward_gazes)
                        : 0.0;
  }
};

/// Index of the label overlapping [start, end] the most; ties go to the
/// earlier label. Throws ScoringError when nothing overlaps.
inline std::size_t assign_label(std::size_t start, std::size_t end, std::span<const Label> labels) {
  std::size_t best = labels.size();
  std::size_t best_overlap = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto lo = std::max(start, labels[i].start);
    const auto hi = std::min(end, labels[i].end);
    if (hi < lo) continue;
    if (hi - lo + 1 > best_overlap) best_overlap = hi - lo + 1, best = i;
  }
  if (best == labels.size())
    throw ScoringError("detection [" + std::to_string(start) + ", " + std::to_string(end) +
                       "] overlaps no labeled movement");
  return best;
}

/// One outcome per labeled movement (NONE_IDLE labels are ignored):
///   PB label:     any is_pb detection -> correct; detections but none is_pb
///                 -> true negative; no detection -> unclassified
///   non-PB label: any is_pb detection -> false positive; otherwise correct
/// wrong = false positives + true negatives + unclassified.
/// avg_detection_ms is the mean stream delay from the end of the labeled
/// movement to the sample that produced the verdict.
inline OutcomeTally score_session(std::span<const DetectionEvent> detections,
                                  std::span<const Label> labels, double fs) {
  struct Seen {
    bool any = false;
    bool pb = false;
  };
  std::vector<Seen> seen(labels.size());
  double delay_sum_ms = 0.0;
  for (const auto& d : detections) {
    const auto i = assign_label(d.start_index, d.end_index, labels);
    seen[i].any = true;
    seen[i].pb |= d.is_pb;
    const double delay =
        (static_cast<double>(d.confirm_index) - static_cast<double>(labels[i].end)) / fs * 1000.0;
    delay_sum_ms += delay;
  }
  OutcomeTally t;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto kind = labels[i].kind;
    if (kind == MovementKind::none_idle) continue;
    ++t.total_readings;
    if (kind == MovementKind::upward_gaze) {
      ++t.upward_gazes;
      if (seen[i].pb) ++t.upward_false_positives;
    }
    if (kind == MovementKind::prolonged_blink) {
      if (seen[i].pb) ++t.correct_detections;
      else if (seen[i].any) ++t.true_negatives;
      else ++t.unclassified;
    } else if (seen[i].pb) {
      ++t.false_positives;
    } else {
      ++t.correct_detections;
    }
  }
  t.wrong_detections = t.false_positives + t.true_negatives + t.unclassified;
  t.avg_detection_ms = detections.empty() ? 0.0 : delay_sum_ms / static_cast<double>(detections.size());
  t.accuracy_pct = t.total_readings ? 100.0 * static_cast<double>(t.correct_detections) /
                                          static_cast<double>(t.total_readings)
                                    : 0.0;
  return t;
}

// ---------------------------------------------------------------------------
// Evaluation

/// PBDETECT_SEED as an integer, when set and well-formed.
inline std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("PBDETECT_SEED");
  if (!v || !*v) return std::nullopt;
  if (auto s = detail::parse_int<std::uint64_t>(v)) return *s;
  throw ConfigError("PBDETECT_SEED must be a non-negative integer");
}

/// Accountant with cfg.memory_budget_bytes, pre-charged with
/// cfg.reserved_bytes under the owner "reserved".
inline std::unique_ptr<BudgetAccountant> make_accountant(const PipelineConfig& cfg) {
  auto acct = std::make_unique<BudgetAccountant>(cfg.memory_budget_bytes);
  if (cfg.reserved_bytes > 0) acct->track("reserved", cfg.reserved_bytes);
  return acct;
}

inline std::string config_fingerprint(const PipelineConfig& cfg) {
  return detail::hex32(detail::crc32_of(format_config(cfg)));
}

struct EvalReport {
  std::vector<OutcomeTally> rows;  // sorted by profile id
  OutcomeTally aggregate;          // sums; accuracy and latency are row means
  OutcomeTally pooled;             // sums; accuracy over the summed counts
  std::string backend;
  std::string mode;
  std::string fingerprint;

  bool any_failed() const {
    return std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.failed; });
  }
};

/// Trains one profile on its learning-period traces and scores it on its
/// operational session. Errors land in the returned row.
inline OutcomeTally evaluate_profile(const SubjectProfile& profile, const PipelineConfig& cfg) {
  OutcomeTally row;
  try {
    const auto training = generate_training(profile, cfg);
    const auto model = train_from_traces(training.pb, training.up, cfg, "eval");
    const auto session = generate_evaluation(profile, cfg);
    const auto result = run_operational(session.amplitudes, model, cfg);
    row = score_session(result.detections, session.labels, cfg.sampling_rate_hz);
  } catch (const Error& e) {
    row = OutcomeTally{};
    row.failed = true;
    row.failure = e.what();
  }
  row.profile = profile.id;
  return row;
}

/// Evaluates every profile on up to `jobs` threads. Results do not depend on
/// `jobs`: each profile's work is independent and rows are sorted by id.
inline EvalReport run_eval(const std::vector<SubjectProfile>& profiles, const PipelineConfig& cfg,
                           unsigned jobs = 1) {
  if (profiles.empty()) throw ConfigError("run_eval needs at least one profile");
  cfg.validate();
  EvalReport report;
  report.rows.resize(profiles.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < profiles.size();)
      report.rows[i] = evaluate_profile(profiles[i], cfg);
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(profiles.size())));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  std::sort(report.rows.begin(), report.rows.end(),
            [](const auto& a, const auto& b) { return a.profile < b.profile; });

  OutcomeTally sum;
  std::size_t ok = 0;
  double acc_sum = 0.0, ms_sum = 0.0;
  for (const auto& r : report.rows) {
    if (r.failed) continue;
    ++ok;
    sum.total_readings += r.total_readings;
    sum.correct_detections += r.correct_detections;
    sum.wrong_detections += r.wrong_detections;
    sum.false_positives += r.false_positives;
    sum.true_negatives += r.true_negatives;
    sum.unclassified += r.unclassified;
    sum.upward_gazes += r.upward_gazes;
    sum.upward_false_positives += r.upward_false_positives;
    acc_sum += r.accuracy_pct;
    ms_sum += r.avg_detection_ms;
  }
  report.aggregate = sum;
  report.aggregate.profile = "AGGREGATE";
  report.aggregate.accuracy_pct = ok ? acc_sum / static_cast<double>(ok) : 0.0;
  report.aggregate.avg_detection_ms = ok ? ms_sum / static_cast<double>(ok) : 0.0;
  report.pooled = sum;
  report.pooled.profile = "POOLED";
  report.pooled.accuracy_pct = sum.total_readings ? 100.0 * static_cast<double>(sum.correct_detections) /
                                                        static_cast<double>(sum.total_readings)
                                                  : 0.0;
  report.pooled.avg_detection_ms = report.aggregate.avg_detection_ms;
  report.backend = std::string(to_string(cfg.similarity_backend));
  report.mode = std::string(to_string(cfg.formula.mode));
  report.fingerprint = config_fingerprint(cfg);
  return report;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

inline std::string eval_csv_header() {
  return "Subject Profile,Total Readings,Correct Detections,Wrong Detections,False Positives,"
         "True Negatives,Avg. Time per Detection (ms),% Accuracy,Unclassified,Upward Gazes,"
         "Upward FPs,backend,mode,status";
}

inline std::string eval_csv_row(const OutcomeTally& r, const EvalReport& rep) {
  std::string status = r.failed ? "FAILED: " + r.failure : "ok";
  for (auto& c : status)
    if (c == ',' || c == '\n') c = ';';
  return r.profile + ',' + std::to_string(r.total_readings) + ',' +
         std::to_string(r.correct_detections) + ',' + std::to_string(r.wrong_detections) + ',' +
         std::to_string(r.false_positives) + ',' + std::to_string(r.true_negatives) + ',' +
         detail::fixed(r.avg_detection_ms, 1) + ',' + detail::fixed(r.accuracy_pct, 2) + ',' +
         std::to_string(r.unclassified) + ',' + std::to_string(r.upward_gazes) + ',' +
         std::to_string(r.upward_false_positives) + ',' + rep.backend + ',' + rep.mode + ',' + status;
}

/// Table-style CSV: one row per profile, then AGGREGATE and POOLED rows,
/// then a `# config` comment carrying the configuration fingerprint.
inline std::string format_eval_csv(const EvalReport& rep) {
  std::string out = eval_csv_header() + '\n';
  for (const auto& r : rep.rows) out += eval_csv_row(r, rep) + '\n';
  out += eval_csv_row(rep.aggregate, rep) + '\n';
  out += eval_csv_row(rep.pooled, rep) + '\n';
  out += "# config " + rep.fingerprint + '\n';
  return out;
}

struct AcceptanceBands {
  double min_mean_accuracy_pct = 80.0;
  double min_profile_accuracy_pct = 65.0;
  double max_upward_fp_pct = 15.0;
};

/// Empty when `rep` meets every band; otherwise one message per miss. Hard
/// profiles are exempt from the per-profile upward-gaze bound only.
inline std::vector<std::string> acceptance_misses(const EvalReport& rep,
                                                  const std::vector<SubjectProfile>& profiles,
                                                  const AcceptanceBands& bands = {}) {
  std::vector<std::string> misses;
  auto is_hard = [&](const std::string& id) {
    for (const auto& p : profiles)
      if (p.id == id) return p.hard;
    return false;
  };
  if (rep.aggregate.accuracy_pct < bands.min_mean_accuracy_pct)
    misses.push_back("mean accuracy " + detail::fixed(rep.aggregate.accuracy_pct, 2) + "% < " +
                     detail::fixed(bands.min_mean_accuracy_pct, 2) + "%");
  for (const auto& r : rep.rows) {
    if (r.failed) {
      misses.push_back("profile " + r.profile + " failed: " + r.failure);
      continue;
    }
    if (r.accuracy_pct < bands.min_profile_accuracy_pct)
      misses.push_back("profile " + r.profile + " accuracy " + detail::fixed(r.accuracy_pct, 2) + "%");
    if (!is_hard(r.profile) && r.upward_fp_pct() > bands.max_upward_fp_pct)
      misses.push_back("profile " + r.profile + " upward-gaze FP " + detail::fixed(r.upward_fp_pct(), 2) + "%");
  }
  if (rep.pooled.upward_fp_pct() > bands.max_upward_fp_pct)
    misses.push_back("aggregate upward-gaze FP " + detail::fixed(rep.pooled.upward_fp_pct(), 2) + "%");
  return misses;
}

/// CLI exit status: 2 when a profile failed training, 3 when a band is
/// missed, else 0.
inline int eval_exit_code(const EvalReport& rep, const std::vector<SubjectProfile>& profiles) {
  if (rep.any_failed()) return 2;
  return acceptance_misses(rep, profiles).empty() ? 0 : 3;
}

// ---------------------------------------------------------------------------
// Benchmark

struct AccountantSample {
  double t_s;
  long live_bytes;
  long high_water_bytes;
  std::size_t waves_stored;
};

struct BenchReport {
  double mean_detect_ms = 0;
  double max_detect_ms = 0;
  double p99_detect_ms = 0;
  long high_water_bytes = 0;
  long budget_bytes = 0;
  double realtime_factor = 0;
  double stream_seconds = 0;
  double wall_seconds = 0;
  std::size_t detections = 0;
  std::vector<AccountantSample> snapshots;
};

/// Trains `profile`, then streams its operational session through a Detector
/// charged against a fresh accountant, timing the whole stream and each
/// decision. Snapshots are taken every `snapshot_every_s` of stream time.
inline BenchReport run_bench(const SubjectProfile& profile, const PipelineConfig& cfg,
                             double snapshot_every_s = 1.0) {
  const auto training = generate_training(profile, cfg);
  const auto model = train_from_traces(training.pb, training.up, cfg, "bench");
  const auto session = generate_evaluation(profile, cfg);
  auto acct = make_accountant(cfg);
  Detector det(model, cfg, acct.get());

  BenchReport rep;
  rep.budget_bytes = cfg.memory_budget_bytes;
  std::vector<double> latencies;
  const auto every = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(snapshot_every_s * cfg.sampling_rate_hz)));
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < session.amplitudes.size(); ++i) {
    auto s = det.step(session.amplitudes[i]);
    if (s.detection) latencies.push_back(s.detection->decision_latency_ms);
    if (i % every == 0) {
      const auto snap = acct->snapshot();
      rep.snapshots.push_back({static_cast<double>(i) / cfg.sampling_rate_hz, snap.live_bytes,
                               snap.high_water_bytes, det.buffer().size()});
    }
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.stream_seconds = static_cast<double>(session.amplitudes.size()) / cfg.sampling_rate_hz;
  rep.realtime_factor = rep.wall_seconds > 0 ? rep.stream_seconds / rep.wall_seconds : 0.0;
  rep.high_water_bytes = acct->high_water_bytes();
  rep.detections = latencies.size();
  if (!latencies.empty()) {
    double sum = 0;
    for (double v : latencies) sum += v;
    rep.mean_detect_ms = sum / static_cast<double>(latencies.size());
    std::sort(latencies.begin(), latencies.end());
    rep.max_detect_ms = latencies.back();
    const auto k = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(latencies.size()))) - 1;
    rep.p99_detect_ms = latencies[std::min(k, latencies.size() - 1)];
  }
  return rep;
}

inline std::string format_bench_csv(const BenchReport& b) {
  using detail::format_double;
  std::string out = "metric,value\n";
  out += "mean_detect_ms," + format_double(b.mean_detect_ms) + '\n';
  out += "p99_detect_ms," + format_double(b.p99_detect_ms) + '\n';
  out += "high_water_bytes," + std::to_string(b.high_water_bytes) + '\n';
  out += "realtime_factor," + format_double(b.realtime_factor) + '\n';
  return out;
}

inline std::string format_snapshots_csv(const BenchReport& b) {
  std::string out = "t_s,live_bytes,high_water_bytes,waves_stored\n";
  for (const auto& s : b.snapshots)
    out += detail::format_double(s.t_s) + ',' + std::to_string(s.live_bytes) + ',' +
           std::to_string(s.high_water_bytes) + ',' + std::to_string(s.waves_stored) + '\n';
  return out;
}

}  // namespace pbdetect
