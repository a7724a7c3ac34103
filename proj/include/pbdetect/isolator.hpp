#pragma once

#include <cstdint>
#include <string_view>
#include <variant>
#include <vector>

#include "pbdetect/memstore.hpp"
#include "pbdetect/signal_model.hpp"

namespace pbdetect {

enum class IsolatorStateId : std::uint8_t {
  s0_baseline,
  s1_nhc,
  s2_ihc,
  s3_phc,
  s4_tail,
};

enum class RejectReason : std::uint8_t {
  positive_first,
  sequence_violation,
  ihc_timeout,
  tail_disturbed,
  too_long,
};

inline std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::positive_first: return "POSITIVE_FIRST";
    case RejectReason::sequence_violation: return "SEQUENCE_VIOLATION";
    case RejectReason::ihc_timeout: return "IHC_TIMEOUT";
    case RejectReason::tail_disturbed: return "TAIL_DISTURBED";
    case RejectReason::too_long: return "TOO_LONG";
  }
  return "?";
}

inline std::string_view to_string(IsolatorStateId s) {
  switch (s) {
    case IsolatorStateId::s0_baseline: return "S0";
    case IsolatorStateId::s1_nhc: return "S1_NHC";
    case IsolatorStateId::s2_ihc: return "S2_IHC";
    case IsolatorStateId::s3_phc: return "S3_PHC";
    case IsolatorStateId::s4_tail: return "S4_TAIL";
  }
  return "?";
}

/// One candidate eye movement in the r domain: from its first (negative)
/// sample through the last positive sample of its PHC. Indices are inclusive
/// positions in the source stream.
struct Wavelet {
  std::vector<double> samples;
  std::size_t start_index = 0;
  std::size_t end_index = 0;
  double sampling_rate_hz = 250.0;

  std::size_t size() const { return samples.size(); }

  friend bool operator==(const Wavelet&, const Wavelet&) = default;
};

/// Throws MalformedWaveletError unless `w` starts negative, contains a
/// positive sample, ends on a nonzero sample, and its span matches its length.
inline void check_wavelet(const Wavelet& w) {
  if (w.samples.empty()) throw MalformedWaveletError("wavelet is empty");
  if (!(w.samples.front() < 0)) throw MalformedWaveletError("wavelet must start negative");
  if (w.samples.back() == 0) throw MalformedWaveletError("wavelet must end on a nonzero sample");
  bool has_positive = false;
  for (double v : w.samples) has_positive |= v > 0;
  if (!has_positive) throw MalformedWaveletError("wavelet has no positive half cycle");
  if (w.end_index < w.start_index || w.end_index - w.start_index + 1 != w.samples.size())
    throw MalformedWaveletError("wavelet span does not match its length");
  if (!(w.sampling_rate_hz > 0)) throw MalformedWaveletError("wavelet sampling rate must be > 0");
}

struct Rejection {
  RejectReason reason;
  std::size_t start_index;  // first sample of the rejected excursion
};

/// Result of one isolator step. `index` is the stream position of the sample
/// that produced it.
struct IsolatorEvent {
  std::size_t index = 0;
  std::variant<std::monostate, Rejection, Wavelet> payload;

  bool is_none() const { return std::holds_alternative<std::monostate>(payload); }
  bool is_rejected() const { return std::holds_alternative<Rejection>(payload); }
  bool is_candidate() const { return std::holds_alternative<Wavelet>(payload); }
  const Rejection& rejection() const { return std::get<Rejection>(payload); }
  const Wavelet& wavelet() const { return std::get<Wavelet>(payload); }
};

/// State 0-4 machine isolating NHC -> IHC -> PHC -> quiet-tail waveforms
/// from the r stream.
///
/// Transitions on the sign of r (exact zeros are meaningful: the difference
/// stage clamps sub-clearance values to literal 0):
///   S0: r<0 -> S1 | r>0 -> Rejected(POSITIVE_FIRST)
///   S1: r<0 stay  | r=0 -> S2 | r>0 -> S3 (no IHC)
///   S2: r=0 stay up to ihc_max_samples, then Rejected(IHC_TIMEOUT)
///       r>0 -> S3 | r<0 -> Rejected(SEQUENCE_VIOLATION)
///   S3: r>0 stay  | r=0 -> S4 | r<0 -> Rejected(SEQUENCE_VIOLATION)
///   S4: r=0 dwell; after hold_samples -> Candidate | r!=0 -> Rejected(TAIL_DISTURBED)
/// Exceeding max_wavelet_samples in capture -> Rejected(TOO_LONG).
///
/// After a rejection the machine is in S0. A new capture only starts on a
/// negative sample that follows a zero, so the remainder of a rejected
/// excursion is discarded silently rather than being re-read as a new wave.
class Isolator {
public:
  explicit Isolator(const PipelineConfig& cfg, BudgetAccountant* accountant = nullptr)
      : fs_(cfg.sampling_rate_hz),
        hold_samples_(cfg.hold_samples()),
        ihc_max_samples_(cfg.ihc_max_samples()),
        capture_(static_cast<std::size_t>(cfg.hat_leaf_len), cfg.max_wavelet_samples(),
                 cfg.bytes_per_sample, accountant, "capture") {}

  IsolatorEvent step(double r) {
    const std::size_t n = index_++;
    IsolatorEvent ev{n, std::monostate{}};
    const bool prev_zero = prev_zero_;
    prev_zero_ = r == 0.0;

    switch (state_) {
      case IsolatorStateId::s0_baseline:
        if (r < 0) {
          if (prev_zero) begin_capture(n, r);
        } else if (r > 0 && prev_zero) {
          ev.payload = Rejection{RejectReason::positive_first, n};
        }
        return ev;

      case IsolatorStateId::s1_nhc:
        if (r > 0) {
          state_ = IsolatorStateId::s3_phc;
        } else if (r == 0) {
          state_ = IsolatorStateId::s2_ihc;
          ihc_samples_ = 1;
        }
        return capture(ev, r);

      case IsolatorStateId::s2_ihc:
        if (r < 0) return reject(ev, RejectReason::sequence_violation, r, prev_zero);
        if (r > 0) {
          state_ = IsolatorStateId::s3_phc;
        } else if (++ihc_samples_ > ihc_max_samples_) {
          return reject(ev, RejectReason::ihc_timeout, r, prev_zero);
        }
        return capture(ev, r);

      case IsolatorStateId::s3_phc:
        if (r < 0) return reject(ev, RejectReason::sequence_violation, r, prev_zero);
        if (r > 0) return capture(ev, r);
        state_ = IsolatorStateId::s4_tail;
        phc_end_ = capture_.size();
        dwell_ = 0;
        [[fallthrough]];

      case IsolatorStateId::s4_tail:
        if (r != 0) return reject(ev, RejectReason::tail_disturbed, r, prev_zero);
        ev = capture(ev, r);
        if (ev.is_rejected()) return ev;
        return dwell(ev);
    }
    return ev;
  }

  void reset() {
    state_ = IsolatorStateId::s0_baseline;
    capture_.clear();
    dwell_ = 0;
    ihc_samples_ = 0;
    prev_zero_ = true;
  }

  IsolatorStateId state() const { return state_; }
  std::size_t capture_size() const { return capture_.size(); }
  std::size_t dwell_samples() const { return state_ == IsolatorStateId::s4_tail ? dwell_ : 0; }
  std::size_t samples_seen() const { return index_; }
  std::size_t hold_samples() const { return hold_samples_; }

private:
  void begin_capture(std::size_t n, double r) {
    capture_.clear();
    capture_start_ = n;
    capture_.push_back(r);
    state_ = IsolatorStateId::s1_nhc;
  }

  IsolatorEvent capture(IsolatorEvent& ev, double r) {
    if (!capture_.push_back(r)) return reject(ev, RejectReason::too_long, r, false);
    return ev;
  }

  IsolatorEvent dwell(IsolatorEvent& ev) {
    if (++dwell_ < hold_samples_) return ev;
    Wavelet w;
    w.samples = capture_.to_vector(phc_end_);
    w.start_index = capture_start_;
    w.end_index = capture_start_ + phc_end_ - 1;
    w.sampling_rate_hz = fs_;
    ev.payload = std::move(w);
    capture_.clear();
    state_ = IsolatorStateId::s0_baseline;
    dwell_ = 0;
    return ev;
  }

  /// Rejects the capture in progress. A negative offending sample that
  /// follows a zero opens a fresh capture; any other nonzero sample leaves
  /// the machine discarding until the next zero.
  IsolatorEvent reject(IsolatorEvent& ev, RejectReason reason, double r, bool prev_zero) {
    ev.payload = Rejection{reason, capture_start_};
    capture_.clear();
    state_ = IsolatorStateId::s0_baseline;
    dwell_ = 0;
    ihc_samples_ = 0;
    if (r < 0 && prev_zero) begin_capture(ev.index, r);
    return ev;
  }

  double fs_;
  std::size_t hold_samples_;
  std::size_t ihc_max_samples_;
  HatVector<double> capture_;
  IsolatorStateId state_ = IsolatorStateId::s0_baseline;
  std::size_t capture_start_ = 0;
  std::size_t phc_end_ = 0;
  std::size_t dwell_ = 0;
  std::size_t ihc_samples_ = 0;
  std::size_t index_ = 0;
  bool prev_zero_ = true;
};

/// Runs a whole r sequence, returning every non-None event.
inline std::vector<IsolatorEvent> isolate(std::span<const double> r, const PipelineConfig& cfg) {
  Isolator iso(cfg);
  std::vector<IsolatorEvent> out;
  for (double v : r) {
    auto ev = iso.step(v);
    if (!ev.is_none()) out.push_back(std::move(ev));
  }
  return out;
}

}  // namespace pbdetect
