#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pbdetect/detail/text.hpp"
#include "pbdetect/error.hpp"
#include "pbdetect/strictmode.hpp"

namespace pbdetect {

enum class SimilarityBackend { ncc_max, ddtw_sakoe_chiba };

inline std::string_view to_string(SimilarityBackend b) {
  return b == SimilarityBackend::ncc_max ? "ncc_max" : "ddtw_sakoe_chiba";
}

inline SimilarityBackend parse_backend(std::string_view s) {
  if (s == "ncc_max" || s == "ncc") return SimilarityBackend::ncc_max;
  if (s == "ddtw_sakoe_chiba" || s == "ddtw") return SimilarityBackend::ddtw_sakoe_chiba;
  throw ConfigError("unknown similarity backend '" + std::string(s) + "'");
}

/// Which values feed the moving-average mean: the raw input samples, or the
/// filter's own previous outputs.
enum class SmoothingHistory { raw, smoothed };

inline std::string_view to_string(SmoothingHistory h) {
  return h == SmoothingHistory::raw ? "raw" : "smoothed";
}

inline SmoothingHistory parse_smoothing_history(std::string_view s) {
  if (s == "raw") return SmoothingHistory::raw;
  if (s == "smoothed") return SmoothingHistory::smoothed;
  throw ConfigError("unknown smoothing history '" + std::string(s) + "'");
}

/// Global pipeline parameters shared by every stage.
struct PipelineConfig {
  // acquisition
  double sampling_rate_hz = 250.0;
  int adc_bits = 12;
  double full_scale_min = -1.0;
  double full_scale_max = 1.0;
  bool invert_signal = false;

  // pre-processing
  double r_thresh = 1.0;
  double fod_clearance_threshold = 0.1;
  int window_n = 25;
  SmoothingHistory smoothing_history = SmoothingHistory::raw;

  // state machine
  double state4_hold_ms = 200.0;
  double ihc_max_ms = 500.0;
  double max_wavelet_s = 4.0;

  // learning / classification
  int pb_training_reps = 10;
  int up_training_reps = 10;
  int total_features = 6;
  double pass_ratio = 0.6;
  SimilarityBackend similarity_backend = SimilarityBackend::ncc_max;
  int sakoe_chiba_band = 50;
  bool integer_ncc = false;
  FormulaSettings formula{};

  // drowsiness episodes
  int episode_min_pbs = 2;
  double episode_window_s = 10.0;

  // emulated memory
  long memory_budget_bytes = 32768;
  long reserved_bytes = 20480;
  int bytes_per_sample = 2;
  int hat_leaf_len = 100;
  int wavelet_buffer_capacity = 16;
  bool eviction_enabled = true;
  bool retain_detected_pbs = false;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;

  /// Samples in the State-4 confirmation dwell.
  std::size_t hold_samples() const { return ms_to_samples(state4_hold_ms); }
  std::size_t ihc_max_samples() const { return ms_to_samples(ihc_max_ms); }
  std::size_t max_wavelet_samples() const {
    return ms_to_samples(max_wavelet_s * 1000.0);
  }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw ConfigError(std::string("invalid config: ") + what);
    };
    require(sampling_rate_hz > 0 && std::isfinite(sampling_rate_hz), "sampling_rate_hz must be > 0");
    require(adc_bits >= 1 && adc_bits <= 24, "adc_bits must be in [1, 24]");
    require(full_scale_min < full_scale_max, "full_scale_min must be < full_scale_max");
    require(r_thresh >= 0, "r_thresh must be >= 0");
    require(fod_clearance_threshold >= 0, "fod_clearance_threshold must be >= 0");
    require(window_n >= 1, "window_n must be >= 1");
    require(state4_hold_ms > 0, "state4_hold_ms must be > 0");
    require(ihc_max_ms > 0, "ihc_max_ms must be > 0");
    require(max_wavelet_s > 0, "max_wavelet_s must be > 0");
    require(pb_training_reps >= 2, "pb_training_reps must be >= 2");
    require(up_training_reps >= 2, "up_training_reps must be >= 2");
    require(total_features >= 1 && total_features <= 6, "total_features must be in [1, 6]");
    require(pass_ratio >= 0 && pass_ratio <= 1, "pass_ratio must be in [0, 1]");
    require(sakoe_chiba_band >= 1, "sakoe_chiba_band must be >= 1");
    require(episode_min_pbs >= 1, "episode_min_pbs must be >= 1");
    require(episode_window_s > 0, "episode_window_s must be > 0");
    require(memory_budget_bytes > 0, "memory_budget_bytes must be > 0");
    require(reserved_bytes >= 0 && reserved_bytes < memory_budget_bytes,
            "reserved_bytes must be in [0, memory_budget_bytes)");
    require(bytes_per_sample >= 1, "bytes_per_sample must be >= 1");
    require(hat_leaf_len >= 1, "hat_leaf_len must be >= 1");
    require(wavelet_buffer_capacity >= 1, "wavelet_buffer_capacity must be >= 1");
  }

  /// Calls `f(name, field)` for every serialized field, in file order.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("sampling_rate_hz", self.sampling_rate_hz);
    f("adc_bits", self.adc_bits);
    f("full_scale_min", self.full_scale_min);
    f("full_scale_max", self.full_scale_max);
    f("invert_signal", self.invert_signal);
    f("r_thresh", self.r_thresh);
    f("fod_clearance_threshold", self.fod_clearance_threshold);
    f("window_n", self.window_n);
    f("smoothing_history", self.smoothing_history);
    f("state4_hold_ms", self.state4_hold_ms);
    f("ihc_max_ms", self.ihc_max_ms);
    f("max_wavelet_s", self.max_wavelet_s);
    f("pb_training_reps", self.pb_training_reps);
    f("up_training_reps", self.up_training_reps);
    f("total_features", self.total_features);
    f("pass_ratio", self.pass_ratio);
    f("similarity_backend", self.similarity_backend);
    f("sakoe_chiba_band", self.sakoe_chiba_band);
    f("integer_ncc", self.integer_ncc);
    f("formula_mode", self.formula.mode);
    f("sd_sqrt", self.formula.sd_sqrt);
    f("gaussian_square", self.formula.gaussian_square);
    f("fod_abs", self.formula.fod_abs);
    f("episode_min_pbs", self.episode_min_pbs);
    f("episode_window_s", self.episode_window_s);
    f("memory_budget_bytes", self.memory_budget_bytes);
    f("reserved_bytes", self.reserved_bytes);
    f("bytes_per_sample", self.bytes_per_sample);
    f("hat_leaf_len", self.hat_leaf_len);
    f("wavelet_buffer_capacity", self.wavelet_buffer_capacity);
    f("eviction_enabled", self.eviction_enabled);
    f("retain_detected_pbs", self.retain_detected_pbs);
  }

private:
  std::size_t ms_to_samples(double ms) const {
    // The small slack keeps exact products such as 0.2 * 250 from rounding up.
    return static_cast<std::size_t>(std::ceil(ms * sampling_rate_hz / 1000.0 - 1e-9));
  }
};

namespace detail {

inline std::string field_to_text(double v) { return format_double(v); }
inline std::string field_to_text(int v) { return std::to_string(v); }
inline std::string field_to_text(long v) { return std::to_string(v); }
inline std::string field_to_text(bool v) { return v ? "true" : "false"; }
inline std::string field_to_text(SimilarityBackend v) { return std::string(to_string(v)); }
inline std::string field_to_text(SmoothingHistory v) { return std::string(to_string(v)); }
inline std::string field_to_text(FormulaMode v) { return std::string(to_string(v)); }

inline void field_from_text(std::string_view s, double& out) {
  auto v = parse_double(s);
  if (!v) throw ConfigError("expected a number, got '" + std::string(s) + "'");
  out = *v;
}
inline void field_from_text(std::string_view s, int& out) {
  auto v = parse_int<int>(s);
  if (!v) throw ConfigError("expected an integer, got '" + std::string(s) + "'");
  out = *v;
}
inline void field_from_text(std::string_view s, long& out) {
  auto v = parse_int<long>(s);
  if (!v) throw ConfigError("expected an integer, got '" + std::string(s) + "'");
  out = *v;
}
inline void field_from_text(std::string_view s, bool& out) {
  auto v = parse_bool(s);
  if (!v) throw ConfigError("expected a boolean, got '" + std::string(s) + "'");
  out = *v;
}
inline void field_from_text(std::string_view s, SimilarityBackend& out) { out = parse_backend(s); }
inline void field_from_text(std::string_view s, SmoothingHistory& out) {
  out = parse_smoothing_history(s);
}
inline void field_from_text(std::string_view s, FormulaMode& out) { out = parse_formula_mode(s); }

}  // namespace detail

/// Writes every config field as `key = value`.
inline std::string format_config(const PipelineConfig& cfg) {
  std::string out;
  PipelineConfig::visit(cfg, [&](const char* name, const auto& field) {
    out += name;
    out += " = ";
    out += detail::field_to_text(field);
    out += '\n';
  });
  return out;
}

/// Applies parsed key-values on top of `base`. `formula_mode` is applied
/// first so that explicit `sd_sqrt` / `gaussian_square` / `fod_abs` keys act
/// as overrides regardless of their position in the file.
inline PipelineConfig apply_key_values(const std::map<std::string, detail::KeyValue>& kv,
                                       PipelineConfig base = {}) {
  if (auto it = kv.find("formula_mode"); it != kv.end())
    base = apply_mode(base, parse_formula_mode(it->second.value));
  std::size_t consumed = 0;
  PipelineConfig::visit(base, [&](const char* name, auto& field) {
    auto it = kv.find(name);
    if (it == kv.end()) return;
    ++consumed;
    try {
      detail::field_from_text(it->second.value, field);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(name) + " (line " + std::to_string(it->second.line) +
                        "): " + e.what());
    }
  });
  if (consumed != kv.size()) {
    for (const auto& [key, value] : kv) {
      bool known = false;
      PipelineConfig::visit(base, [&](const char* name, auto&) { known |= key == name; });
      if (!known)
        throw ConfigError("unknown config key '" + key + "' at line " + std::to_string(value.line));
    }
  }
  base.validate();
  return base;
}

inline PipelineConfig parse_config(std::string_view text, PipelineConfig base = {}) {
  return apply_key_values(detail::parse_key_values(text), base);
}

inline PipelineConfig read_config(std::istream& in, PipelineConfig base = {}) {
  std::string text{std::istreambuf_iterator<char>(in), {}};
  return parse_config(text, base);
}

// ---------------------------------------------------------------------------
// Samples and traces

enum class MovementKind {
  prolonged_blink,
  upward_gaze,
  normal_blink,
  saccade_left,
  saccade_right,
  none_idle,
};

inline std::string_view to_string(MovementKind k) {
  switch (k) {
    case MovementKind::prolonged_blink: return "PROLONGED_BLINK";
    case MovementKind::upward_gaze: return "UPWARD_GAZE";
    case MovementKind::normal_blink: return "NORMAL_BLINK";
    case MovementKind::saccade_left: return "SACCADE_LEFT";
    case MovementKind::saccade_right: return "SACCADE_RIGHT";
    case MovementKind::none_idle: return "NONE_IDLE";
  }
  return "?";
}

inline MovementKind parse_movement_kind(std::string_view s) {
  for (auto k : {MovementKind::prolonged_blink, MovementKind::upward_gaze,
                 MovementKind::normal_blink, MovementKind::saccade_left,
                 MovementKind::saccade_right, MovementKind::none_idle})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown movement kind '" + std::string(s) + "'");
}

struct EogSample {
  std::size_t index = 0;
  double amplitude = 0.0;
};

/// Ground-truth span of one movement; `end` is inclusive.
struct Label {
  MovementKind kind = MovementKind::none_idle;
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const Label&, const Label&) = default;
};

/// A sample sequence with implied consecutive indices from 0, plus optional
/// ground-truth labels.
struct EogTrace {
  std::vector<double> amplitudes;
  std::vector<Label> labels;

  std::size_t size() const { return amplitudes.size(); }
  bool empty() const { return amplitudes.empty(); }
  EogSample sample(std::size_t i) const { return {i, amplitudes.at(i)}; }

  /// Labels must be ordered, disjoint, and inside the trace.
  void validate_labels() const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& l = labels[i];
      if (l.start > l.end || l.end >= amplitudes.size())
        throw ConfigError("label " + std::to_string(i) + " lies outside the trace");
      if (i > 0 && labels[i - 1].end >= l.start)
        throw ConfigError("labels " + std::to_string(i - 1) + " and " + std::to_string(i) +
                          " overlap or are out of order");
    }
  }
};

/// Snaps `amplitude` to the nearest level of spacing (hi - lo) / 2^adc_bits
/// over [lo, hi], clamping out-of-range values to the ends.
inline double quantize(double amplitude, int adc_bits, double lo, double hi) {
  if (adc_bits < 1 || adc_bits > 52) throw ConfigError("adc_bits must be in [1, 52]");
  if (!(lo < hi)) throw ConfigError("quantizer range is empty or inverted");
  // Levels lo + k * (hi - lo) / 2^bits for k in [0, 2^bits]: both range ends
  // are levels, and a symmetric range maps 0 to a level exactly.
  const double codes = std::ldexp(1.0, adc_bits);
  const double step = (hi - lo) / codes;
  double level = std::nearbyint((amplitude - lo) / step);
  if (std::isnan(level)) level = 0;
  if (level < 0) level = 0;
  if (level >= codes) return hi;
  return lo + level * step;
}

inline double quantize(double amplitude, const PipelineConfig& cfg) {
  return quantize(amplitude, cfg.adc_bits, cfg.full_scale_min, cfg.full_scale_max);
}

enum class TraceFormat { csv, raw_f32 };

inline TraceFormat parse_trace_format(std::string_view s) {
  if (s == "csv") return TraceFormat::csv;
  if (s == "raw_f32" || s == "f32") return TraceFormat::raw_f32;
  throw ConfigError("unknown trace format '" + std::string(s) + "'");
}

namespace detail {

inline EogTrace parse_trace_csv(std::string_view text) {
  if (trim(text).empty()) throw EmptyTraceError("trace stream is empty");
  EogTrace trace;
  std::size_t line_no = 0;
  bool header_seen = false;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (trim(line) != "index,amplitude")
        throw ParseError("line 1: expected header 'index,amplitude'", line_no);
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 2)
      throw ParseError("line " + std::to_string(line_no) + ": expected 2 columns", line_no);
    const auto index = parse_int<std::size_t>(cols[0]);
    const auto amp = parse_double(cols[1]);
    if (!index || !amp)
      throw ParseError("line " + std::to_string(line_no) + ": malformed number", line_no);
    if (*index != trace.amplitudes.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected index " +
                           std::to_string(trace.amplitudes.size()) + ", got " +
                           std::to_string(*index),
                       line_no);
    trace.amplitudes.push_back(*amp);
  }
  if (!header_seen) throw EmptyTraceError("trace stream is empty");
  if (trace.amplitudes.empty()) throw EmptyTraceError("trace has no samples");
  return trace;
}

inline EogTrace parse_trace_f32(std::string_view bytes) {
  if (bytes.empty()) throw EmptyTraceError("trace stream is empty");
  if (bytes.size() % 4 != 0)
    throw ParseError("raw f32 stream truncated at byte offset " +
                         std::to_string(bytes.size() - bytes.size() % 4),
                     bytes.size() - bytes.size() % 4);
  EogTrace trace;
  trace.amplitudes.reserve(bytes.size() / 4);
  for (std::size_t off = 0; off < bytes.size(); off += 4) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b)
      bits = (bits << 8) | static_cast<unsigned char>(bytes[off + static_cast<std::size_t>(b)]);
    trace.amplitudes.push_back(static_cast<double>(std::bit_cast<float>(bits)));
  }
  return trace;
}

}  // namespace detail

/// Reads a whole trace. Malformed rows are rejected with their location,
/// never skipped.
inline EogTrace load_trace(std::istream& in, TraceFormat format) {
  std::string bytes{std::istreambuf_iterator<char>(in), {}};
  return format == TraceFormat::csv ? detail::parse_trace_csv(bytes)
                                    : detail::parse_trace_f32(bytes);
}

inline void save_trace(std::ostream& out, const EogTrace& trace, TraceFormat format) {
  if (format == TraceFormat::csv) {
    out << "index,amplitude\n";
    for (std::size_t i = 0; i < trace.amplitudes.size(); ++i)
      out << i << ',' << detail::format_double(trace.amplitudes[i]) << '\n';
    return;
  }
  for (double v : trace.amplitudes) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    const char le[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                        static_cast<char>((bits >> 16) & 0xff),
                        static_cast<char>((bits >> 24) & 0xff)};
    out.write(le, 4);
  }
}

/// Labels CSV: header `kind,start_idx,end_idx`.
inline void save_labels(std::ostream& out, const std::vector<Label>& labels) {
  out << "kind,start_idx,end_idx\n";
  for (const auto& l : labels) out << to_string(l.kind) << ',' << l.start << ',' << l.end << '\n';
}

inline std::vector<Label> load_labels(std::istream& in) {
  std::string text{std::istreambuf_iterator<char>(in), {}};
  std::vector<Label> labels;
  std::size_t line_no = 0;
  for (auto line : detail::split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1) {
      if (detail::trim(line) != "kind,start_idx,end_idx")
        throw ParseError("line 1: expected header 'kind,start_idx,end_idx'", 1);
      continue;
    }
    if (line.empty()) continue;
    const auto cols = detail::split(line, ',');
    if (cols.size() != 3)
      throw ParseError("line " + std::to_string(line_no) + ": expected 3 columns", line_no);
    const auto start = detail::parse_int<std::size_t>(cols[1]);
    const auto end = detail::parse_int<std::size_t>(cols[2]);
    if (!start || !end)
      throw ParseError("line " + std::to_string(line_no) + ": malformed index", line_no);
    try {
      labels.push_back({parse_movement_kind(detail::trim(cols[0])), *start, *end});
    } catch (const ConfigError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return labels;
}

}  // namespace pbdetect
