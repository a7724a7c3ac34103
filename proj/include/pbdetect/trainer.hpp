#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <istream>
#include <iterator>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pbdetect/detail/base64.hpp"
#include "pbdetect/detail/text.hpp"
#include "pbdetect/features.hpp"
#include "pbdetect/isolator.hpp"
#include "pbdetect/preprocess.hpp"
#include "pbdetect/signal_model.hpp"

namespace pbdetect {

// ---------------------------------------------------------------------------
// Running statistics

/// Per-feature running mean and squared-deviation accumulator:
///   mean(N) = (mean(N-1) * (N-1) + value(N)) / N
///   acc(N)  = acc(N-1) + (value(N) - mean(N))^2
/// Note the accumulator uses the already-updated mean.
struct RunningStats {
  std::size_t count = 0;
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> acc{};

  friend bool operator==(const RunningStats&, const RunningStats&) = default;

  /// sqrt(acc / N), or the printed acc / N when `sd_sqrt` is false.
  double sd(std::size_t feature, bool sd_sqrt = true) const {
    if (count == 0) return 0.0;
    const double v = acc[feature] / static_cast<double>(count);
    return sd_sqrt ? std::sqrt(v) : v;
  }
};

/// Returns `s` updated with one observation. Non-finite values are rejected
/// and leave the statistics untouched.
inline RunningStats stats_update(RunningStats s, const FeatureVector& v) {
  const auto values = v.values();
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (!std::isfinite(values[i]))
      throw DomainError("non-finite value for feature '" + std::string(kFeatureNames[i]) + "'");
  ++s.count;
  const auto n = static_cast<double>(s.count);
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    s.mean[i] = (s.mean[i] * (n - 1.0) + values[i]) / n;
    const double dev = values[i] - s.mean[i];
    s.acc[i] += dev * dev;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Thresholds

struct FeatureBand {
  double lt = 0, ut = 0;    // PB band
  double lat = 0, uat = 0;  // upward-gaze band
  bool merged_lower = false;  // lt moved to the midpoint of the overlap
  bool merged_upper = false;  // ut moved to the midpoint of the overlap

  friend bool operator==(const FeatureBand&, const FeatureBand&) = default;
};

struct ThresholdSet {
  std::array<FeatureBand, kFeatureCount> bands{};

  friend bool operator==(const ThresholdSet&, const ThresholdSet&) = default;
};

/// Applies the overlap corrections to one band in place:
///   ut > uat > lt > lat  ->  lt = (lt + uat) / 2
///   uat > ut > lat > lt  ->  ut = (ut + lat) / 2
/// Any other arrangement (disjoint, contained, identical) is left alone.
/// The midpoint still satisfies its own condition, so each correction is
/// applied at most once per band, tracked by its merged flag.
inline void merge_band(FeatureBand& b) {
  const FeatureBand pre = b;
  if (!pre.merged_lower && pre.ut > pre.uat && pre.uat > pre.lt && pre.lt > pre.lat) {
    b.lt = (pre.lt + pre.uat) / 2.0;
    b.merged_lower = true;
  }
  if (!pre.merged_upper && pre.uat > pre.ut && pre.ut > pre.lat && pre.lat > pre.lt) {
    b.ut = (pre.ut + pre.lat) / 2.0;
    b.merged_upper = true;
  }
}

/// Bands at mean +/- 1.5 SD for PB and anti statistics, then merge
/// correction. Throws TrainingError naming the first feature whose band
/// is empty after merging.
inline ThresholdSet compute_thresholds(const RunningStats& pb, const RunningStats& anti,
                                       const FormulaSettings& formula = {}) {
  if (pb.count < 2 || anti.count < 2)
    throw TrainingError("thresholds need at least 2 observations per phase (have " +
                        std::to_string(pb.count) + " PB, " + std::to_string(anti.count) + " up)");
  ThresholdSet t;
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    auto& b = t.bands[i];
    const double sd = pb.sd(i, formula.sd_sqrt);
    const double anti_sd = anti.sd(i, formula.sd_sqrt);
    b.lt = pb.mean[i] - 1.5 * sd;
    b.ut = pb.mean[i] + 1.5 * sd;
    b.lat = anti.mean[i] - 1.5 * anti_sd;
    b.uat = anti.mean[i] + 1.5 * anti_sd;
    merge_band(b);
    if (!(b.lt < b.ut))
      throw TrainingError("degenerate threshold band for feature '" +
                          std::string(kFeatureNames[i]) + "' (lt >= ut)");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Model

struct Provenance {
  std::string created;
  std::size_t pb_reps = 0;
  std::size_t up_reps = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct TrainedModel {
  PipelineConfig config;
  ThresholdSet thresholds;
  std::vector<Wavelet> buffer;
  RunningStats pb_stats;
  RunningStats anti_stats;
  Provenance provenance;

  friend bool operator==(const TrainedModel&, const TrainedModel&) = default;

  void validate() const {
    if (buffer.empty()) throw TrainingError("model has an empty wavelet buffer");
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      const auto& b = thresholds.bands[i];
      if (!std::isfinite(b.lt) || !std::isfinite(b.ut) || !(b.lt < b.ut))
        throw TrainingError("model threshold for '" + std::string(kFeatureNames[i]) +
                            "' is not a finite non-empty band");
    }
  }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Learning period

enum class LearningPhase { prolonged_blinks, upward_gazes };

/// Accumulates the two-phase learning period. PB observations are scored
/// against the buffer as it stands and then appended to it; upward-gaze
/// observations are scored against the buffer as frozen at the end of the
/// PB phase and never stored.
class Trainer {
public:
  explicit Trainer(const PipelineConfig& cfg, BudgetAccountant* accountant = nullptr)
      : cfg_(cfg), buffer_(cfg, accountant) {
    cfg.validate();
  }

  FeatureVector observe(LearningPhase phase, const Wavelet& w) {
    if (phase == LearningPhase::prolonged_blinks) {
      if (anti_.count > 0)
        throw TrainingError("PB observation after the upward-gaze phase began");
      const auto f = extract_features(w, buffer_, cfg_);
      pb_ = stats_update(pb_, f);
      buffer_.append(w);
      ++total_readings_;
      return f;
    }
    if (pb_.count == 0) throw TrainingError("upward-gaze observation before any PB");
    const auto f = extract_features(w, buffer_, cfg_);
    anti_ = stats_update(anti_, f);
    return f;
  }

  std::size_t pb_count() const { return pb_.count; }
  std::size_t up_count() const { return anti_.count; }
  std::size_t total_readings() const { return total_readings_; }
  const RunningStats& pb_stats() const { return pb_; }
  const RunningStats& anti_stats() const { return anti_; }
  const WaveletBuffer& buffer() const { return buffer_; }

  TrainedModel finish(std::string created = utc_timestamp()) const {
    if (pb_.count < static_cast<std::size_t>(cfg_.pb_training_reps) ||
        anti_.count < static_cast<std::size_t>(cfg_.up_training_reps))
      throw TrainingError("incomplete training: " + std::to_string(pb_.count) + "/" +
                          std::to_string(cfg_.pb_training_reps) + " PBs, " +
                          std::to_string(anti_.count) + "/" +
                          std::to_string(cfg_.up_training_reps) + " upward gazes");
    TrainedModel m;
    m.config = cfg_;
    m.thresholds = compute_thresholds(pb_, anti_, cfg_.formula);
    m.buffer = buffer_.snapshot();
    m.pb_stats = pb_;
    m.anti_stats = anti_;
    m.provenance = {std::move(created), pb_.count, anti_.count};
    m.validate();
    return m;
  }

private:
  PipelineConfig cfg_;
  WaveletBuffer buffer_;
  RunningStats pb_;
  RunningStats anti_;
  std::size_t total_readings_ = 0;
};

struct LearningEvent {
  LearningPhase phase;
  IsolatorEvent event;
};

/// Consumes an isolator event stream tagged by phase. The first
/// pb_training_reps candidates of phase 1 and the first up_training_reps of
/// phase 2 are used; rejections and surplus candidates are ignored.
inline TrainedModel run_learning(std::span<const LearningEvent> session, const PipelineConfig& cfg,
                                 std::string created = utc_timestamp()) {
  Trainer trainer(cfg);
  for (const auto& le : session) {
    if (!le.event.is_candidate()) continue;
    if (le.phase == LearningPhase::prolonged_blinks) {
      if (trainer.pb_count() < static_cast<std::size_t>(cfg.pb_training_reps))
        trainer.observe(le.phase, le.event.wavelet());
    } else if (trainer.pb_count() >= static_cast<std::size_t>(cfg.pb_training_reps) &&
               trainer.up_count() < static_cast<std::size_t>(cfg.up_training_reps)) {
      trainer.observe(le.phase, le.event.wavelet());
    }
  }
  return trainer.finish(std::move(created));
}

/// Isolator events produced by a raw trace at `cfg`.
inline std::vector<IsolatorEvent> isolate_trace(const EogTrace& trace, const PipelineConfig& cfg) {
  return isolate(preprocess(trace.amplitudes, cfg), cfg);
}

/// Learning period from one PB-phase trace and one upward-gaze-phase trace.
inline TrainedModel train_from_traces(const EogTrace& pb_trace, const EogTrace& up_trace,
                                      const PipelineConfig& cfg,
                                      std::string created = utc_timestamp()) {
  std::vector<LearningEvent> session;
  for (auto& ev : isolate_trace(pb_trace, cfg))
    session.push_back({LearningPhase::prolonged_blinks, std::move(ev)});
  for (auto& ev : isolate_trace(up_trace, cfg))
    session.push_back({LearningPhase::upward_gazes, std::move(ev)});
  return run_learning(session, cfg, std::move(created));
}

// ---------------------------------------------------------------------------
// Model file

namespace detail {

inline constexpr std::string_view kModelHeader = "pbdetect-model v1";

inline std::string encode_samples(const std::vector<double>& samples) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(samples.size() * 8);
  for (double v : samples) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return base64_encode(bytes);
}

inline std::vector<double> decode_samples(std::string_view text) {
  const auto bytes = base64_decode(text);
  if (!bytes || bytes->size() % 8 != 0) throw ModelFormatError("corrupt wavelet sample block");
  std::vector<double> out(bytes->size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | (*bytes)[i * 8 + static_cast<std::size_t>(b)];
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

inline std::string join_doubles(std::span<const double> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_double(v[i]);
  }
  return out;
}

inline std::vector<double> split_doubles(std::string_view s, std::size_t expected) {
  std::vector<double> out;
  for (auto tok : split(trim(s), ' ')) {
    if (tok.empty()) continue;
    auto v = parse_double(tok);
    if (!v) throw ModelFormatError("malformed number '" + std::string(tok) + "'");
    out.push_back(*v);
  }
  if (out.size() != expected)
    throw ModelFormatError("expected " + std::to_string(expected) + " numbers, got " +
                           std::to_string(out.size()));
  return out;
}

inline std::uint32_t crc32_of(std::string_view s) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

inline std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

}  // namespace detail

/// Serializes `m` as versioned text. Numbers use shortest round-trip decimal
/// and wavelet samples are base64 of little-endian IEEE-754 doubles, so a
/// load of the output reproduces every numeric field bit for bit. The final
/// line carries a CRC-32 of everything before it.
inline std::string format_model(const TrainedModel& m) {
  using detail::format_double;
  std::string body;
  body += detail::kModelHeader;
  body += '\n';
  body += "[config]\n";
  body += format_config(m.config);
  body += "[provenance]\n";
  body += "created = " + m.provenance.created + '\n';
  body += "pb_reps = " + std::to_string(m.provenance.pb_reps) + '\n';
  body += "up_reps = " + std::to_string(m.provenance.up_reps) + '\n';
  body += "[stats]\n";
  for (const auto& [name, s] : {std::pair{"pb", &m.pb_stats}, std::pair{"anti", &m.anti_stats}}) {
    body += std::string(name) + ".count = " + std::to_string(s->count) + '\n';
    body += std::string(name) + ".mean = " + detail::join_doubles(s->mean) + '\n';
    body += std::string(name) + ".acc = " + detail::join_doubles(s->acc) + '\n';
  }
  body += "[thresholds]\n";
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const auto& b = m.thresholds.bands[i];
    body += std::string(kFeatureNames[i]) + " = " + format_double(b.lt) + ' ' + format_double(b.ut) +
            ' ' + format_double(b.lat) + ' ' + format_double(b.uat) + ' ' +
            (b.merged_lower ? '1' : '0') + ' ' + (b.merged_upper ? '1' : '0') + '\n';
  }
  body += "[buffer]\n";
  body += "count = " + std::to_string(m.buffer.size()) + '\n';
  for (const auto& w : m.buffer)
    body += "wave = " + std::to_string(w.start_index) + ' ' + std::to_string(w.end_index) + ' ' +
            format_double(w.sampling_rate_hz) + ' ' + detail::encode_samples(w.samples) + '\n';
  return body + "checksum = " + detail::hex32(detail::crc32_of(body)) + '\n';
}

inline void save_model(std::ostream& out, const TrainedModel& m) { out << format_model(m); }

inline TrainedModel parse_model(std::string_view text) {
  using namespace detail;
  // Integrity first: nothing is interpreted from a file that fails its CRC.
  if (text.empty()) throw ModelFormatError("model file is empty");
  std::string_view trimmed = text;
  if (trimmed.back() == '\n') trimmed.remove_suffix(1);
  const auto last_nl = trimmed.rfind('\n');
  if (last_nl == std::string_view::npos) throw ModelFormatError("model file truncated");
  const auto body = text.substr(0, last_nl + 1);
  const auto checksum_line = trim(trimmed.substr(last_nl + 1));
  constexpr std::string_view prefix = "checksum = ";
  if (checksum_line.substr(0, prefix.size()) != prefix)
    throw ModelFormatError("model file truncated: checksum line missing");
  if (trim(checksum_line.substr(prefix.size())) != hex32(crc32_of(body)))
    throw ModelFormatError("model checksum mismatch");

  auto lines = split(body, '\n');
  if (lines.empty() || trim(lines[0]) != kModelHeader) {
    if (!lines.empty() && trim(lines[0]).substr(0, 15) == "pbdetect-model ")
      throw ModelFormatError("unsupported model version '" + std::string(trim(lines[0])) + "'");
    throw ModelFormatError("not a pbdetect model file");
  }

  std::map<std::string, std::string> sections;
  std::string current;
  std::vector<std::string> waves;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      current = std::string(line.substr(1, line.size() - 2));
      continue;
    }
    if (current == "buffer" && line.substr(0, 7) == "wave = ") {
      waves.emplace_back(line.substr(7));
      continue;
    }
    sections[current] += std::string(line) + '\n';
  }
  for (const char* required : {"config", "provenance", "stats", "thresholds", "buffer"})
    if (!sections.count(required))
      throw ModelFormatError(std::string("model section [") + required + "] missing");

  TrainedModel m;
  try {
    m.config = parse_config(sections["config"]);
  } catch (const Error& e) {
    throw ModelFormatError(std::string("model config block: ") + e.what());
  }

  const auto prov = parse_key_values(sections["provenance"]);
  const auto stats = parse_key_values(sections["stats"]);
  const auto thresholds = parse_key_values(sections["thresholds"]);
  const auto buffer = parse_key_values(sections["buffer"]);
  auto get = [](const auto& kv, const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ModelFormatError("model key '" + key + "' missing");
    return it->second.value;
  };
  auto get_size = [&](const auto& kv, const std::string& key) {
    auto v = parse_int<std::size_t>(get(kv, key));
    if (!v) throw ModelFormatError("model key '" + key + "' is not an integer");
    return *v;
  };

  m.provenance.created = get(prov, "created");
  m.provenance.pb_reps = get_size(prov, "pb_reps");
  m.provenance.up_reps = get_size(prov, "up_reps");

  for (const auto& [name, s] : {std::pair{"pb", &m.pb_stats}, std::pair{"anti", &m.anti_stats}}) {
    s->count = get_size(stats, std::string(name) + ".count");
    const auto mean = split_doubles(get(stats, std::string(name) + ".mean"), kFeatureCount);
    const auto acc = split_doubles(get(stats, std::string(name) + ".acc"), kFeatureCount);
    std::copy(mean.begin(), mean.end(), s->mean.begin());
    std::copy(acc.begin(), acc.end(), s->acc.begin());
  }

  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const auto v = split_doubles(get(thresholds, std::string(kFeatureNames[i])), 6);
    auto& b = m.thresholds.bands[i];
    b.lt = v[0], b.ut = v[1], b.lat = v[2], b.uat = v[3];
    b.merged_lower = v[4] != 0;
    b.merged_upper = v[5] != 0;
  }

  const auto count = get_size(buffer, "count");
  if (count != waves.size())
    throw ModelFormatError("buffer declares " + std::to_string(count) + " waves, found " +
                           std::to_string(waves.size()));
  for (const auto& line : waves) {
    const auto parts = split(line, ' ');
    if (parts.size() != 4) throw ModelFormatError("malformed wave record");
    Wavelet w;
    auto start = parse_int<std::size_t>(parts[0]);
    auto end = parse_int<std::size_t>(parts[1]);
    auto fs = parse_double(parts[2]);
    if (!start || !end || !fs) throw ModelFormatError("malformed wave record header");
    w.start_index = *start;
    w.end_index = *end;
    w.sampling_rate_hz = *fs;
    w.samples = decode_samples(parts[3]);
    m.buffer.push_back(std::move(w));
  }
  m.validate();
  return m;
}

inline TrainedModel load_model(std::istream& in) {
  std::string text{std::istreambuf_iterator<char>(in), {}};
  return parse_model(text);
}

}  // namespace pbdetect
