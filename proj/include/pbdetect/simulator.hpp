#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbdetect/detail/text.hpp"
#include "pbdetect/error.hpp"
#include "pbdetect/signal_model.hpp"

namespace pbdetect {

// ---------------------------------------------------------------------------
// Deterministic randomness

/// splitmix64 finalizer; used to derive independent seeds from (seed, salt).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoshiro256** seeded through splitmix64. Uniform and normal draws are
/// computed here rather than through <random> distributions so a seed gives
/// the same sequence on every standard library.
class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    for (std::size_t i = 0; i < 4; ++i) s_[i] = mix_seed(seed, i);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }

  /// Standard normal (Box-Muller, one value per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
};

// ---------------------------------------------------------------------------
// Profiles

/// Raised-cosine deflection: rise over rise_s to `amplitude` (signed), hold
/// for plateau_s, return to zero over fall_s.
struct MovementTemplate {
  double amplitude = 0.0;
  double rise_s = 0.1;
  double plateau_s = 0.0;
  double fall_s = 0.1;

  double duration_s() const { return rise_s + plateau_s + fall_s; }
  friend bool operator==(const MovementTemplate&, const MovementTemplate&) = default;
};

inline constexpr std::array<MovementKind, 5> kGeneratedKinds = {
    MovementKind::prolonged_blink, MovementKind::upward_gaze, MovementKind::normal_blink,
    MovementKind::saccade_left, MovementKind::saccade_right};

inline std::string_view profile_key(MovementKind k) {
  switch (k) {
    case MovementKind::prolonged_blink: return "pb";
    case MovementKind::upward_gaze: return "up";
    case MovementKind::normal_blink: return "blink";
    case MovementKind::saccade_left: return "saccade_left";
    case MovementKind::saccade_right: return "saccade_right";
    case MovementKind::none_idle: break;
  }
  throw DomainError("NONE_IDLE has no template");
}

struct SubjectProfile {
  std::string id;
  bool hard = false;  // PB and upward-gaze templates deliberately close
  std::array<MovementTemplate, 5> templates{};  // indexed by kind, see kGeneratedKinds
  double amplitude_jitter = 0.05;
  double duration_jitter = 0.05;
  double noise_rms = 0.003;
  double wander_amplitude = 0.05;
  double wander_hz = 0.1;
  std::uint64_t seed = 1;

  MovementTemplate& tmpl(MovementKind k) { return templates[index_of(k)]; }
  const MovementTemplate& tmpl(MovementKind k) const { return templates[index_of(k)]; }

  /// Throws ConfigError on an out-of-contract profile.
  void validate() const {
    for (auto k : kGeneratedKinds) {
      const auto& t = tmpl(k);
      if (!(t.rise_s > 0) || !(t.fall_s > 0) || !(t.plateau_s >= 0))
        throw ConfigError("profile " + id + ": " + std::string(profile_key(k)) +
                          " durations must be positive");
      if (!std::isfinite(t.amplitude)) throw ConfigError("profile " + id + ": non-finite amplitude");
    }
    for (double j : {amplitude_jitter, duration_jitter})
      if (!(j >= 0.0 && j <= 0.5)) throw ConfigError("profile " + id + ": jitter must be in [0, 0.5]");
    if (!(noise_rms >= 0) || !(wander_amplitude >= 0) || !(wander_hz >= 0))
      throw ConfigError("profile " + id + ": noise and wander must be non-negative");
    if (!(tmpl(MovementKind::prolonged_blink).duration_s() >
          tmpl(MovementKind::normal_blink).duration_s()))
      throw ConfigError("profile " + id + ": PB template must outlast the normal blink");
  }

  friend bool operator==(const SubjectProfile&, const SubjectProfile&) = default;

  static std::size_t index_of(MovementKind k) {
    for (std::size_t i = 0; i < kGeneratedKinds.size(); ++i)
      if (kGeneratedKinds[i] == k) return i;
    throw DomainError("NONE_IDLE has no template");
  }
};

/// Key-value text, one `key = value` per line.
inline std::string format_profile(const SubjectProfile& p) {
  using detail::format_double;
  std::string out;
  out += "id = " + p.id + '\n';
  out += "hard = " + std::string(p.hard ? "true" : "false") + '\n';
  out += "seed = " + std::to_string(p.seed) + '\n';
  out += "amplitude_jitter = " + format_double(p.amplitude_jitter) + '\n';
  out += "duration_jitter = " + format_double(p.duration_jitter) + '\n';
  out += "noise_rms = " + format_double(p.noise_rms) + '\n';
  out += "wander_amplitude = " + format_double(p.wander_amplitude) + '\n';
  out += "wander_hz = " + format_double(p.wander_hz) + '\n';
  for (auto k : kGeneratedKinds) {
    const auto key = std::string(profile_key(k));
    const auto& t = p.tmpl(k);
    out += key + ".amplitude = " + format_double(t.amplitude) + '\n';
    out += key + ".rise_s = " + format_double(t.rise_s) + '\n';
    out += key + ".plateau_s = " + format_double(t.plateau_s) + '\n';
    out += key + ".fall_s = " + format_double(t.fall_s) + '\n';
  }
  return out;
}

inline SubjectProfile parse_profile(std::string_view text) {
  const auto kv = detail::parse_key_values(text);
  SubjectProfile p;
  auto get = [&](const std::string& key) -> const detail::KeyValue& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("profile key '" + key + "' missing", 0);
    return it->second;
  };
  auto num = [&](const std::string& key) {
    const auto& e = get(key);
    auto v = detail::parse_double(e.value);
    if (!v) throw ParseError("line " + std::to_string(e.line) + ": '" + key + "' is not a number", e.line);
    return *v;
  };
  p.id = get("id").value;
  {
    const auto& e = get("hard");
    auto v = detail::parse_bool(e.value);
    if (!v) throw ParseError("line " + std::to_string(e.line) + ": 'hard' is not a boolean", e.line);
    p.hard = *v;
  }
  {
    const auto& e = get("seed");
    auto v = detail::parse_int<std::uint64_t>(e.value);
    if (!v) throw ParseError("line " + std::to_string(e.line) + ": 'seed' is not an integer", e.line);
    p.seed = *v;
  }
  p.amplitude_jitter = num("amplitude_jitter");
  p.duration_jitter = num("duration_jitter");
  p.noise_rms = num("noise_rms");
  p.wander_amplitude = num("wander_amplitude");
  p.wander_hz = num("wander_hz");
  std::size_t expected = 8;
  for (auto k : kGeneratedKinds) {
    const auto key = std::string(profile_key(k));
    auto& t = p.tmpl(k);
    t.amplitude = num(key + ".amplitude");
    t.rise_s = num(key + ".rise_s");
    t.plateau_s = num(key + ".plateau_s");
    t.fall_s = num(key + ".fall_s");
    expected += 4;
  }
  if (kv.size() != expected) throw ParseError("profile has unknown keys", 0);
  p.validate();
  return p;
}

/// Fifteen deterministic subjects "A".."O". Amplitude, speed, jitter,
/// noise and wander vary across rows; A and J are the hard profiles whose
/// upward gazes nearly copy their PBs. `base_seed` replaces the built-in
/// seeds with mix_seed(base_seed, row).
inline std::vector<SubjectProfile> default_profiles(std::optional<std::uint64_t> base_seed = {}) {
  struct Row {
    double pb_amp, pb_rise, pb_plat, pb_fall;
    double up_amp, up_rise, up_plat, up_fall;
    double amp_jit, dur_jit, noise, wander_amp, wander_hz;
    bool hard;
  };
  // clang-format off
  static constexpr Row rows[15] = {
    // PB: amp  rise  plat  fall | UP: amp  rise  plat  fall | jitter a/d | noise  wander
    {-0.80, 0.52, 0.05, 0.64,  -0.74, 0.47, 0.04, 0.57,  0.07, 0.07, 0.003, 0.06, 0.10, true },  // A
    {-0.72, 0.46, 0.05, 0.56,  -0.55, 0.26, 0.05, 0.30,  0.05, 0.05, 0.002, 0.05, 0.08, false},  // B
    {-0.82, 0.55, 0.05, 0.68,  -0.60, 0.24, 0.04, 0.28,  0.06, 0.06, 0.003, 0.08, 0.12, false},  // C
    {-0.76, 0.50, 0.04, 0.60,  -0.50, 0.22, 0.04, 0.26,  0.05, 0.05, 0.002, 0.04, 0.05, false},  // D
    {-0.68, 0.44, 0.04, 0.54,  -0.52, 0.25, 0.05, 0.30,  0.07, 0.07, 0.004, 0.10, 0.15, false},  // E
    {-0.85, 0.60, 0.04, 0.74,  -0.62, 0.28, 0.05, 0.32,  0.06, 0.05, 0.003, 0.06, 0.20, false},  // F
    {-0.74, 0.48, 0.05, 0.58,  -0.58, 0.30, 0.05, 0.34,  0.08, 0.07, 0.003, 0.12, 0.06, false},  // G
    {-0.70, 0.45, 0.05, 0.55,  -0.50, 0.23, 0.04, 0.27,  0.04, 0.04, 0.002, 0.03, 0.25, false},  // H
    {-0.78, 0.52, 0.05, 0.62,  -0.56, 0.27, 0.05, 0.31,  0.07, 0.06, 0.004, 0.09, 0.10, false},  // I
    {-0.76, 0.50, 0.05, 0.62,  -0.72, 0.46, 0.04, 0.57,  0.08, 0.08, 0.004, 0.07, 0.12, true },  // J
    {-0.80, 0.56, 0.04, 0.68,  -0.60, 0.25, 0.04, 0.29,  0.05, 0.06, 0.002, 0.05, 0.30, false},  // K
    {-0.69, 0.45, 0.04, 0.55,  -0.48, 0.22, 0.04, 0.26,  0.06, 0.05, 0.003, 0.08, 0.07, false},  // L
    {-0.83, 0.57, 0.05, 0.70,  -0.63, 0.27, 0.05, 0.30,  0.06, 0.07, 0.003, 0.11, 0.09, false},  // M
    {-0.73, 0.49, 0.05, 0.60,  -0.54, 0.26, 0.05, 0.30,  0.07, 0.06, 0.004, 0.06, 0.18, false},  // N
    {-0.77, 0.52, 0.04, 0.63,  -0.57, 0.24, 0.04, 0.28,  0.05, 0.05, 0.002, 0.04, 0.11, false},  // O
  };
  // clang-format on
  std::vector<SubjectProfile> out;
  for (std::size_t i = 0; i < 15; ++i) {
    const Row& r = rows[i];
    SubjectProfile p;
    p.id = std::string(1, static_cast<char>('A' + i));
    p.hard = r.hard;
    p.tmpl(MovementKind::prolonged_blink) = {r.pb_amp, r.pb_rise, r.pb_plat, r.pb_fall};
    p.tmpl(MovementKind::upward_gaze) = {r.up_amp, r.up_rise, r.up_plat, r.up_fall};
    // A normal blink is the PB shape compressed about fivefold in time.
    p.tmpl(MovementKind::normal_blink) = {r.pb_amp * 0.8, r.pb_rise / 5.0, r.pb_plat / 4.0,
                                          r.pb_fall / 5.0};
    // Positive-first step held long enough for its return to open a capture
    // that then times out in the inter-half-cycle state.
    p.tmpl(MovementKind::saccade_left) = {-r.pb_amp * 0.6, 0.12, 0.9, 0.12};
    // Near-flat horizontal saccade as seen on the vertical channel.
    p.tmpl(MovementKind::saccade_right) = {-r.pb_amp * 0.08, 0.10, 0.6, 0.10};
    p.amplitude_jitter = r.amp_jit;
    p.duration_jitter = r.dur_jit;
    p.noise_rms = r.noise;
    p.wander_amplitude = r.wander_amp;
    p.wander_hz = r.wander_hz;
    p.seed = base_seed ? mix_seed(*base_seed, i) : 1000 + 7919 * i;
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Waveforms

/// Samples of `t` at `fs`: ceil(duration * fs) + 1 points from 0 through
/// the end of the fall, both endpoints at zero.
inline std::vector<double> render_template(const MovementTemplate& t, double fs) {
  const auto n = static_cast<std::size_t>(std::ceil(t.duration_s() * fs - 1e-9)) + 1;
  std::vector<double> out(n);
  const double pi = std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / fs;
    double shape;
    if (s < t.rise_s) shape = (1.0 - std::cos(pi * s / t.rise_s)) / 2.0;
    else if (s < t.rise_s + t.plateau_s) shape = 1.0;
    else if (s < t.duration_s()) shape = (1.0 + std::cos(pi * (s - t.rise_s - t.plateau_s) / t.fall_s)) / 2.0;
    else shape = 0.0;
    out[i] = t.amplitude * shape;
  }
  return out;
}

/// Pearson correlation of a and b after zero-padding the shorter one at its
/// end. Returns 1 for two identically constant sequences and 0 when exactly
/// one of them is constant.
inline double padded_correlation(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = std::max(a.size(), b.size());
  if (n == 0) return 1.0;
  auto at = [](std::span<const double> v, std::size_t i) { return i < v.size() ? v[i] : 0.0; };
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) ma += at(a, i), mb += at(b, i);
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = at(a, i) - ma, db = at(b, i) - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0 && sbb == 0) return 1.0;
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

struct MovementSegment {
  MovementKind kind;
  std::vector<double> samples;   // deflection plus sensor noise
  std::vector<double> template_samples;
  MovementTemplate realized;
  double correlation = 1.0;
  std::size_t attempts = 1;
};

inline constexpr double kCorrelationFloor = 0.9;
inline constexpr std::size_t kMaxGenerationAttempts = 200;

namespace detail {

/// Normal draw clipped to +/- 2, so the jitter range is bounded.
inline double clipped_normal(Rng& rng) { return std::clamp(rng.normal(), -2.0, 2.0); }

}  // namespace detail

/// One jittered realization of `kind`. Amplitude scales by 1 + aj*g and
/// each duration by a shared speed factor times its own factor (g clipped
/// normal); draws whose correlation with the clean template falls below
/// the floor are redrawn.
inline MovementSegment generate_movement(const SubjectProfile& profile, MovementKind kind, Rng& rng,
                                         double fs = 250.0) {
  if (kind == MovementKind::none_idle) throw DomainError("generate_movement needs a movement kind");
  const MovementTemplate& base = profile.tmpl(kind);
  MovementSegment seg{kind, {}, render_template(base, fs), base, 0.0, 0};
  while (seg.attempts < kMaxGenerationAttempts) {
    ++seg.attempts;
    MovementTemplate t = base;
    const double aj = profile.amplitude_jitter, dj = profile.duration_jitter;
    t.amplitude *= 1.0 + aj * detail::clipped_normal(rng);
    const double speed = 1.0 + dj * detail::clipped_normal(rng);
    t.rise_s *= speed * (1.0 + 0.5 * dj * detail::clipped_normal(rng));
    t.plateau_s *= speed * (1.0 + 0.5 * dj * detail::clipped_normal(rng));
    t.fall_s *= speed * (1.0 + 0.5 * dj * detail::clipped_normal(rng));
    auto samples = render_template(t, fs);
    if (profile.noise_rms > 0)
      for (auto& v : samples) v += profile.noise_rms * rng.normal();
    const double corr = padded_correlation(samples, seg.template_samples);
    if (corr >= kCorrelationFloor) {
      seg.samples = std::move(samples);
      seg.realized = t;
      seg.correlation = corr;
      return seg;
    }
  }
  throw DomainError("profile " + profile.id + ": could not draw a " + std::string(to_string(kind)) +
                    " above the correlation floor in " + std::to_string(kMaxGenerationAttempts) +
                    " attempts");
}

// ---------------------------------------------------------------------------
// Sessions

struct ScheduledMovement {
  MovementKind kind;
  double gap_before_s;
};

struct SessionSchedule {
  std::vector<ScheduledMovement> items;
  double trailing_s = 2.0;
};

/// `kinds` in order, each preceded by `gap_s` of idle signal.
inline SessionSchedule fixed_schedule(const std::vector<MovementKind>& kinds, double gap_s = 2.0) {
  SessionSchedule s;
  for (auto k : kinds) s.items.push_back({k, gap_s});
  return s;
}

/// `count` copies of one kind.
inline SessionSchedule repeated_schedule(MovementKind kind, std::size_t count, double gap_s = 2.0) {
  return fixed_schedule(std::vector<MovementKind>(count, kind), gap_s);
}

/// Shuffled mix with the given per-kind counts and uniform gaps in
/// [gap_min_s, gap_max_s].
inline SessionSchedule random_schedule(const std::vector<std::pair<MovementKind, std::size_t>>& counts,
                                       double gap_min_s, double gap_max_s, std::uint64_t seed) {
  if (gap_min_s < 0 || gap_max_s < gap_min_s) throw ConfigError("invalid gap range");
  std::vector<MovementKind> kinds;
  for (const auto& [k, n] : counts) kinds.insert(kinds.end(), n, k);
  Rng rng(seed);
  for (std::size_t i = kinds.size(); i > 1; --i) std::swap(kinds[i - 1], kinds[rng.below(i)]);
  SessionSchedule s;
  for (auto k : kinds) s.items.push_back({k, rng.uniform(gap_min_s, gap_max_s)});
  return s;
}

/// Operational-session mix: 300-399 movements in the proportions
/// PB 35%, upward gaze 30%, normal blink 15%, each saccade 10%.
inline SessionSchedule evaluation_schedule(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5e55));
  const std::size_t total = 300 + rng.below(100);
  const auto pb = total * 35 / 100, up = total * 30 / 100, blink = total * 15 / 100,
             left = total * 10 / 100;
  const auto right = total - pb - up - blink - left;
  return random_schedule({{MovementKind::prolonged_blink, pb},
                          {MovementKind::upward_gaze, up},
                          {MovementKind::normal_blink, blink},
                          {MovementKind::saccade_left, left},
                          {MovementKind::saccade_right, right}},
                         1.5, 3.0, mix_seed(seed, 0x6a95));
}

/// Concatenates idle gaps and movement realizations, adds baseline wander
/// (random phase) and sensor noise on idle samples, and quantizes to the
/// configured ADC. Labels carry each movement's exact span.
inline EogTrace generate_session(const SubjectProfile& profile, const SessionSchedule& schedule,
                                 const PipelineConfig& cfg, std::uint64_t seed) {
  if (schedule.items.empty()) throw ConfigError("session schedule is empty");
  profile.validate();
  const double fs = cfg.sampling_rate_hz;
  Rng rng(seed);
  EogTrace trace;
  auto idle = [&](double seconds) {
    const auto n = static_cast<std::size_t>(std::llround(std::max(0.0, seconds) * fs));
    for (std::size_t i = 0; i < n; ++i)
      trace.amplitudes.push_back(profile.noise_rms > 0 ? profile.noise_rms * rng.normal() : 0.0);
  };
  for (const auto& item : schedule.items) {
    if (item.gap_before_s < 0) throw ConfigError("schedule gaps must be non-negative");
    idle(item.gap_before_s);
    if (item.kind == MovementKind::none_idle) continue;
    auto seg = generate_movement(profile, item.kind, rng, fs);
    const std::size_t start = trace.amplitudes.size();
    trace.amplitudes.insert(trace.amplitudes.end(), seg.samples.begin(), seg.samples.end());
    trace.labels.push_back({item.kind, start, trace.amplitudes.size() - 1});
  }
  idle(schedule.trailing_s);
  if (profile.wander_amplitude > 0 && profile.wander_hz > 0) {
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double w = 2.0 * std::numbers::pi * profile.wander_hz / fs;
    for (std::size_t i = 0; i < trace.amplitudes.size(); ++i)
      trace.amplitudes[i] += profile.wander_amplitude * std::sin(w * static_cast<double>(i) + phase);
  }
  for (auto& v : trace.amplitudes) v = quantize(v, cfg);
  return trace;
}

inline EogTrace generate_session(const SubjectProfile& profile, const SessionSchedule& schedule,
                                 const PipelineConfig& cfg) {
  return generate_session(profile, schedule, cfg, profile.seed);
}

/// Learning-period traces for one profile: `pb_reps` PBs, then `up_reps`
/// upward gazes, 2 s apart.
struct TrainingTraces {
  EogTrace pb;
  EogTrace up;
};

inline TrainingTraces generate_training(const SubjectProfile& profile, const PipelineConfig& cfg) {
  return {generate_session(profile,
                           repeated_schedule(MovementKind::prolonged_blink,
                                             static_cast<std::size_t>(cfg.pb_training_reps)),
                           cfg, mix_seed(profile.seed, 1)),
          generate_session(profile,
                           repeated_schedule(MovementKind::upward_gaze,
                                             static_cast<std::size_t>(cfg.up_training_reps)),
                           cfg, mix_seed(profile.seed, 2))};
}

inline EogTrace generate_evaluation(const SubjectProfile& profile, const PipelineConfig& cfg) {
  return generate_session(profile, evaluation_schedule(mix_seed(profile.seed, 3)), cfg,
                          mix_seed(profile.seed, 4));
}

}  // namespace pbdetect
