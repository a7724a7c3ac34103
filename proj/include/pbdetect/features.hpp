#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "pbdetect/isolator.hpp"
#include "pbdetect/memstore.hpp"
#include "pbdetect/signal_model.hpp"

namespace pbdetect {

inline constexpr std::size_t kFeatureCount = 6;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "similarity", "max", "min", "p_durn", "n_durn", "t_durn"};

/// The six per-wavelet features. Durations are in seconds.
struct FeatureVector {
  double similarity = 0.0;
  double max = 0.0;
  double min = 0.0;
  double p_durn = 0.0;
  double n_durn = 0.0;
  double t_durn = 0.0;

  std::array<double, kFeatureCount> values() const {
    return {similarity, max, min, p_durn, n_durn, t_durn};
  }

  static FeatureVector from_values(const std::array<double, kFeatureCount>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

inline std::string feature_csv_header() { return "similarity,max,min,p_durn,n_durn,t_durn"; }

inline std::string to_csv(const FeatureVector& f) {
  std::string out;
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (i) out += ',';
    out += detail::format_double(f.values()[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalized cross-correlation

/// Maximum normalized cross-correlation over every lag at which the shorter
/// sequence lies entirely inside the longer one. At each lag both windows are
/// mean-removed and divided by the product of their norms, so the result is
/// a Pearson coefficient in [-1, 1]. Lags whose window of the longer sequence
/// is constant are skipped. The lag itself is not reported.
inline double ncc_max(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("ncc_max requires non-empty sequences");
  auto s = a, l = b;
  if (s.size() > l.size()) std::swap(s, l);
  const std::size_t n = s.size();

  double s_mean = 0.0;
  for (double v : s) s_mean += v;
  s_mean /= static_cast<double>(n);
  double s_var = 0.0;
  for (double v : s) s_var += (v - s_mean) * (v - s_mean);
  if (!(s_var > 0)) throw DomainError("ncc_max undefined for a constant sequence");

  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + n <= l.size(); ++k) {
    const auto w = l.subspan(k, n);
    double w_mean = 0.0;
    for (double v : w) w_mean += v;
    w_mean /= static_cast<double>(n);
    double w_var = 0.0, num = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dw = w[i] - w_mean;
      w_var += dw * dw;
      num += (s[i] - s_mean) * dw;
    }
    if (!(w_var > 0)) continue;
    best = std::max(best, num / std::sqrt(s_var * w_var));
  }
  if (best == -std::numeric_limits<double>::infinity())
    throw DomainError("ncc_max undefined: every window of the longer sequence is constant");
  return std::clamp(best, -1.0, 1.0);
}

namespace detail {

__extension__ typedef __int128 int128;
__extension__ typedef unsigned __int128 uint128;

inline std::uint64_t isqrt_u128(uint128 v) {
  if (v == 0) return 0;
  // Newton iteration from an over-estimate converges monotonically downward.
  uint128 x = v;
  uint128 y = (x + 1) / 2;
  while (y < x) {
    x = y;
    y = (x + v / x) / 2;
  }
  return static_cast<std::uint64_t>(x);
}

}  // namespace detail

/// Integer-only variant of ncc_max. Inputs are scaled by 2^12 and rounded;
/// all sums, the normalization and the comparison across lags run in integer
/// arithmetic, with the result carried as a Q16 fixed-point value.
inline double ncc_max_fixed(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("ncc_max requires non-empty sequences");
  auto to_fixed = [](std::span<const double> v) {
    std::vector<std::int64_t> q(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) q[i] = std::llround(v[i] * 4096.0);
    return q;
  };
  auto s = to_fixed(a), l = to_fixed(b);
  if (s.size() > l.size()) std::swap(s, l);
  using i128 = detail::int128;
  const auto n = static_cast<i128>(s.size());

  i128 s_sum = 0, s_sq = 0;
  for (auto v : s) s_sum += v, s_sq += static_cast<i128>(v) * v;
  const i128 s_var = n * s_sq - s_sum * s_sum;  // n^2 * variance
  if (s_var <= 0) throw DomainError("ncc_max undefined for a constant sequence");
  const auto s_norm = static_cast<i128>(detail::isqrt_u128(static_cast<detail::uint128>(s_var)));

  std::vector<i128> prefix(l.size() + 1, 0), prefix_sq(l.size() + 1, 0);
  for (std::size_t i = 0; i < l.size(); ++i) {
    prefix[i + 1] = prefix[i] + l[i];
    prefix_sq[i + 1] = prefix_sq[i] + static_cast<i128>(l[i]) * l[i];
  }

  bool found = false;
  std::int64_t best_q16 = 0;
  for (std::size_t k = 0; k + s.size() <= l.size(); ++k) {
    const i128 w_sum = prefix[k + s.size()] - prefix[k];
    const i128 w_sq = prefix_sq[k + s.size()] - prefix_sq[k];
    const i128 w_var = n * w_sq - w_sum * w_sum;
    if (w_var <= 0) continue;
    i128 dot = 0;
    for (std::size_t i = 0; i < s.size(); ++i) dot += static_cast<i128>(s[i]) * l[k + i];
    const i128 cov = n * dot - s_sum * w_sum;  // n^2 * covariance
    const auto w_norm =
        static_cast<i128>(detail::isqrt_u128(static_cast<detail::uint128>(w_var)));
    const i128 denom = s_norm * w_norm;
    if (denom == 0) continue;
    auto q = static_cast<std::int64_t>((cov * 65536) / denom);
    q = std::clamp<std::int64_t>(q, -65536, 65536);
    if (!found || q > best_q16) best_q16 = q, found = true;
  }
  if (!found)
    throw DomainError("ncc_max undefined: every window of the longer sequence is constant");
  return static_cast<double>(best_q16) / 65536.0;
}

// ---------------------------------------------------------------------------
// Derivative DTW

/// Three-point derivative estimate; the end points copy their neighbours.
inline std::vector<double> derivative_series(std::span<const double> a) {
  if (a.size() < 3) throw DomainError("derivative estimate needs at least 3 samples");
  std::vector<double> d(a.size());
  for (std::size_t i = 1; i + 1 < a.size(); ++i)
    d[i] = ((a[i] - a[i - 1]) + (a[i + 1] - a[i - 1]) / 2.0) / 2.0;
  d.front() = d[1];
  d.back() = d[a.size() - 2];
  return d;
}

struct Alignment {
  double cost = 0.0;
  std::size_t path_length = 0;

  double normalized() const { return cost / static_cast<double>(path_length); }
};

/// DTW with squared-difference local cost, restricted to a Sakoe-Chiba band
/// of half-width `band` around the length-normalized diagonal
/// j = i * (m - 1) / (n - 1). Among equal-cost predecessors the shorter path
/// wins, then the diagonal; this makes the full-band result symmetric.
inline Alignment dtw_banded(std::span<const double> x, std::span<const double> y, std::size_t band) {
  if (band < 1) throw ConfigError("Sakoe-Chiba band must be >= 1");
  const std::size_t n = x.size(), m = y.size();
  if (n == 0 || m == 0) throw DomainError("dtw requires non-empty sequences");
  constexpr double inf = std::numeric_limits<double>::infinity();

  std::vector<double> prev_cost(m, inf), cur_cost(m, inf);
  std::vector<std::size_t> prev_len(m, 0), cur_len(m, 0);
  std::size_t prev_lo = 0, prev_hi = 0;
  const double slope = n > 1 ? static_cast<double>(m - 1) / static_cast<double>(n - 1) : 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const double center = n > 1 ? static_cast<double>(i) * slope : static_cast<double>(m - 1);
    const double lo_f = std::ceil(center - static_cast<double>(band));
    const double hi_f = std::floor(center + static_cast<double>(band));
    std::size_t lo = lo_f <= 0 ? 0 : static_cast<std::size_t>(lo_f);
    std::size_t hi = hi_f >= static_cast<double>(m - 1) ? m - 1 : static_cast<std::size_t>(hi_f);
    if (i == 0) lo = 0;
    if (i == n - 1) hi = m - 1;
    if (i > 0) lo = std::min(lo, prev_hi + 1);
    hi = std::max(hi, lo);

    for (std::size_t j = lo; j <= hi; ++j) {
      const double diff = x[i] - y[j];
      const double local = diff * diff;
      if (i == 0 && j == 0) {
        cur_cost[j] = local;
        cur_len[j] = 1;
        continue;
      }
      double best = inf;
      std::size_t best_len = 0;
      auto consider = [&](double c, std::size_t len) {
        if (c < best || (c == best && len < best_len)) best = c, best_len = len;
      };
      // Diagonal is considered first so it wins exact ties of cost and length.
      if (i > 0 && j > 0 && j - 1 >= prev_lo && j - 1 <= prev_hi) consider(prev_cost[j - 1], prev_len[j - 1]);
      if (i > 0 && j >= prev_lo && j <= prev_hi) consider(prev_cost[j], prev_len[j]);
      if (j > lo) consider(cur_cost[j - 1], cur_len[j - 1]);
      cur_cost[j] = local + best;
      cur_len[j] = best_len + 1;
    }
    if (i + 1 < n) {
      for (std::size_t j = prev_lo; j <= prev_hi && i > 0; ++j) prev_cost[j] = inf;
      std::swap(prev_cost, cur_cost);
      std::swap(prev_len, cur_len);
      prev_lo = lo;
      prev_hi = hi;
    } else {
      return {cur_cost[m - 1], cur_len[m - 1]};
    }
  }
  return {prev_cost[m - 1], prev_len[m - 1]};
}

namespace detail {

inline bool canonical_first(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return a.size() > b.size();
  return !std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace detail

/// Raw (unnormalized) DDTW alignment of two sample sequences.
inline Alignment ddtw_alignment(std::span<const double> a, std::span<const double> b, int band) {
  if (band < 1) throw ConfigError("Sakoe-Chiba band must be >= 1");
  if (a.size() < 3 || b.size() < 3) throw DomainError("ddtw needs sequences of length >= 3");
  if (!detail::canonical_first(a, b)) std::swap(a, b);
  const auto da = derivative_series(a);
  const auto db = derivative_series(b);
  return dtw_banded(da, db, static_cast<std::size_t>(band));
}

/// Path-length-normalized DDTW distance; symmetric in its arguments.
inline double ddtw_distance(std::span<const double> a, std::span<const double> b, int band) {
  return ddtw_alignment(a, b, band).normalized();
}

// ---------------------------------------------------------------------------
// Similarity and medoid

/// Higher is more similar. NCC: the correlation itself. DDTW: exp(-distance).
inline double similarity_of(std::span<const double> w, std::span<const double> reference,
                            const PipelineConfig& cfg) {
  if (reference.empty()) throw DomainError("similarity reference is empty");
  if (cfg.similarity_backend == SimilarityBackend::ncc_max)
    return cfg.integer_ncc ? ncc_max_fixed(w, reference) : ncc_max(w, reference);
  return std::exp(-ddtw_distance(w, reference, cfg.sakoe_chiba_band));
}

/// Dissimilarity used for medoid selection: 1 - NCC, or the raw DDTW distance.
inline double distance_of(std::span<const double> a, std::span<const double> b,
                          const PipelineConfig& cfg) {
  if (cfg.similarity_backend == SimilarityBackend::ncc_max)
    return 1.0 - (cfg.integer_ncc ? ncc_max_fixed(a, b) : ncc_max(a, b));
  return ddtw_distance(a, b, cfg.sakoe_chiba_band);
}

/// Index of the member minimizing its summed distance to all others; ties go
/// to the lowest index.
inline std::size_t medoid_index(std::span<const std::vector<double>> members, const PipelineConfig& cfg) {
  if (members.empty()) throw DomainError("medoid of an empty buffer");
  const std::size_t n = members.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      d[i * n + j] = d[j * n + i] = distance_of(members[i], members[j], cfg);
  std::size_t best = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum += d[i * n + j];
    if (sum < best_sum) best_sum = sum, best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Feature extraction

/// Features of `w`; similarity is measured against `reference`, or is 1.0
/// when no reference exists yet.
inline FeatureVector extract_features(const Wavelet& w, std::span<const double> reference,
                                      const PipelineConfig& cfg) {
  check_wavelet(w);
  const auto& s = w.samples;
  const double fs = w.sampling_rate_hz;
  FeatureVector f;
  f.max = *std::max_element(s.begin(), s.end());
  f.min = *std::min_element(s.begin(), s.end());
  std::size_t leading_negative = 0;
  while (leading_negative < s.size() && s[leading_negative] < 0) ++leading_negative;
  const auto first_positive = static_cast<std::size_t>(
      std::find_if(s.begin(), s.end(), [](double v) { return v > 0; }) - s.begin());
  f.n_durn = static_cast<double>(leading_negative) / fs;
  f.p_durn = static_cast<double>(s.size() - first_positive) / fs;
  f.t_durn = static_cast<double>(s.size()) / fs;
  f.similarity = reference.empty() ? 1.0 : similarity_of(s, reference, cfg);
  return f;
}

// ---------------------------------------------------------------------------
// WaveletBuffer

/// Bounded, insertion-ordered record of PB wavelets, stored in a HAT and
/// charged to the emulated memory budget. Keeps the pairwise distance matrix
/// so the medoid is maintained with one distance per member on insertion.
///
/// Accounting: leaves at bytes_per_sample per element, 16 bytes of span
/// metadata per wave, and 4 bytes per pairwise distance entry.
class WaveletBuffer {
public:
  static constexpr long kMetaBytesPerWave = 16;
  static constexpr long kDistanceEntryBytes = 4;
  static constexpr std::size_t kRetentionFloor = 3;

  explicit WaveletBuffer(const PipelineConfig& cfg, BudgetAccountant* accountant = nullptr)
      : cfg_(cfg),
        capacity_(static_cast<std::size_t>(cfg.wavelet_buffer_capacity)),
        accountant_(accountant),
        store_(typename HatStore<double>::Options{
            static_cast<std::size_t>(cfg.hat_leaf_len),
            capacity_ * ((cfg.max_wavelet_samples() + static_cast<std::size_t>(cfg.hat_leaf_len) - 1) /
                         static_cast<std::size_t>(cfg.hat_leaf_len)),
            cfg.max_wavelet_samples(), cfg.bytes_per_sample, accountant, "wavelet_buffer"}),
        distances_(capacity_ * capacity_, 0.0) {
    entries_.reserve(capacity_);
    for (std::size_t i = 0; i < capacity_; ++i) free_rows_.push_back(capacity_ - 1 - i);
  }

  WaveletBuffer(const WaveletBuffer&) = delete;
  WaveletBuffer& operator=(const WaveletBuffer&) = delete;

  ~WaveletBuffer() {
    if (accountant_) {
      try {
        accountant_->track("wavelet_buffer", -kMetaBytesPerWave * static_cast<long>(entries_.size()));
        accountant_->track("medoid", -matrix_bytes(entries_.size()));
      } catch (...) {
      }
    }
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t evictions() const { return evictions_; }
  const HatStore<double>& store() const { return store_; }

  /// Bytes an append of `len` samples would add to the ledger.
  long bytes_needed(std::size_t len) const {
    return static_cast<long>(store_.leaves_for(len)) * store_.leaf_bytes() + kMetaBytesPerWave +
           matrix_bytes(entries_.size() + 1) - matrix_bytes(entries_.size());
  }

  /// Appends `w`, evicting the oldest members first when the buffer is full
  /// or the budget is short (never below the retention floor). Throws
  /// CapacityError, leaving the buffer unchanged, if space cannot be made.
  void append(const Wavelet& w) {
    if (w.samples.empty()) throw MalformedWaveletError("cannot store an empty wavelet");
    if (w.samples.size() > cfg_.max_wavelet_samples())
      throw CapacityError("wavelet longer than the configured maximum");
    auto short_of_space = [&] {
      return entries_.size() >= capacity_ ||
             store_.free_leaves() < store_.leaves_for(w.samples.size()) ||
             (accountant_ && !accountant_->fits(bytes_needed(w.samples.size())));
    };
    while (short_of_space()) {
      if (!cfg_.eviction_enabled || entries_.size() <= kRetentionFloor)
        throw CapacityError("wavelet buffer cannot retain another wave (" +
                            std::to_string(entries_.size()) + " stored)");
      evict_oldest();
    }

    // Distances first: a failure here must leave the buffer untouched.
    std::vector<double> row(entries_.size());
    std::vector<double> scratch;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      scratch.resize(store_.length(entries_[i].handle));
      store_.copy_to(entries_[i].handle, scratch);
      row[i] = distance_of(w.samples, scratch, cfg_);
    }

    if (accountant_) {
      accountant_->track("medoid", matrix_bytes(entries_.size() + 1) - matrix_bytes(entries_.size()));
      try {
        accountant_->track("wavelet_buffer", kMetaBytesPerWave);
      } catch (...) {
        accountant_->track("medoid", matrix_bytes(entries_.size()) - matrix_bytes(entries_.size() + 1));
        throw;
      }
    }
    WaveHandle h;
    try {
      h = store_.append(w.samples);
    } catch (...) {
      if (accountant_) {
        accountant_->track("wavelet_buffer", -kMetaBytesPerWave);
        accountant_->track("medoid", matrix_bytes(entries_.size()) - matrix_bytes(entries_.size() + 1));
      }
      throw;
    }
    const std::size_t r = free_rows_.back();
    free_rows_.pop_back();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      distances_[r * capacity_ + entries_[i].row] = row[i];
      distances_[entries_[i].row * capacity_ + r] = row[i];
    }
    distances_[r * capacity_ + r] = 0.0;
    entries_.push_back({h, r, w.start_index, w.end_index, w.sampling_rate_hz});
    refresh_medoid();
  }

  /// Evicts oldest members until `needed_bytes` fit in the budget or the
  /// retention floor is reached. Returns the bytes freed.
  long evict_for(long needed_bytes) {
    if (!accountant_) return 0;
    const long before = accountant_->live_bytes();
    while (!accountant_->fits(needed_bytes) && entries_.size() > kRetentionFloor) evict_oldest();
    const long freed = before - accountant_->live_bytes();
    if (!accountant_->fits(needed_bytes))
      throw CapacityError("cannot free " + std::to_string(needed_bytes) + " bytes by eviction");
    return freed;
  }

  /// Insertion-order position of the medoid.
  std::size_t medoid_position() const {
    if (entries_.empty()) throw DomainError("medoid of an empty buffer");
    return medoid_pos_;
  }

  /// Samples of the medoid; empty when the buffer is empty.
  std::span<const double> medoid_samples() const { return medoid_samples_; }

  Wavelet at(std::size_t pos) const {
    const auto& e = entries_.at(pos);
    return {store_.read(e.handle), e.start, e.end, e.fs};
  }

  std::vector<Wavelet> snapshot() const {
    std::vector<Wavelet> out;
    for (std::size_t i = 0; i < entries_.size(); ++i) out.push_back(at(i));
    return out;
  }

  /// Pairwise distance between members at insertion positions i and j.
  double distance(std::size_t i, std::size_t j) const {
    return distances_[entries_.at(i).row * capacity_ + entries_.at(j).row];
  }

private:
  struct Entry {
    WaveHandle handle;
    std::size_t row;
    std::size_t start;
    std::size_t end;
    double fs;
  };

  static long matrix_bytes(std::size_t n) {
    return kDistanceEntryBytes * static_cast<long>(n * n);
  }

  void evict_oldest() {
    const Entry e = entries_.front();
    entries_.erase(entries_.begin());
    store_.release(e.handle);
    free_rows_.push_back(e.row);
    if (accountant_) {
      accountant_->track("wavelet_buffer", -kMetaBytesPerWave);
      accountant_->track("medoid", matrix_bytes(entries_.size()) - matrix_bytes(entries_.size() + 1));
    }
    ++evictions_;
    refresh_medoid();
  }

  void refresh_medoid() {
    if (entries_.empty()) {
      medoid_samples_.clear();
      medoid_pos_ = 0;
      return;
    }
    std::size_t best = 0;
    double best_sum = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < entries_.size(); ++j)
        if (j != i) sum += distances_[entries_[i].row * capacity_ + entries_[j].row];
      if (sum < best_sum) best_sum = sum, best = i;
    }
    medoid_pos_ = best;
    medoid_samples_ = store_.read(entries_[best].handle);
  }

  PipelineConfig cfg_;
  std::size_t capacity_;
  BudgetAccountant* accountant_;
  HatStore<double> store_;
  std::vector<double> distances_;
  std::vector<Entry> entries_;
  std::vector<std::size_t> free_rows_;
  std::vector<double> medoid_samples_;
  std::size_t medoid_pos_ = 0;
  std::size_t evictions_ = 0;
};

inline FeatureVector extract_features(const Wavelet& w, const WaveletBuffer& buf,
                                      const PipelineConfig& cfg) {
  return extract_features(w, buf.medoid_samples(), cfg);
}

}  // namespace pbdetect
