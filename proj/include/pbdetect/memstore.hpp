#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pbdetect/error.hpp"

namespace pbdetect {

// ---------------------------------------------------------------------------
// BudgetAccountant

/// Byte-level ledger emulating a fixed SRAM ceiling. Every owner charges and
/// refunds its own bytes; a charge that would cross the budget is refused
/// without changing any state. Updates are serialized, so stages running on
/// different threads may share one accountant.
class BudgetAccountant {
public:
  struct Snapshot {
    long budget_bytes = 0;
    long live_bytes = 0;
    long high_water_bytes = 0;
  };

  explicit BudgetAccountant(long budget_bytes) : budget_(budget_bytes) {
    if (budget_bytes <= 0) throw ConfigError("memory budget must be positive");
  }

  BudgetAccountant(const BudgetAccountant&) = delete;
  BudgetAccountant& operator=(const BudgetAccountant&) = delete;

  /// Applies `delta` to `owner`. Throws CapacityError if the charge would
  /// exceed the budget, and Error if a refund exceeds what the owner holds.
  void track(const std::string& owner, long delta) {
    std::lock_guard lock(mutex_);
    apply_locked(owner, delta);
  }

  /// Like track() but reports refusal instead of throwing.
  bool try_track(const std::string& owner, long delta) {
    std::lock_guard lock(mutex_);
    if (delta > 0 && live_ + delta > budget_) return false;
    apply_locked(owner, delta);
    return true;
  }

  bool fits(long bytes) const {
    std::lock_guard lock(mutex_);
    return live_ + bytes <= budget_;
  }

  long available() const {
    std::lock_guard lock(mutex_);
    return budget_ - live_;
  }

  long budget() const { return budget_; }

  long live_bytes() const {
    std::lock_guard lock(mutex_);
    return live_;
  }

  long high_water_bytes() const {
    std::lock_guard lock(mutex_);
    return high_water_;
  }

  long owner_bytes(const std::string& owner) const {
    std::lock_guard lock(mutex_);
    auto it = ledger_.find(owner);
    return it == ledger_.end() ? 0 : it->second;
  }

  std::map<std::string, long> ledger() const {
    std::lock_guard lock(mutex_);
    return ledger_;
  }

  Snapshot snapshot() const {
    std::lock_guard lock(mutex_);
    return {budget_, live_, high_water_};
  }

private:
  void apply_locked(const std::string& owner, long delta) {
    if (delta > 0 && live_ + delta > budget_)
      throw CapacityError("memory budget exceeded: " + owner + " requested " +
                          std::to_string(delta) + " bytes with " +
                          std::to_string(budget_ - live_) + " available");
    long& held = ledger_[owner];
    if (held + delta < 0)
      throw Error("owner '" + owner + "' refunded more bytes than it holds");
    held += delta;
    live_ += delta;
    high_water_ = std::max(high_water_, live_);
  }

  long budget_;
  long live_ = 0;
  long high_water_ = 0;
  std::map<std::string, long> ledger_;
  mutable std::mutex mutex_;
};

/// Charges a fixed amount for the lifetime of the object.
class ScopedCharge {
public:
  ScopedCharge() = default;
  ScopedCharge(BudgetAccountant* accountant, std::string owner, long bytes)
      : accountant_(accountant), owner_(std::move(owner)), bytes_(bytes) {
    if (accountant_) accountant_->track(owner_, bytes_);
  }
  ScopedCharge(ScopedCharge&& other) noexcept { *this = std::move(other); }
  ScopedCharge& operator=(ScopedCharge&& other) noexcept {
    if (this != &other) {
      release();
      accountant_ = std::exchange(other.accountant_, nullptr);
      owner_ = std::move(other.owner_);
      bytes_ = std::exchange(other.bytes_, 0);
    }
    return *this;
  }
  ScopedCharge(const ScopedCharge&) = delete;
  ScopedCharge& operator=(const ScopedCharge&) = delete;
  ~ScopedCharge() { release(); }

private:
  void release() noexcept {
    if (accountant_ && bytes_ != 0) {
      try {
        accountant_->track(owner_, -bytes_);
      } catch (...) {
      }
    }
    accountant_ = nullptr;
    bytes_ = 0;
  }

  BudgetAccountant* accountant_ = nullptr;
  std::string owner_;
  long bytes_ = 0;
};

// ---------------------------------------------------------------------------
// CircularBuffer

/// Fixed-capacity FIFO that overwrites its oldest element when full.
/// Storage is sized once at construction and never grows.
template <typename T>
class CircularBuffer {
public:
  explicit CircularBuffer(std::size_t capacity) : data_(capacity) {
    if (capacity == 0) throw ConfigError("circular buffer capacity must be positive");
  }

  /// Appends `v`; returns the element it displaced, if the buffer was full.
  std::optional<T> push(const T& v) {
    if (count_ < data_.size()) {
      data_[(head_ + count_) % data_.size()] = v;
      ++count_;
      return std::nullopt;
    }
    T evicted = std::move(data_[head_]);
    data_[head_] = v;
    head_ = (head_ + 1) % data_.size();
    return evicted;
  }

  /// Element `i` counted from the oldest.
  const T& get(std::size_t i) const {
    if (i >= count_)
      throw IndexError("circular buffer index " + std::to_string(i) + " out of range (size " +
                       std::to_string(count_) + ")");
    return data_[(head_ + i) % data_.size()];
  }

  const T& operator[](std::size_t i) const {
    assert(i < count_);
    return data_[(head_ + i) % data_.size()];
  }

  const T& oldest() const { return get(0); }
  const T& newest() const { return get(count_ - 1); }

  std::size_t size() const { return count_; }
  std::size_t capacity() const { return data_.size(); }
  bool empty() const { return count_ == 0; }
  bool full() const { return count_ == data_.size(); }

  void clear() {
    head_ = 0;
    count_ = 0;
  }

  /// Visits elements oldest to newest.
  template <typename F>
  void for_each(F&& f) const {
    for (std::size_t i = 0; i < count_; ++i) f(data_[(head_ + i) % data_.size()]);
  }

private:
  std::vector<T> data_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// HatStore

struct WaveHandle {
  std::uint32_t slot = 0;
  std::uint32_t generation = 0;

  friend bool operator==(const WaveHandle&, const WaveHandle&) = default;
};

/// Hashed-array-tree wave store over a fixed pool of equal-sized leaves.
///
/// Each wave owns whole leaves (no leaf is shared by two waves), so
/// releasing a wave returns complete leaves to the pool and any later wave
/// that needs no more leaves than are free can always be stored. Element `k`
/// of a wave lives in the wave's `k / L`-th leaf at slot `k % L`.
///
/// When an accountant is attached, every leaf in use is charged at
/// `bytes_per_element * L` bytes under `owner`.
template <typename T>
class HatStore {
public:
  struct Options {
    std::size_t leaf_len = 100;
    std::size_t pool_leaves = 64;
    std::size_t max_wave_len = 1000;
    int bytes_per_element = 2;
    BudgetAccountant* accountant = nullptr;
    std::string owner = "hat";
  };

  explicit HatStore(const Options& opt)
      : opt_(opt),
        max_leaves_per_wave_(opt.leaf_len == 0 ? 0 : (opt.max_wave_len + opt.leaf_len - 1) / opt.leaf_len),
        pool_(opt.leaf_len * opt.pool_leaves),
        free_leaves_(opt.pool_leaves),
        waves_(opt.pool_leaves),
        directory_(opt.pool_leaves * max_leaves_per_wave_) {
    if (opt.leaf_len == 0 || opt.pool_leaves == 0 || opt.max_wave_len == 0)
      throw ConfigError("HAT leaf length, pool size and max wave length must be positive");
    for (std::size_t i = 0; i < opt.pool_leaves; ++i)
      free_leaves_[i] = static_cast<std::uint32_t>(opt.pool_leaves - 1 - i);
    free_count_ = opt.pool_leaves;
    for (std::size_t i = 0; i < waves_.size(); ++i)
      free_slots_.push_back(static_cast<std::uint32_t>(waves_.size() - 1 - i));
  }

  HatStore(const HatStore&) = delete;
  HatStore& operator=(const HatStore&) = delete;

  ~HatStore() {
    if (opt_.accountant && used_leaves() > 0) {
      try {
        opt_.accountant->track(opt_.owner, -leaf_bytes() * static_cast<long>(used_leaves()));
      } catch (...) {
      }
    }
  }

  std::size_t leaves_for(std::size_t len) const {
    return (len + opt_.leaf_len - 1) / opt_.leaf_len;
  }

  long leaf_bytes() const {
    return static_cast<long>(opt_.leaf_len) * opt_.bytes_per_element;
  }

  /// Stores a copy of `samples` in ceil(len / L) dedicated leaves.
  WaveHandle append(std::span<const T> samples) {
    if (samples.empty()) throw Error("cannot store an empty wave");
    if (samples.size() > opt_.max_wave_len)
      throw CapacityError("wave of " + std::to_string(samples.size()) +
                          " samples exceeds maximum " + std::to_string(opt_.max_wave_len));
    const std::size_t need = leaves_for(samples.size());
    if (need > free_count_ || free_slots_.empty())
      throw CapacityError("HAT pool exhausted: need " + std::to_string(need) + " leaves, " +
                          std::to_string(free_count_) + " free");
    if (opt_.accountant) opt_.accountant->track(opt_.owner, leaf_bytes() * static_cast<long>(need));

    const auto slot = free_slots_.back();
    free_slots_.pop_back();
    Wave& w = waves_[slot];
    w.live = true;
    w.length = samples.size();
    w.leaves = need;
    w.sequence = next_sequence_++;
    for (std::size_t l = 0; l < need; ++l) {
      const auto leaf = free_leaves_[--free_count_];
      directory_[slot * max_leaves_per_wave_ + l] = leaf;
      const std::size_t begin = l * opt_.leaf_len;
      const std::size_t n = std::min(opt_.leaf_len, samples.size() - begin);
      std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>(begin), n,
                  pool_.begin() + static_cast<std::ptrdiff_t>(leaf * opt_.leaf_len));
    }
    ++wave_count_;
    element_count_ += samples.size();
    return {slot, w.generation};
  }

  std::vector<T> read(WaveHandle h) const {
    const Wave& w = checked(h);
    std::vector<T> out(w.length);
    copy_to(h, out);
    return out;
  }

  /// Copies the wave into `out`, which must hold at least length(h) elements.
  void copy_to(WaveHandle h, std::span<T> out) const {
    const Wave& w = checked(h);
    if (out.size() < w.length) throw IndexError("output span too small for wave");
    for (std::size_t l = 0; l < w.leaves; ++l) {
      const auto leaf = directory_[h.slot * max_leaves_per_wave_ + l];
      const std::size_t begin = l * opt_.leaf_len;
      const std::size_t n = std::min(opt_.leaf_len, w.length - begin);
      std::copy_n(pool_.begin() + static_cast<std::ptrdiff_t>(leaf * opt_.leaf_len), n,
                  out.begin() + static_cast<std::ptrdiff_t>(begin));
    }
  }

  const T& at(WaveHandle h, std::size_t k) const {
    const Wave& w = checked(h);
    if (k >= w.length) throw IndexError("wave element out of range");
    const auto leaf = directory_[h.slot * max_leaves_per_wave_ + k / opt_.leaf_len];
    return pool_[leaf * opt_.leaf_len + k % opt_.leaf_len];
  }

  std::size_t length(WaveHandle h) const { return checked(h).length; }

  /// Insertion sequence number; lower is older.
  std::uint64_t sequence(WaveHandle h) const { return checked(h).sequence; }

  bool contains(WaveHandle h) const {
    return h.slot < waves_.size() && waves_[h.slot].live && waves_[h.slot].generation == h.generation;
  }

  void release(WaveHandle h) {
    Wave& w = const_cast<Wave&>(checked(h));
    for (std::size_t l = 0; l < w.leaves; ++l)
      free_leaves_[free_count_++] = directory_[h.slot * max_leaves_per_wave_ + l];
    if (opt_.accountant)
      opt_.accountant->track(opt_.owner, -leaf_bytes() * static_cast<long>(w.leaves));
    element_count_ -= w.length;
    --wave_count_;
    w.live = false;
    ++w.generation;
    free_slots_.push_back(h.slot);
  }

  std::size_t leaf_len() const { return opt_.leaf_len; }
  std::size_t pool_leaves() const { return opt_.pool_leaves; }
  std::size_t free_leaves() const { return free_count_; }
  std::size_t used_leaves() const { return opt_.pool_leaves - free_count_; }
  std::size_t waves_stored() const { return wave_count_; }
  std::size_t element_count() const { return element_count_; }

  /// Allocated-but-unused element slots across all stored waves.
  std::size_t slack_elements() const { return used_leaves() * opt_.leaf_len - element_count_; }

  /// Host storage reserved by the pool; constant after construction.
  std::size_t backing_elements() const { return pool_.size(); }

private:
  struct Wave {
    bool live = false;
    std::uint32_t generation = 0;
    std::size_t length = 0;
    std::size_t leaves = 0;
    std::uint64_t sequence = 0;
  };

  const Wave& checked(WaveHandle h) const {
    if (!contains(h)) throw IndexError("stale or invalid wave handle");
    return waves_[h.slot];
  }

  Options opt_;
  std::size_t max_leaves_per_wave_;
  std::vector<T> pool_;
  std::vector<std::uint32_t> free_leaves_;
  std::size_t free_count_ = 0;
  std::vector<Wave> waves_;
  std::vector<std::uint32_t> free_slots_;
  std::vector<std::uint32_t> directory_;
  std::size_t wave_count_ = 0;
  std::size_t element_count_ = 0;
  std::uint64_t next_sequence_ = 0;
};

// ---------------------------------------------------------------------------
// HatVector

/// Growable sequence built from fixed-size leaves taken on demand from a
/// pre-sized pool of `max_len` elements. Used for capture buffers whose final
/// length is unknown while they fill. Leaves in use are charged like HatStore.
template <typename T>
class HatVector {
public:
  HatVector(std::size_t leaf_len, std::size_t max_len, int bytes_per_element = 2,
            BudgetAccountant* accountant = nullptr, std::string owner = "capture")
      : leaf_len_(leaf_len),
        max_leaves_(leaf_len == 0 ? 0 : (max_len + leaf_len - 1) / leaf_len),
        max_len_(max_len),
        bytes_per_element_(bytes_per_element),
        accountant_(accountant),
        owner_(std::move(owner)),
        pool_(max_leaves_ * leaf_len) {
    if (leaf_len == 0 || max_len == 0) throw ConfigError("HatVector sizes must be positive");
  }

  HatVector(const HatVector&) = delete;
  HatVector& operator=(const HatVector&) = delete;
  ~HatVector() { clear(); }

  /// Returns false, leaving the vector unchanged, when `max_len` is reached.
  /// Throws CapacityError if a new leaf cannot be charged.
  bool push_back(const T& v) {
    if (size_ == max_len_) return false;
    if (size_ == leaves_ * leaf_len_) {
      if (accountant_) accountant_->track(owner_, leaf_bytes());
      ++leaves_;
    }
    pool_[size_++] = v;
    return true;
  }

  const T& operator[](std::size_t k) const {
    assert(k < size_);
    return pool_[k];
  }

  /// Drops elements past `len`, returning emptied leaves to the pool.
  void truncate(std::size_t len) {
    if (len >= size_) return;
    size_ = len;
    const std::size_t keep = (len + leaf_len_ - 1) / leaf_len_;
    if (accountant_ && keep < leaves_)
      accountant_->track(owner_, -leaf_bytes() * static_cast<long>(leaves_ - keep));
    leaves_ = keep;
  }

  void clear() { truncate(0); }

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::size_t max_size() const { return max_len_; }
  std::size_t leaves_in_use() const { return leaves_; }

  std::vector<T> to_vector(std::size_t len) const {
    len = std::min(len, size_);
    return std::vector<T>(pool_.begin(), pool_.begin() + static_cast<std::ptrdiff_t>(len));
  }

private:
  long leaf_bytes() const { return static_cast<long>(leaf_len_) * bytes_per_element_; }

  std::size_t leaf_len_;
  std::size_t max_leaves_;
  std::size_t max_len_;
  int bytes_per_element_;
  BudgetAccountant* accountant_;
  std::string owner_;
  // Leaves are laid out contiguously, so leaf l covers [l * L, (l + 1) * L).
  std::vector<T> pool_;
  std::size_t size_ = 0;
  std::size_t leaves_ = 0;
};

}  // namespace pbdetect
