#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <new>
#include <optional>
#include <vector>

#include "nvmtree/types.hpp"

namespace nvmtree {

/// Minimal allocator that places vector storage on cache-line boundaries so
/// traced accelerator reads map onto whole lines.
template <class T>
struct LineAlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  LineAlignedAllocator() = default;
  template <class U>
  LineAlignedAllocator(const LineAlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const LineAlignedAllocator<U>&) const noexcept {
    return true;
  }
};

/// Per-leaf array of line minimums.
///
/// Logical group g covers positions [4g, 4g + 4). sentinel(g) is the key at
/// position 4g, or kKeyMax when the group is empty. sentinel(0) is never
/// compared during a locate, so the probe array holds sentinels 1..G-1 only:
/// probe i-1 is sentinel i. This keeps a 2KB node's probes in 4 lines and a
/// 512B node's in 1.
///
/// Probes for nodes up to 4KB are stored inline (line aligned) so they sit
/// next to the owning node's latch; larger nodes spill to the heap.
/// Lives in volatile memory and never issues flushes or fences.
class alignas(64) SentinelArray {
 public:
  static constexpr std::uint32_t kPerLine = 4;
  static constexpr std::uint32_t kInlineProbes = 64;

  explicit SentinelArray(std::uint32_t groups);

  std::uint32_t groups() const noexcept { return groups_; }
  std::uint32_t probe_count() const noexcept { return groups_ - 1; }
  /// Cache lines spanned by the probe array.
  std::uint32_t storage_lines() const noexcept { return (probe_count() * 8 + 63) / 64; }

  Key sentinel(std::uint32_t g) const;
  const Key* probe_data() const noexcept { return spill_.empty() ? inline_ : spill_.data(); }

  template <class KeyAt>
  void build(std::uint32_t count, KeyAt&& key_at) {
    sync(count, 0, groups_ * kPerLine - 1, key_at);
  }

  /// Recomputes the groups covering logical positions [lo, hi].
  template <class KeyAt>
  void sync(std::uint32_t count, std::uint32_t lo, std::uint32_t hi, KeyAt&& key_at) {
    const std::uint32_t g_end = std::min(hi / kPerLine + 1, groups_);
    for (std::uint32_t g = lo / kPerLine; g < g_end; ++g) {
      const std::uint32_t pos = g * kPerLine;
      set(g, pos < count ? key_at(pos) : kKeyMax);
    }
  }

  /// First logical position of the group that may hold `key`, clamped to the
  /// last non-empty group.
  template <class Trace>
  std::uint32_t locate(Key key, std::uint32_t count, Trace& trace) const {
    return locate(probe_data(), groups_, key, count, trace);
  }

  /// Same walk over a raw probe array of `groups - 1` entries.
  template <class Trace>
  static std::uint32_t locate(const Key* p, std::uint32_t groups, Key key, std::uint32_t count, Trace& trace) {
    std::uint32_t begin = 0;
    for (std::uint32_t i = 1; i < groups; ++i) {
      trace.touch(p + i - 1);
      if (key < p[i - 1]) break;
      begin += kPerLine;
    }
    if (count == 0) return 0;
    const std::uint32_t last = (count - 1) / kPerLine * kPerLine;
    return begin > last ? last : begin;
  }

  /// Inline probe storage; valid as the probe array when
  /// groups - 1 <= kInlineProbes. Needs no load to compute.
  const Key* inline_probes() const noexcept { return inline_; }

  friend bool operator==(const SentinelArray& a, const SentinelArray& b) {
    return a.groups_ == b.groups_ && a.first_ == b.first_ &&
           std::equal(a.probe_data(), a.probe_data() + a.probe_count(), b.probe_data());
  }

 private:
  void set(std::uint32_t g, Key k) {
    if (g == 0) {
      first_ = k;
    } else {
      (spill_.empty() ? inline_ : spill_.data())[g - 1] = k;
    }
  }

  std::uint32_t groups_;
  Key first_ = kKeyMax;
  std::vector<Key, LineAlignedAllocator<Key>> spill_;
  alignas(64) Key inline_[kInlineProbes];
};

/// 64-bit finalizer (murmur3 fmix64) reduced to its low byte.
std::uint8_t fingerprint_byte(Key key) noexcept;

/// One fingerprint byte per logical position; bytes past the count are 0.
/// Inline up to 256 positions, heap beyond.
class alignas(64) FingerprintArray {
 public:
  static constexpr std::uint32_t kInlineBytes = 256;

  explicit FingerprintArray(std::uint32_t capacity);

  std::uint32_t capacity() const noexcept { return capacity_; }
  std::uint8_t at(std::uint32_t i) const;
  const std::uint8_t* data() const noexcept { return spill_.empty() ? inline_ : spill_.data(); }

  template <class KeyAt>
  void build(std::uint32_t count, KeyAt&& key_at) {
    sync(count, 0, capacity() - 1, key_at);
  }

  template <class KeyAt>
  void sync(std::uint32_t count, std::uint32_t lo, std::uint32_t hi, KeyAt&& key_at) {
    std::uint8_t* fp = spill_.empty() ? inline_ : spill_.data();
    const std::uint32_t end = std::min(hi + 1, capacity());
    for (std::uint32_t i = lo; i < end; ++i) fp[i] = i < count ? fingerprint_byte(key_at(i)) : 0;
  }

  /// Scans the bytes of [0, count); every match is confirmed with a full key
  /// comparison through `key_at`. Returns the matching logical position.
  template <class KeyAt, class Trace>
  std::optional<std::uint32_t> find(Key key, std::uint32_t count, KeyAt&& key_at, Trace& trace,
                                    std::uint32_t* comparisons = nullptr) const {
    return find(data(), key, count, key_at, trace, comparisons);
  }

  /// Same scan over a raw byte array.
  template <class KeyAt, class Trace>
  static std::optional<std::uint32_t> find(const std::uint8_t* p, Key key, std::uint32_t count, KeyAt&& key_at,
                                           Trace& trace, std::uint32_t* comparisons = nullptr) {
    const std::uint8_t want = fingerprint_byte(key);
    std::uint32_t cmp = 0;
    std::optional<std::uint32_t> hit;
    for (std::uint32_t i = 0; i < count; ++i) {
      trace.touch(p + i);
      if (p[i] != want) continue;
      ++cmp;
      if (key_at(i) == key) {
        hit = i;
        break;
      }
    }
    if (comparisons) *comparisons = cmp;
    return hit;
  }

  /// Inline byte storage; valid when capacity <= kInlineBytes.
  const std::uint8_t* inline_bytes() const noexcept { return inline_; }

  friend bool operator==(const FingerprintArray& a, const FingerprintArray& b) {
    return a.capacity_ == b.capacity_ && std::equal(a.data(), a.data() + a.capacity_, b.data());
  }

 private:
  std::uint32_t capacity_;
  std::vector<std::uint8_t, LineAlignedAllocator<std::uint8_t>> spill_;
  alignas(64) std::uint8_t inline_[kInlineBytes];
};

}  // namespace nvmtree
