#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <vector>

#include "nvmtree/types.hpp"

namespace nvmtree {

struct RegionConfig {
  std::size_t size_bytes = std::size_t{1} << 20;
  std::uint32_t line_size = 64;
  /// Busy-wait injected after every flush_line.
  std::uint64_t write_latency_ns = 300;
  /// Keep the pending-store log needed for crash enumeration. Off for
  /// benchmarks: stores then cost one relaxed 8-byte write.
  bool track_persistence = false;
};

struct FlushCounters {
  std::uint64_t flushes = 0;
  std::uint64_t fences = 0;
  std::uint64_t injected_delay_ns = 0;

  friend bool operator==(const FlushCounters&, const FlushCounters&) = default;
};

/// A store that is not yet provably durable. `deps` are indices (into the
/// pending list) of stores that must persist before this one can.
struct PendingStore {
  std::uint64_t offset = 0;
  std::uint64_t value = 0;
  std::vector<std::size_t> deps;
  bool flushed = false;
};

/// A crash outcome: the set of pending stores (ascending indices into
/// PersistentRegion::pending_stores()) that reached the media. Valid plans
/// are closed under PendingStore::deps.
struct CrashPlan {
  std::vector<std::size_t> stores;

  friend bool operator==(const CrashPlan&, const CrashPlan&) = default;
};

enum class EventKind : std::uint8_t { store, flush, fence };

struct Event {
  EventKind kind = EventKind::fence;
  std::uint64_t offset = 0;
  std::uint64_t value = 0;
};

/// Simulated byte-addressable persistent memory.
///
/// Persistence model (epoch persistency at cache-line granularity):
///  - stores are 8-byte aligned words and never tear;
///  - stores to one cache line persist in program order;
///  - flush_line(L) orders every earlier store to L before every later store;
///  - fence() orders all earlier stores before all later ones and makes every
///    store covered by an earlier flush durable.
/// Anything else may be lost or reordered by a crash.
class PersistentRegion {
 public:
  explicit PersistentRegion(const RegionConfig& config);
  PersistentRegion(const PersistentRegion& other);
  PersistentRegion& operator=(const PersistentRegion&) = delete;
  ~PersistentRegion();

  const RegionConfig& config() const noexcept { return config_; }
  std::size_t size() const noexcept { return config_.size_bytes; }
  std::uint32_t line_size() const noexcept { return config_.line_size; }

  /// Checked read of the current (volatile-visible) value.
  std::uint64_t load_word(std::uint64_t offset) const;

  /// Unchecked relaxed read for hot paths.
  std::uint64_t load(std::uint64_t offset) const noexcept {
    return std::atomic_ref<std::uint64_t>(words_[offset >> 3]).load(std::memory_order_relaxed);
  }

  /// Address of the word at `offset`; used for cache-line tracing.
  const std::uint64_t* address(std::uint64_t offset) const noexcept { return words_ + (offset >> 3); }

  void store_word(std::uint64_t offset, std::uint64_t value);
  void flush_line(std::uint64_t offset);
  void fence();

  FlushCounters counters() const noexcept;

  // --- crash model (requires track_persistence) ---

  std::set<std::uint64_t> dirty_words() const;
  std::vector<PendingStore> pending_stores() const;
  std::size_t pending_count() const;
  std::uint64_t persisted_word(std::uint64_t offset) const;

  /// All dependency-closed subsets of the pending stores; when there are more
  /// than `cap`, a deterministic sample of `cap` plans that always includes
  /// the empty and the full plan.
  std::vector<CrashPlan> enumerate_crash_plans(std::size_t cap = 1u << 16) const;

  /// The media contents after a crash that persisted exactly `plan`.
  PersistentRegion crash_image(const CrashPlan& plan) const;

  /// Record every store/flush/fence into `log` (nullptr stops recording).
  void set_event_log(std::vector<Event>* log);
  void apply(const Event& event);

 private:
  struct Tracking;

  void check_word(std::uint64_t offset) const;
  void inject_delay() const;
  void track_store(std::uint64_t offset, std::uint64_t value);
  void track_flush(std::uint64_t line);
  void track_fence();

  RegionConfig config_;
  std::uint64_t* words_ = nullptr;
  std::atomic<std::uint64_t> flushes_{0};
  std::atomic<std::uint64_t> fences_{0};
  std::unique_ptr<Tracking> tracking_;
  mutable std::mutex tracking_mutex_;
  std::vector<Event>* event_log_ = nullptr;
};

}  // namespace nvmtree
