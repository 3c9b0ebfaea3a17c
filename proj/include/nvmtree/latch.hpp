#pragma once

#include <atomic>
#include <cstdint>
#include <thread>

namespace nvmtree {

/// Reader-writer spin latch in one word: bit 0 is the writer, readers count
/// in steps of 2. Yields after a short spin so oversubscribed threads make
/// progress. Satisfies SharedLockable.
class RwLatch {
 public:
  void lock_shared() {
    for (unsigned spins = 0;; ++spins) {
      std::uint32_t s = state_.load(std::memory_order_relaxed);
      if ((s & kWriter) == 0 &&
          state_.compare_exchange_weak(s, s + kReader, std::memory_order_acquire, std::memory_order_relaxed)) {
        return;
      }
      backoff(spins);
    }
  }

  bool try_lock_shared() {
    std::uint32_t s = state_.load(std::memory_order_relaxed);
    return (s & kWriter) == 0 &&
           state_.compare_exchange_strong(s, s + kReader, std::memory_order_acquire, std::memory_order_relaxed);
  }

  void unlock_shared() { state_.fetch_sub(kReader, std::memory_order_release); }

  void lock() {
    for (unsigned spins = 0;; ++spins) {
      std::uint32_t expected = 0;
      if (state_.compare_exchange_weak(expected, kWriter, std::memory_order_acquire, std::memory_order_relaxed)) {
        return;
      }
      backoff(spins);
    }
  }

  bool try_lock() {
    std::uint32_t expected = 0;
    return state_.compare_exchange_strong(expected, kWriter, std::memory_order_acquire, std::memory_order_relaxed);
  }

  void unlock() { state_.fetch_and(~kWriter, std::memory_order_release); }

 private:
  static constexpr std::uint32_t kWriter = 1;
  static constexpr std::uint32_t kReader = 2;

  static void backoff(unsigned spins) {
    if (spins < 64) {
#if defined(__x86_64__) || defined(__i386__)
      __builtin_ia32_pause();
#endif
    } else {
      std::this_thread::yield();
    }
  }

  std::atomic<std::uint32_t> state_{0};
};

}  // namespace nvmtree
