#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace nvmtree {

/// Byte addresses read during one logical operation. Each operation starts
/// with a cold cache, so every distinct line is one miss.
struct AccessTrace {
  std::vector<std::uintptr_t> touched;
  std::uint32_t line_size = 64;

  void touch(const void* address) { touched.push_back(reinterpret_cast<std::uintptr_t>(address)); }
  void clear() noexcept { touched.clear(); }
};

/// Trace sink that records nothing; search paths are templated on the sink.
struct NullTrace {
  void touch(const void*) noexcept {}
};

std::size_t touched_lines(const AccessTrace& trace);

/// Low-overhead interval timer for per-operation latency samples. Reads the
/// invariant TSC where the CPU advertises one (calibrated once against
/// steady_clock), steady_clock otherwise.
class OpTimer {
 public:
  using Tick = std::uint64_t;

  static Tick now() noexcept;
  static std::uint64_t to_ns(Tick elapsed) noexcept;
  static bool uses_tsc() noexcept;
};

class LatencyStats {
 public:
  LatencyStats() = default;
  explicit LatencyStats(std::vector<std::uint64_t> samples) : samples_(std::move(samples)) {}

  void add(std::uint64_t ns) { samples_.push_back(ns); }
  void reserve(std::size_t n) { samples_.reserve(n); }
  void merge(const LatencyStats& other);

  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  std::span<const std::uint64_t> samples() const noexcept { return samples_; }

  /// Nearest-rank percentile: the ceil(p*n)-th smallest sample.
  std::uint64_t percentile(double p) const;

  /// exp(mean(ln s)). Every sample must be positive.
  double geo_mean() const;

  double mean() const;

 private:
  std::vector<std::uint64_t> samples_;
};

}  // namespace nvmtree
