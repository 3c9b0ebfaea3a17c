#include "nvmtree/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_set>

#if defined(__x86_64__) || defined(__i386__)
#include <cpuid.h>
#include <x86intrin.h>
#define NVMTREE_HAVE_TSC 1
#endif

#include "nvmtree/types.hpp"

namespace nvmtree {

std::size_t touched_lines(const AccessTrace& trace) {
  std::unordered_set<std::uintptr_t> lines;
  for (std::uintptr_t a : trace.touched) lines.insert(a / trace.line_size);
  return lines.size();
}

namespace {

std::uint64_t steady_ns() noexcept {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

struct TscCalibration {
  bool enabled = false;
  double ns_per_tick = 1.0;

  TscCalibration() {
#ifdef NVMTREE_HAVE_TSC
    unsigned a = 0, b = 0, c = 0, d = 0;
    if (__get_cpuid(0x80000000u, &a, &b, &c, &d) == 0 || a < 0x80000007u) return;
    __get_cpuid(0x80000007u, &a, &b, &c, &d);
    if ((d & (1u << 8)) == 0) return;  // no invariant TSC
    const std::uint64_t t0 = steady_ns();
    const std::uint64_t c0 = __rdtsc();
    std::uint64_t t1 = t0;
    while (t1 - t0 < 20'000'000) t1 = steady_ns();
    const std::uint64_t c1 = __rdtsc();
    if (c1 <= c0) return;
    ns_per_tick = static_cast<double>(t1 - t0) / static_cast<double>(c1 - c0);
    enabled = true;
#endif
  }
};

const TscCalibration& calibration() {
  static const TscCalibration cal;
  return cal;
}

}  // namespace

OpTimer::Tick OpTimer::now() noexcept {
#ifdef NVMTREE_HAVE_TSC
  if (calibration().enabled) return __rdtsc();
#endif
  return steady_ns();
}

std::uint64_t OpTimer::to_ns(Tick elapsed) noexcept {
  const TscCalibration& cal = calibration();
  if (!cal.enabled) return elapsed;
  return static_cast<std::uint64_t>(std::llround(static_cast<double>(elapsed) * cal.ns_per_tick));
}

bool OpTimer::uses_tsc() noexcept { return calibration().enabled; }

void LatencyStats::merge(const LatencyStats& other) {
  samples_.insert(samples_.end(), other.samples_.begin(), other.samples_.end());
}

std::uint64_t LatencyStats::percentile(double p) const {
  if (samples_.empty()) throw Error(Errc::empty_stats, "percentile of no samples");
  if (!(p > 0.0 && p <= 1.0)) throw Error(Errc::domain, "percentile fraction must be in (0, 1]");
  std::vector<std::uint64_t> sorted(samples_);
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
  return sorted[rank - 1];
}

double LatencyStats::geo_mean() const {
  if (samples_.empty()) throw Error(Errc::empty_stats, "geometric mean of no samples");
  double log_sum = 0.0;
  for (std::uint64_t s : samples_) {
    if (s == 0) throw Error(Errc::domain, "geometric mean needs positive samples");
    log_sum += std::log(static_cast<double>(s));
  }
  return std::exp(log_sum / static_cast<double>(samples_.size()));
}

double LatencyStats::mean() const {
  if (samples_.empty()) throw Error(Errc::empty_stats, "mean of no samples");
  double sum = 0.0;
  for (std::uint64_t s : samples_) sum += static_cast<double>(s);
  return sum / static_cast<double>(samples_.size());
}

}  // namespace nvmtree
