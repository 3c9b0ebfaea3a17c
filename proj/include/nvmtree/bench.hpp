#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nvmtree/bplus_tree.hpp"

namespace nvmtree {

enum class Variant : std::uint8_t { fastfair, circ };
enum class Mode : std::uint8_t { micro, ycsb, crashtest, readamp };
enum class Format : std::uint8_t { csv, json };

Variant parse_variant(const std::string& s);
AccelKind parse_accel(const std::string& s);
SearchKind parse_search(const std::string& s);
Mode parse_mode(const std::string& s);
Format parse_format(const std::string& s);
const char* to_string(Variant v);
const char* to_string(Mode m);

inline constexpr int kReportSchemaVersion = 1;

struct RunConfig {
  Variant variant = Variant::fastfair;
  AccelKind accel = AccelKind::none;
  SearchKind search = SearchKind::linear;
  /// Unset: 4096, or 128 in crashtest mode.
  std::optional<std::uint32_t> node_size;
  std::uint32_t threads = 1;
  /// Unset: 100000 ops, or 200 in crashtest mode.
  std::optional<std::uint64_t> count;
  std::uint64_t write_latency_ns = 300;
  Mode mode = Mode::micro;
  std::uint64_t seed = 42;
  std::string trace;
  double warmup_fraction = 0.05;
  std::uint64_t traced_sample = 10000;

  std::uint32_t effective_node_size() const;
  std::uint64_t effective_count() const;
  TreeConfig tree_config() const;

  /// Throws Errc::config explaining the invalid combination.
  void validate() const;
};

struct ReportRow {
  std::string mode;
  std::string variant;
  std::string accel;
  std::string search;
  std::uint32_t node_size = 0;
  std::uint32_t threads = 0;
  std::string op;
  std::uint64_t count = 0;
  double geo_mean_ns = 0;
  std::uint64_t p99_ns = 0;
  double mean_touched_lines = 0;
  std::uint64_t max_touched_lines = 0;
  std::uint64_t flushes = 0;
  std::uint64_t fences = 0;
  double ops_per_sec = 0;
  std::uint64_t crash_plans = 0;
  std::uint64_t crash_failures = 0;
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<std::string> messages;  // crashtest failure details
  bool ok() const;
};

Report run_benchmark(const RunConfig& config);

std::string to_csv(const Report& report);
std::string to_json(const Report& report);

}  // namespace nvmtree
