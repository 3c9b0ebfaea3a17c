#include "nvmtree/bench.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "nvmtree/crash_harness.hpp"
#include "nvmtree/workload.hpp"

namespace nvmtree {

namespace {

template <class E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  std::string allowed;
  for (const auto& [name, value] : table) allowed += std::string(allowed.empty() ? "" : "|") + name;
  throw Error(Errc::config, std::string("unknown ") + what + " '" + s + "' (expected " + allowed + ")");
}

}  // namespace

Variant parse_variant(const std::string& s) {
  return parse_enum<Variant>(s, {{"fastfair", Variant::fastfair}, {"circ", Variant::circ}}, "variant");
}
AccelKind parse_accel(const std::string& s) {
  return parse_enum<AccelKind>(
      s, {{"none", AccelKind::none}, {"sentinel", AccelKind::sentinel}, {"fingerprint", AccelKind::fingerprint}},
      "accelerator");
}
SearchKind parse_search(const std::string& s) {
  return parse_enum<SearchKind>(s, {{"linear", SearchKind::linear}, {"binary", SearchKind::binary}}, "search");
}
Mode parse_mode(const std::string& s) {
  return parse_enum<Mode>(
      s, {{"micro", Mode::micro}, {"ycsb", Mode::ycsb}, {"crashtest", Mode::crashtest}, {"readamp", Mode::readamp}},
      "mode");
}
Format parse_format(const std::string& s) {
  return parse_enum<Format>(s, {{"csv", Format::csv}, {"json", Format::json}}, "format");
}

const char* to_string(Variant v) { return v == Variant::circ ? "circ" : "fastfair"; }

const char* to_string(Mode m) {
  switch (m) {
    case Mode::micro: return "micro";
    case Mode::ycsb: return "ycsb";
    case Mode::crashtest: return "crashtest";
    case Mode::readamp: return "readamp";
  }
  return "?";
}

std::uint32_t RunConfig::effective_node_size() const {
  if (node_size) return *node_size;
  return mode == Mode::crashtest ? 128 : 4096;
}

std::uint64_t RunConfig::effective_count() const {
  if (count) return *count;
  return mode == Mode::crashtest ? 200 : 100000;
}

TreeConfig RunConfig::tree_config() const {
  TreeConfig t;
  t.leaf_kind = variant == Variant::circ ? NodeKind::circular : NodeKind::linear;
  t.node_size = effective_node_size();
  t.accel = accel;
  t.search = search;
  return t;
}

void RunConfig::validate() const {
  if (threads != 1 && threads != 2 && threads != 4 && threads != 8) {
    throw Error(Errc::config, "threads must be 1, 2, 4 or 8");
  }
  const std::uint32_t ns = effective_node_size();
  if (mode == Mode::crashtest) {
    if (ns < 128 || ns > 4096 || ns % 64 != 0) {
      throw Error(Errc::config, "crashtest node size must be a multiple of 64 in [128, 4096]");
    }
    if (threads != 1) throw Error(Errc::config, "crashtest runs single-threaded");
  } else if (ns != 512 && ns != 1024 && ns != 2048 && ns != 4096) {
    throw Error(Errc::config, "node size must be 512, 1024, 2048 or 4096");
  }
  if (search == SearchKind::binary && (accel != AccelKind::none || variant != Variant::fastfair)) {
    throw Error(Errc::config, "binary search is only available with --variant fastfair and --accel none");
  }
  if (!trace.empty() && mode != Mode::ycsb) throw Error(Errc::config, "--trace is only used in ycsb mode");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw Error(Errc::config, "warm-up fraction must be in [0, 1)");
  }
}

bool Report::ok() const {
  return std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.crash_failures == 0; });
}

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kCategories = 3;

struct PhaseResult {
  std::array<LatencyStats, kCategories> stats;
  std::array<std::uint64_t, kCategories> ops{};
  double seconds = 0;
  FlushCounters delta;
};

/// Runs fn(thread, i) for i in [0, n), op i on worker i % threads. fn
/// returns the op's category. The first warmup*n ops are not sampled.
template <class Fn>
PhaseResult timed_phase(const PersistentRegion& region, std::size_t n, std::uint32_t threads, double warmup,
                        Fn&& fn) {
  OpTimer::now();  // calibrate outside the timed region
  const FlushCounters before = region.counters();
  const auto warm = static_cast<std::size_t>(static_cast<double>(n) * warmup);
  std::vector<PhaseResult> per(threads);
  auto worker = [&](std::uint32_t t) {
    PhaseResult& r = per[t];
    for (auto& s : r.stats) s.reserve(n / threads + 1);
    for (std::size_t i = t; i < n; i += threads) {
      const OpTimer::Tick start = OpTimer::now();
      const std::size_t cat = fn(t, i);
      const std::uint64_t ns = OpTimer::to_ns(OpTimer::now() - start);
      ++r.ops[cat];
      if (i >= warm) r.stats[cat].add(std::max<std::uint64_t>(ns, 1));
    }
  };
  const auto start = Clock::now();
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::uint32_t t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  PhaseResult out;
  out.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  for (const PhaseResult& r : per) {
    for (std::size_t c = 0; c < kCategories; ++c) {
      out.stats[c].merge(r.stats[c]);
      out.ops[c] += r.ops[c];
    }
  }
  const FlushCounters after = region.counters();
  out.delta.flushes = after.flushes - before.flushes;
  out.delta.fences = after.fences - before.fences;
  out.delta.injected_delay_ns = after.injected_delay_ns - before.injected_delay_ns;
  return out;
}

ReportRow base_row(const RunConfig& c) {
  ReportRow r;
  r.mode = to_string(c.mode);
  r.variant = to_string(c.variant);
  r.accel = to_string(c.accel);
  r.search = to_string(c.search);
  r.node_size = c.effective_node_size();
  r.threads = c.threads;
  return r;
}

ReportRow timing_row(const RunConfig& c, const std::string& op, const PhaseResult& p, std::size_t cat) {
  ReportRow r = base_row(c);
  r.op = op;
  r.count = p.ops[cat];
  const LatencyStats& s = p.stats[cat];
  if (!s.empty()) {
    r.geo_mean_ns = s.geo_mean();
    r.p99_ns = s.percentile(0.99);
  }
  r.flushes = p.delta.flushes;
  r.fences = p.delta.fences;
  r.ops_per_sec = p.seconds > 0 ? static_cast<double>(r.count) / p.seconds : 0.0;
  return r;
}

void add_trace_stats(ReportRow& row, const BPlusTree& tree, const std::vector<Key>& keys) {
  if (keys.empty()) return;
  std::uint64_t total = 0;
  std::uint64_t worst = 0;
  AccessTrace trace;
  for (const Key k : keys) {
    trace.clear();
    tree.search_traced(k, trace);
    const std::uint64_t lines = touched_lines(trace);
    total += lines;
    worst = std::max(worst, lines);
  }
  row.mean_touched_lines = static_cast<double>(total) / static_cast<double>(keys.size());
  row.max_touched_lines = worst;
}

std::size_t region_bytes(std::uint64_t keys, const NodeGeometry& geo) {
  // Leaves are at least half full; internal levels add well under 10%.
  const std::uint64_t leaves = keys / (geo.capacity() / 2 - 1) + 1;
  const std::uint64_t nodes = leaves + leaves / 8 + 64;
  return Superblock::kSize + nodes * geo.footprint();
}

std::vector<Key> sample_keys(const std::vector<Key>& from, std::size_t n, std::uint64_t seed) {
  std::vector<Key> out;
  if (from.empty()) return out;
  out.reserve(n);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, from.size() - 1);
  for (std::size_t i = 0; i < n; ++i) out.push_back(from[pick(rng)]);
  return out;
}

Report run_micro(const RunConfig& c) {
  Report report;
  const std::uint64_t n = c.effective_count();
  if (n == 0) return report;
  const TreeConfig tc = c.tree_config();
  const NodeGeometry geo = NodeGeometry::make(tc.node_size);
  PersistentRegion region(RegionConfig{region_bytes(n, geo), 64, c.write_latency_ns, false});
  auto tree = BPlusTree::create(region, tc);

  const std::vector<Key> keys = uniform_keys(n, c.seed);
  const PhaseResult load = timed_phase(region, n, c.threads, c.warmup_fraction, [&](std::uint32_t, std::size_t i) {
    tree->insert(keys[i], ValueRef{i + 2});
    return std::size_t{0};
  });
  report.rows.push_back(timing_row(c, "insert", load, 0));

  const std::vector<Key> targets = sample_keys(keys, n, c.seed ^ 0x5151);
  std::atomic<std::uint64_t> misses{0};
  const PhaseResult search = timed_phase(region, n, c.threads, c.warmup_fraction, [&](std::uint32_t, std::size_t i) {
    if (!tree->search(targets[i])) misses.fetch_add(1, std::memory_order_relaxed);
    return std::size_t{0};
  });
  if (misses.load() != 0) throw Error(Errc::corruption, std::to_string(misses.load()) + " loaded keys not found");
  ReportRow row = timing_row(c, "search", search, 0);
  const std::size_t sample = std::min<std::size_t>(n, c.traced_sample);
  add_trace_stats(row, *tree, std::vector<Key>(targets.begin(), targets.begin() + sample));
  report.rows.push_back(row);
  return report;
}

Report run_ycsb(const RunConfig& c) {
  Report report;
  const std::uint64_t n = c.effective_count();
  if (n == 0) return report;
  const TreeConfig tc = c.tree_config();
  const NodeGeometry geo = NodeGeometry::make(tc.node_size);

  std::vector<Op> load;
  std::vector<Op> run;
  if (!c.trace.empty()) {
    run = load_trace_file(c.trace);
  } else {
    WorkloadSpec spec;
    spec.record_count = n;
    spec.op_count = n;
    spec.seed = c.seed;
    Workload w = gen_workload(spec);
    load = std::move(w.load);
    run = std::move(w.run);
  }
  const std::uint64_t inserts =
      load.size() + static_cast<std::uint64_t>(std::count_if(run.begin(), run.end(), [](const Op& op) {
        return op.type == OpType::insert;
      }));
  PersistentRegion region(RegionConfig{region_bytes(inserts, geo), 64, c.write_latency_ns, false});
  auto tree = BPlusTree::create(region, tc);
  ValueStore values(WorkloadSpec{}.value_size, c.threads);

  std::atomic<std::uint64_t> sink{0};
  auto execute = [&](std::uint32_t t, const Op& op) -> std::size_t {
    try {
      switch (op.type) {
        case OpType::insert:
          tree->insert(op.key, values.allocate(t, op.key));
          return 0;
        case OpType::read:
          if (const auto v = tree->search(op.key)) {
            std::uint64_t first = 0;
            std::memcpy(&first, ValueStore::data(*v), sizeof first);
            sink.fetch_add(first & 1, std::memory_order_relaxed);
          }
          return 1;
        case OpType::update: {
          const ValueRef fresh = values.allocate(t, op.key);
          values.release(t, tree->update(op.key, fresh));
          return 2;
        }
      }
    } catch (const Error& e) {
      // Replayed traces may name missing or repeated keys.
      if (e.code() != Errc::not_found && e.code() != Errc::duplicate_key) throw;
    }
    return static_cast<std::size_t>(op.type);
  };

  if (!load.empty()) {
    const PhaseResult p = timed_phase(region, load.size(), c.threads, c.warmup_fraction,
                                      [&](std::uint32_t t, std::size_t i) { return execute(t, load[i]); });
    report.rows.push_back(timing_row(c, "load-insert", p, 0));
  }
  const std::string phase = c.trace.empty() ? "run" : "trace";
  const PhaseResult p = timed_phase(region, run.size(), c.threads, c.warmup_fraction,
                                    [&](std::uint32_t t, std::size_t i) { return execute(t, run[i]); });
  static constexpr std::array<const char*, kCategories> kNames{"insert", "read", "update"};
  for (std::size_t cat = 0; cat < kCategories; ++cat) {
    if (p.ops[cat] == 0) continue;
    ReportRow row = timing_row(c, phase + "-" + kNames[cat], p, cat);
    if (cat == 1) {
      std::vector<Key> reads;
      for (const Op& op : run) {
        if (op.type == OpType::read && reads.size() < c.traced_sample) reads.push_back(op.key);
      }
      add_trace_stats(row, *tree, reads);
    }
    report.rows.push_back(row);
  }
  return report;
}

Report run_crashtest(const RunConfig& c) {
  Report report;
  const std::uint64_t n = c.effective_count();
  if (n == 0) return report;
  const TreeConfig tc = c.tree_config();
  const NodeGeometry geo = NodeGeometry::make(tc.node_size);
  PersistentRegion region(RegionConfig{Superblock::kSize + (2 * n + 64) * geo.footprint(), 64, 0, true});
  auto tree = BPlusTree::create(region, tc);

  std::mt19937_64 rng(c.seed);
  std::uniform_int_distribution<Key> key_dist(0, 16 * n + 16);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::set<Key> present;
  std::uint64_t next_value = 2;
  CrashReport crashes;
  const FlushCounters before = region.counters();
  for (std::uint64_t i = 0; i < n; ++i) {
    const double r = unit(rng);
    std::function<void(BPlusTree&)> op;
    if (present.empty() || r < 0.6) {
      Key k = key_dist(rng);
      while (present.count(k)) k = key_dist(rng);
      present.insert(k);
      const ValueRef v{next_value++};
      op = [k, v](BPlusTree& t) { t.insert(k, v); };
    } else {
      auto it = present.begin();
      std::advance(it, std::uniform_int_distribution<std::size_t>(0, present.size() - 1)(rng));
      const Key k = *it;
      if (r < 0.85) {
        present.erase(it);
        op = [k](BPlusTree& t) { t.erase(k); };
      } else {
        const ValueRef v{next_value++};
        op = [k, v](BPlusTree& t) { t.update(k, v); };
      }
    }
    crashes.merge(check_crashes(*tree, op));
  }
  const FlushCounters after = region.counters();
  ReportRow row = base_row(c);
  row.op = "crash";
  row.count = crashes.operations;
  row.flushes = after.flushes - before.flushes;
  row.fences = after.fences - before.fences;
  row.crash_plans = crashes.plans;
  row.crash_failures = crashes.failures;
  report.rows.push_back(row);
  report.messages = crashes.messages;
  return report;
}

Report run_readamp(const RunConfig& c) {
  Report report;
  if (c.effective_count() == 0) return report;
  const TreeConfig tc = c.tree_config();
  const NodeGeometry geo = NodeGeometry::make(tc.node_size);
  PersistentRegion region(RegionConfig{Superblock::kSize + 4 * geo.footprint(), 64, 0, false});
  auto tree = BPlusTree::create(region, tc);
  std::vector<Key> keys;
  for (std::uint32_t i = 0; i < tree->leaf_capacity(); ++i) {
    keys.push_back(10 * (Key{i} + 1));
    tree->insert(keys.back(), ValueRef{Key{i} + 2});
  }
  ReportRow row = base_row(c);
  row.op = "search";
  row.count = keys.size();
  add_trace_stats(row, *tree, keys);
  report.rows.push_back(row);
  return report;
}

std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

Report run_benchmark(const RunConfig& config) {
  config.validate();
  switch (config.mode) {
    case Mode::micro: return run_micro(config);
    case Mode::ycsb: return run_ycsb(config);
    case Mode::crashtest: return run_crashtest(config);
    case Mode::readamp: return run_readamp(config);
  }
  return {};
}

std::string to_csv(const Report& report) {
  std::ostringstream out;
  out << "schema_version,mode,variant,accel,search,node_size,threads,op,count,geo_mean_ns,p99_ns,"
         "mean_touched_lines,max_touched_lines,flushes,fences,ops_per_sec,crash_plans,crash_failures\n";
  for (const ReportRow& r : report.rows) {
    out << kReportSchemaVersion << ',' << r.mode << ',' << r.variant << ',' << r.accel << ',' << r.search << ','
        << r.node_size << ',' << r.threads << ',' << r.op << ',' << r.count << ',' << fmt(r.geo_mean_ns, 3) << ','
        << r.p99_ns << ',' << fmt(r.mean_touched_lines, 4) << ',' << r.max_touched_lines << ',' << r.flushes << ','
        << r.fences << ',' << fmt(r.ops_per_sec, 1) << ',' << r.crash_plans << ',' << r.crash_failures << '\n';
  }
  return out.str();
}

std::string to_json(const Report& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const ReportRow& r : report.rows) {
    rows.push_back({{"mode", r.mode},
                    {"variant", r.variant},
                    {"accel", r.accel},
                    {"search", r.search},
                    {"node_size", r.node_size},
                    {"threads", r.threads},
                    {"op", r.op},
                    {"count", r.count},
                    {"geo_mean_ns", r.geo_mean_ns},
                    {"p99_ns", r.p99_ns},
                    {"mean_touched_lines", r.mean_touched_lines},
                    {"max_touched_lines", r.max_touched_lines},
                    {"flushes", r.flushes},
                    {"fences", r.fences},
                    {"ops_per_sec", r.ops_per_sec},
                    {"crash_plans", r.crash_plans},
                    {"crash_failures", r.crash_failures}});
  }
  nlohmann::json doc{{"schema_version", kReportSchemaVersion}, {"rows", rows}};
  if (!report.messages.empty()) doc["messages"] = report.messages;
  return doc.dump(2) + "\n";
}

}  // namespace nvmtree
