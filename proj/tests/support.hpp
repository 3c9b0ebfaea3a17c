#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "nvmtree/node_layout.hpp"
#include "nvmtree/persistent_region.hpp"

namespace nvmtree::testing {

/// A tracked region with one formatted, durable node at offset 64.
struct NodeFixture {
  NodeGeometry geo;
  PersistentRegion region;
  BumpAllocator allocator;
  std::uint64_t node;

  NodeFixture(std::uint32_t node_size, NodeKind kind, const std::vector<Entry>& entries, std::uint64_t ring = 0,
              std::size_t spare_nodes = 2, bool track = true)
      : geo(NodeGeometry::make(node_size)),
        region(RegionConfig{64 + (spare_nodes + 1) * geo.footprint(), 64, 0, track}),
        allocator(64, 64 + (spare_nodes + 1) * geo.footprint(), geo.footprint()),
        node(allocator.allocate()) {
    NodeHeader h;
    h.kind = kind;
    h.ring = ring;
    LineFlusher f(region);
    format_node(region, f, geo, node, h, entries);
    f.commit();
  }
};

inline std::vector<Entry> entries_for(const std::vector<Key>& keys) {
  std::vector<Entry> out;
  for (Key k : keys) out.push_back({k, k * 10 + 2});
  return out;
}

/// Replays `log` on a copy of `before` and, after every event, calls
/// `check` on the crash image of every crash plan. Returns the plan count.
inline std::size_t for_each_crash_image(const PersistentRegion& before, const std::vector<Event>& log,
                                        const std::function<void(PersistentRegion&)>& check) {
  PersistentRegion replica(before);
  std::size_t plans = 0;
  auto visit = [&] {
    for (const CrashPlan& p : replica.enumerate_crash_plans(std::size_t{1} << 16)) {
      PersistentRegion img = replica.crash_image(p);
      check(img);
      ++plans;
    }
  };
  visit();
  for (const Event& e : log) {
    replica.apply(e);
    visit();
  }
  return plans;
}

/// Runs `op` on `region` while recording its events.
inline std::vector<Event> record(PersistentRegion& region, const std::function<void()>& op) {
  std::vector<Event> log;
  region.set_event_log(&log);
  op();
  region.set_event_log(nullptr);
  return log;
}

}  // namespace nvmtree::testing
