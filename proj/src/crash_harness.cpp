#include "nvmtree/crash_harness.hpp"

namespace nvmtree {

namespace {

constexpr std::size_t kMaxMessages = 8;

void note(CrashReport& report, std::string message) {
  ++report.failures;
  if (report.messages.size() < kMaxMessages) report.messages.push_back(std::move(message));
}

}  // namespace

void CrashReport::merge(const CrashReport& other) {
  operations += other.operations;
  crash_points += other.crash_points;
  plans += other.plans;
  failures += other.failures;
  for (const auto& m : other.messages) {
    if (messages.size() < kMaxMessages) messages.push_back(m);
  }
}

CrashReport check_crashes(BPlusTree& tree, const std::function<void(BPlusTree&)>& op, std::size_t plan_cap) {
  PersistentRegion& region = tree.region();
  if (!region.config().track_persistence) {
    throw Error(Errc::config, "crash checking needs a region with persistence tracking");
  }
  const TreeConfig config = tree.config();
  const PersistentRegion snapshot(region);
  const KvState pre = tree.scan_all();

  std::vector<Event> events;
  region.set_event_log(&events);
  try {
    op(tree);
  } catch (...) {
    region.set_event_log(nullptr);
    throw;
  }
  region.set_event_log(nullptr);
  const KvState post = tree.scan_all();

  CrashReport report;
  report.operations = 1;
  PersistentRegion replica(snapshot);
  for (std::size_t i = 0; i <= events.size(); ++i) {
    if (i > 0) {
      replica.apply(events[i - 1]);
      // Flushes and fences only shrink the set of reachable images.
      if (events[i - 1].kind != EventKind::store && i != events.size()) continue;
    }
    ++report.crash_points;
    for (const CrashPlan& plan : replica.enumerate_crash_plans(plan_cap)) {
      ++report.plans;
      const std::string where = "event " + std::to_string(i) + "/" + std::to_string(events.size()) + ", plan of " +
                                std::to_string(plan.stores.size()) + " stores";
      try {
        PersistentRegion image = replica.crash_image(plan);
        auto recovered = BPlusTree::recover(image, config);
        const KvState state = recovered->scan_all();
        if (state != pre && state != post) {
          note(report, where + ": recovered state is neither the pre- nor the post-state");
          continue;
        }
        if (!recovered->accelerators_consistent()) {
          note(report, where + ": accelerators differ from a fresh build");
        }
      } catch (const Error& e) {
        note(report, where + ": " + e.what());
      }
    }
  }
  return report;
}

}  // namespace nvmtree
