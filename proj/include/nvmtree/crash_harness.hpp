#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nvmtree/bplus_tree.hpp"

namespace nvmtree {

using KvState = std::vector<std::pair<Key, ValueRef>>;

struct CrashReport {
  std::size_t operations = 0;
  std::size_t crash_points = 0;
  std::size_t plans = 0;
  std::size_t failures = 0;
  std::vector<std::string> messages;  // first few failures only

  void merge(const CrashReport& other);
};

/// Runs `op` against `tree` (whose region must track persistence) and
/// checks every crash outcome of it: the region is replayed store by store
/// from a snapshot and, after each store, every crash plan is turned into an
/// image, recovered, and compared with the states before and after `op`.
/// Recovered accelerators must equal fresh builds.
CrashReport check_crashes(BPlusTree& tree, const std::function<void(BPlusTree&)>& op,
                          std::size_t plan_cap = std::size_t{1} << 12);

}  // namespace nvmtree
