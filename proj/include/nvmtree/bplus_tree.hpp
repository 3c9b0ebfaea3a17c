#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "nvmtree/accel.hpp"
#include "nvmtree/circular_node.hpp"
#include "nvmtree/latch.hpp"
#include "nvmtree/linear_node.hpp"
#include "nvmtree/metrics.hpp"
#include "nvmtree/node_layout.hpp"
#include "nvmtree/persistent_region.hpp"

namespace nvmtree {

enum class AccelKind : std::uint8_t { none, sentinel, fingerprint };
enum class SearchKind : std::uint8_t { linear, binary };

struct TreeConfig {
  NodeKind leaf_kind = NodeKind::linear;
  std::uint32_t node_size = 4096;
  AccelKind accel = AccelKind::none;
  SearchKind search = SearchKind::linear;
  /// Leaf reads without latches, tolerating in-flight shifts. Experimental;
  /// only for linear leaves without an accelerator.
  bool lock_free_reads = false;

  /// Throws Errc::config on an unsupported combination.
  void validate() const;
};

const char* to_string(AccelKind kind);
const char* to_string(SearchKind kind);

/// Superblock words at region offset 0.
struct Superblock {
  static constexpr std::uint64_t kRootWord = 0;
  static constexpr std::uint64_t kMagicWord = 8;
  static constexpr std::uint64_t kNodeSizeWord = 16;
  static constexpr std::uint64_t kLeafKindWord = 24;
  static constexpr std::uint64_t kMagic = 0x4e56545245453031ULL;  // "NVTREE01"
  static constexpr std::uint64_t kSize = 64;
};

/// B+-tree over a PersistentRegion. Internal nodes are linear nodes; leaves
/// are linear or circular per TreeConfig. Volatile per-node metadata (latch,
/// entry count, accelerators) lives in DRAM and is rebuilt by recover().
///
/// Latching: readers couple shared latches top-down. Writers first try with
/// shared latches on internal nodes and an exclusive latch on the leaf; when
/// the leaf is full they restart with exclusive coupling, releasing ancestors
/// once a child cannot split.
class BPlusTree {
 public:
  static std::unique_ptr<BPlusTree> create(PersistentRegion& region, const TreeConfig& config);

  /// Rebuilds a tree from a (possibly crashed) region: normalizes every
  /// node, finishes interrupted splits via sibling links, rebuilds
  /// accelerators and checks invariants. Throws Errc::corruption.
  static std::unique_ptr<BPlusTree> recover(PersistentRegion& region, const TreeConfig& config);

  ~BPlusTree();
  BPlusTree(const BPlusTree&) = delete;
  BPlusTree& operator=(const BPlusTree&) = delete;

  void insert(Key key, ValueRef value);
  std::optional<ValueRef> search(Key key) const;

  /// Search recording the leaf's accesses (and the internal nodes' when
  /// include_internal is set).
  std::optional<ValueRef> search_traced(Key key, AccessTrace& trace, bool include_internal = false) const;

  /// Replaces the value of an existing key; returns the previous one.
  ValueRef update(Key key, ValueRef value);

  /// Removes a key; returns its value.
  ValueRef erase(Key key);

  /// All pairs in key order, following the leaf sibling chain.
  std::vector<std::pair<Key, ValueRef>> scan_all() const;

  /// Leaf offsets in key order.
  std::vector<std::uint64_t> leaves() const;

  /// Throws Errc::corruption describing the first violated invariant.
  void check_invariants() const;

  /// Every leaf accelerator equals a fresh build from its node.
  bool accelerators_consistent() const;

  std::uint32_t height() const;
  std::uint64_t root() const { return root_.load(std::memory_order_acquire); }
  std::uint32_t leaf_count(std::uint64_t leaf) const;
  const SentinelArray* sentinel_of(std::uint64_t leaf) const;
  const FingerprintArray* fingerprint_of(std::uint64_t leaf) const;

  PersistentRegion& region() noexcept { return *region_; }
  const PersistentRegion& region() const noexcept { return *region_; }
  const TreeConfig& config() const noexcept { return config_; }
  const NodeGeometry& geometry() const noexcept { return geo_; }
  std::uint32_t leaf_capacity() const noexcept;

 private:
  struct alignas(64) NodeMeta {
    mutable RwLatch latch;
    std::atomic<std::uint32_t> count{0};
    std::uint32_t level = 0;
    std::optional<SentinelArray> sentinel;
    std::optional<FingerprintArray> fingerprint;
  };
  struct PathLocks;

  BPlusTree(PersistentRegion& region, const TreeConfig& config);

  std::size_t meta_index(std::uint64_t node) const noexcept;
  NodeMeta& meta(std::uint64_t node) const;
  NodeMeta& make_meta(std::uint64_t node, std::uint32_t level, std::uint32_t count);
  std::uint32_t count_of(std::uint64_t node, const NodeMeta& m) const;
  bool is_safe(std::uint64_t node, const NodeMeta& m) const;

  void format_root(std::uint64_t node, std::uint32_t level, std::uint64_t leftmost,
                   const std::vector<Entry>& entries);
  bool insert_optimistic(Key key, std::uint64_t ptr);
  void insert_pessimistic(Key key, std::uint64_t ptr);
  bool leaf_insert(std::uint64_t leaf, NodeMeta& m, Key key, std::uint64_t ptr);
  bool leaf_contains(std::uint64_t leaf, const NodeMeta& m, Key key) const;
  SplitResult split_leaf(std::uint64_t leaf, NodeMeta& m);
  std::optional<SplitResult> internal_insert(std::uint64_t node, Key key, std::uint64_t child);
  void propagate(const std::vector<std::uint64_t>& path, std::size_t idx, Key sep, std::uint64_t child);
  void grow_root(std::uint64_t old_root, Key sep, std::uint64_t child);
  void sync_accel(std::uint64_t leaf, NodeMeta& m, std::uint32_t lo, std::uint32_t hi);
  void rebuild_accel(std::uint64_t leaf, NodeMeta& m);

  /// Descends to the leaf covering key. The leaf latch is left held (shared or
  /// exclusive) and the leaf offset returned.
  template <class Trace>
  std::uint64_t descend(Key key, bool exclusive_leaf, Trace& trace, bool latch) const;

  /// Starts loading the first lines a search of `leaf` reads.
  void prefetch_leaf(std::uint64_t leaf, const NodeMeta& m) const;
  // Accelerator storage, taken from the inline arrays when the geometry fits
  // so no bookkeeping line is read first.
  const Key* probes_of(const NodeMeta& m) const;
  const std::uint8_t* fingerprints_of(const NodeMeta& m) const;

  template <class Trace>
  std::optional<std::uint64_t> leaf_search(std::uint64_t leaf, const NodeMeta& m, Key key, Trace& trace) const;

  void recover_structure();
  std::uint64_t leftmost_leaf() const;
  void check_subtree(std::uint64_t node, std::uint32_t level, std::optional<Key> lo, std::optional<Key> hi,
                     std::vector<std::uint64_t>& leaves_out) const;
  void validate_node_offset(std::uint64_t node) const;

  PersistentRegion* region_;
  TreeConfig config_;
  NodeGeometry geo_;
  BumpAllocator allocator_;
  // One slot per node position, constructed on first use; untouched slots
  // cost address space only.
  NodeMeta* meta_ = nullptr;
  std::size_t meta_slots_ = 0;
  std::unique_ptr<std::atomic<std::uint8_t>[]> meta_built_;
  std::uint64_t meta_span_ = 0;
  std::uint64_t meta_recip_ = 0;  // 0: divide by footprint directly
  mutable RwLatch root_latch_;
  std::atomic<std::uint64_t> root_{0};
};

}  // namespace nvmtree
