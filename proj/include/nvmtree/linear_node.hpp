#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nvmtree/node_layout.hpp"
#include "nvmtree/persistent_region.hpp"

namespace nvmtree {

struct InsertResult {
  bool inserted = false;  // false: node full, caller must split
  std::uint32_t position = 0;
};

struct SplitResult {
  std::uint64_t new_node = 0;
  Key separator = 0;
  std::uint32_t new_count = 0;
};

/// View of a sorted node whose valid entries occupy slots [0, count).
///
/// Mutations shift entries in place so that every crash image differs from
/// a consistent node by at most one marker slot or one adjacent duplicate
/// ptr:
///  - insert copies right-to-left, ptr before key, then writes the marker,
///    the key and the ptr of the new slot;
///  - erase marks the victim, then copies left-to-right, key before ptr,
///    and nils the old last ptr.
/// A flush is issued whenever the stores move to another cache line and
/// once at the end, followed by a single fence.
///
/// The entry count lives in volatile metadata owned by the caller and is
/// recomputed by recover().
class LinearNode {
 public:
  LinearNode(PersistentRegion& region, std::uint64_t offset, NodeGeometry geo)
      : region_(&region), offset_(offset), geo_(geo) {}

  std::uint64_t offset() const noexcept { return offset_; }
  const NodeGeometry& geometry() const noexcept { return geo_; }
  std::uint32_t capacity() const noexcept { return geo_.capacity(); }

  Key key_at(std::uint32_t slot) const { return region_->load(NodeGeometry::key_offset(offset_, slot)); }
  std::uint64_t ptr_at(std::uint32_t slot) const { return region_->load(NodeGeometry::ptr_offset(offset_, slot)); }
  const std::uint64_t* key_address(std::uint32_t slot) const {
    return region_->address(NodeGeometry::key_offset(offset_, slot));
  }
  std::vector<Entry> entries(std::uint32_t count) const;

  std::uint64_t sibling() const { return region_->load(geo_.header(offset_) + NodeGeometry::kSiblingWord); }
  std::uint64_t leftmost() const { return region_->load(geo_.header(offset_) + NodeGeometry::kLeftmostWord); }
  Key low_key() const { return region_->load(geo_.header(offset_) + NodeGeometry::kLowKeyWord); }

  /// First position whose key is >= key.
  std::uint32_t lower_bound(std::uint32_t count, Key key) const;

  InsertResult insert(std::uint32_t& count, Key key, std::uint64_t ptr);

  /// Removes key; returns the position it occupied.
  std::uint32_t erase(std::uint32_t& count, Key key);

  /// In-place ptr replacement (one store, flush, fence). Returns the old ptr.
  std::uint64_t update(std::uint32_t count, Key key, std::uint64_t ptr);

  /// Scan from slot 0 bounded by the nil terminator, skipping the second of
  /// two adjacent equal ptrs and marker slots. Safe against a concurrent
  /// in-flight shift.
  template <class Trace>
  std::optional<std::uint64_t> search_linear(Key key, Trace& trace) const;

  /// Scan of slots [begin, end) for a quiescent node.
  template <class Trace>
  std::optional<std::uint64_t> scan(std::uint32_t begin, std::uint32_t end, Key key, Trace& trace) const;

  /// Halving binary search over [0, count); ceil(log2 count) probe iterations.
  template <class Trace>
  std::optional<std::uint64_t> search_binary(std::uint32_t count, Key key, Trace& trace,
                                             std::uint32_t* probes = nullptr) const;

  /// Internal-node routing: the child covering `key`.
  template <class Trace>
  std::uint64_t find_child(std::uint32_t count, Key key, Trace& trace) const;

  /// Moves the upper half into a fresh node. Order: fresh node written and
  /// fenced, sibling link stored and fenced, moved slots nil-ed (descending)
  /// and fenced. For internal nodes the middle entry's child becomes the
  /// fresh node's leftmost child and its key the separator.
  SplitResult split(std::uint32_t& count, BumpAllocator& allocator, bool internal);

  /// Collapses the traces of an interrupted shift, nils every ptr beyond the
  /// valid range and returns the entry count. Throws Errc::corruption when
  /// the slots cannot come from one interrupted shift of a sorted node.
  std::uint32_t recover();

  /// Drops entries from `from` on (used to finish an interrupted split).
  void truncate(std::uint32_t& count, std::uint32_t from);

 private:
  PersistentRegion* region_;
  std::uint64_t offset_;
  NodeGeometry geo_;
};

/// Removes marker slots and the second of two adjacent equal ptrs.
std::vector<Entry> collapse_shift_traces(const std::vector<Entry>& raw);

/// Throws Errc::corruption unless keys are strictly increasing.
void require_sorted(const std::vector<Entry>& entries, std::uint64_t node);

// --- template definitions ---

template <class Trace>
std::optional<std::uint64_t> LinearNode::search_linear(Key key, Trace& trace) const {
  std::uint64_t prev = kNilPtr;
  const std::uint32_t cap = geo_.capacity();
  for (std::uint32_t j = 0; j < cap; ++j) {
    const std::uint64_t off = NodeGeometry::key_offset(offset_, j);
    trace.touch(region_->address(off));
    const std::uint64_t p = region_->load(off + 8);
    if (p == kNilPtr) break;
    const Key k = region_->load(off);
    if (k >= key && p != prev && p != kPendingPtr) {
      if (k == key) return p;
      return std::nullopt;
    }
    prev = p;
  }
  return std::nullopt;
}

template <class Trace>
std::optional<std::uint64_t> LinearNode::scan(std::uint32_t begin, std::uint32_t end, Key key, Trace& trace) const {
  for (std::uint32_t j = begin; j < end; ++j) {
    const std::uint64_t off = NodeGeometry::key_offset(offset_, j);
    trace.touch(region_->address(off));
    const Key k = region_->load(off);
    if (k >= key) {
      if (k == key) return region_->load(off + 8);
      return std::nullopt;
    }
  }
  return std::nullopt;
}

template <class Trace>
std::optional<std::uint64_t> LinearNode::search_binary(std::uint32_t count, Key key, Trace& trace,
                                                       std::uint32_t* probes) const {
  if (count == 0) return std::nullopt;
  std::uint32_t lo = 0;
  std::uint32_t len = count;
  std::uint32_t iterations = 0;
  while (len > 1) {
    const std::uint32_t half = len / 2;
    const std::uint64_t off = NodeGeometry::key_offset(offset_, lo + half);
    trace.touch(region_->address(off));
    if (region_->load(off) <= key) lo += half;
    len -= half;
    ++iterations;
  }
  if (probes) *probes = iterations;
  const std::uint64_t off = NodeGeometry::key_offset(offset_, lo);
  trace.touch(region_->address(off));
  if (region_->load(off) == key) return region_->load(off + 8);
  return std::nullopt;
}

template <class Trace>
std::uint64_t LinearNode::find_child(std::uint32_t count, Key key, Trace& trace) const {
  std::uint32_t j = 0;
  for (; j < count; ++j) {
    const std::uint64_t off = NodeGeometry::key_offset(offset_, j);
    trace.touch(region_->address(off));
    if (key < region_->load(off)) break;
  }
  if (j > 0) return region_->load(NodeGeometry::key_offset(offset_, j - 1) + 8);
  const std::uint64_t h = geo_.header(offset_) + NodeGeometry::kLeftmostWord;
  trace.touch(region_->address(h));
  return region_->load(h);
}

}  // namespace nvmtree
