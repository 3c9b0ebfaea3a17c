#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nvmtree/linear_node.hpp"
#include "nvmtree/node_layout.hpp"

namespace nvmtree {

/// Which side a circular mutation shifted and how many entries moved.
struct ShiftInfo {
  bool left = false;
  std::uint32_t moves = 0;
};

/// View of a ring-buffer leaf. Logical position i lives in physical slot
/// (base + i) mod capacity; base and count share the header ring word so a
/// single 8-byte store publishes both.
///
/// Inserts and erases shift whichever side of the position holds fewer
/// entries (ties go left). Left shifts move base. At most capacity - 1
/// entries are stored: the spare slot keeps the slot before base and the
/// slot after the tail distinct, which recovery relies on to tell an
/// in-flight left shift from a right one.
class CircularNode {
 public:
  CircularNode(PersistentRegion& region, std::uint64_t offset, NodeGeometry geo)
      : region_(&region), offset_(offset), geo_(geo) {}

  static constexpr std::uint64_t ring_word(std::uint32_t base, std::uint32_t count) {
    return std::uint64_t{base} | (std::uint64_t{count} << 32);
  }

  std::uint64_t offset() const noexcept { return offset_; }
  const NodeGeometry& geometry() const noexcept { return geo_; }
  std::uint32_t capacity() const noexcept { return geo_.capacity(); }
  std::uint32_t max_entries() const noexcept { return geo_.capacity() - 1; }

  std::uint32_t base() const { return static_cast<std::uint32_t>(ring() & 0xffffffffu); }
  std::uint32_t count() const { return static_cast<std::uint32_t>(ring() >> 32); }

  /// Physical slot of logical position i; throws Errc::range unless i < capacity.
  std::uint32_t logical_index(std::uint32_t i) const;

  Key key_at_logical(std::uint32_t i) const {
    return region_->load(NodeGeometry::key_offset(offset_, physical(base(), i)));
  }
  std::uint64_t ptr_at_logical(std::uint32_t i) const {
    return region_->load(NodeGeometry::ptr_offset(offset_, physical(base(), i)));
  }
  Key key_at(std::uint32_t base, std::uint32_t i) const {
    return region_->load(NodeGeometry::key_offset(offset_, physical(base, i)));
  }
  std::uint64_t ptr_at(std::uint32_t base, std::uint32_t i) const {
    return region_->load(NodeGeometry::ptr_offset(offset_, physical(base, i)));
  }
  const std::uint64_t* key_address(std::uint32_t base, std::uint32_t i) const {
    return region_->address(NodeGeometry::key_offset(offset_, physical(base, i)));
  }
  std::vector<Entry> entries() const;

  std::uint64_t sibling() const { return region_->load(geo_.header(offset_) + NodeGeometry::kSiblingWord); }
  Key low_key() const { return region_->load(geo_.header(offset_) + NodeGeometry::kLowKeyWord); }

  InsertResult insert(Key key, std::uint64_t ptr, ShiftInfo* info = nullptr);
  std::uint32_t erase(Key key, ShiftInfo* info = nullptr);
  std::uint64_t update(Key key, std::uint64_t ptr);

  /// Linear scan from the logical base to the last valid entry.
  template <class Trace>
  std::optional<std::uint64_t> search(Key key, Trace& trace) const;

  /// Scan of logical positions [begin, end).
  template <class Trace>
  std::optional<std::uint64_t> scan_logical(std::uint32_t base, std::uint32_t begin, std::uint32_t end, Key key,
                                            Trace& trace) const;

  /// Same ordering discipline as LinearNode::split; the fresh node starts at
  /// base 0.
  SplitResult split(BumpAllocator& allocator);

  /// Rebuilds a consistent ring from a crash image; returns the count.
  std::uint32_t recover();

  void truncate(std::uint32_t from);

  /// Header ring word; traced by the search paths.
  std::uint64_t ring() const { return region_->load(geo_.header(offset_) + NodeGeometry::kRingWord); }
  const std::uint64_t* ring_address() const {
    return region_->address(geo_.header(offset_) + NodeGeometry::kRingWord);
  }

 private:
  std::uint32_t physical(std::uint32_t base, std::uint32_t i) const noexcept {
    std::uint32_t idx = base + i;
    const std::uint32_t cap = geo_.capacity();
    return idx >= cap ? idx - cap : idx;
  }
  std::uint32_t lower_bound(std::uint32_t base, std::uint32_t count, Key key) const;

  PersistentRegion* region_;
  std::uint64_t offset_;
  NodeGeometry geo_;
};

template <class Trace>
std::optional<std::uint64_t> CircularNode::search(Key key, Trace& trace) const {
  trace.touch(ring_address());
  const std::uint64_t r = ring();
  return scan_logical(static_cast<std::uint32_t>(r & 0xffffffffu), 0, static_cast<std::uint32_t>(r >> 32), key,
                      trace);
}

template <class Trace>
std::optional<std::uint64_t> CircularNode::scan_logical(std::uint32_t base, std::uint32_t begin, std::uint32_t end,
                                                        Key key, Trace& trace) const {
  const std::uint32_t cap = geo_.capacity();
  std::uint32_t idx = base + begin;
  if (idx >= cap) idx -= cap;
  for (std::uint32_t i = begin; i < end; ++i) {
    const std::uint64_t off = NodeGeometry::key_offset(offset_, idx);
    trace.touch(region_->address(off));
    const Key k = region_->load(off);
    if (k >= key) {
      if (k == key) return region_->load(off + 8);
      return std::nullopt;
    }
    if (++idx == cap) idx = 0;
  }
  return std::nullopt;
}

}  // namespace nvmtree
