#pragma once

#include <cstdint>
#include <atomic>
#include <optional>
#include <span>

#include "nvmtree/persistent_region.hpp"
#include "nvmtree/types.hpp"

namespace nvmtree {

// Node byte layout inside a region (offsets relative to the node start):
//
//   [0, node_size)                 slot array, 16-byte entries {key, ptr},
//                                  slot j at 16*j, so four slots per line
//   [node_size, node_size + 64)    header line
//
// Header words:
//   +0   sibling node offset (0 = none)
//   +8   ring word of circular leaves: base | count << 32 (count is a hint)
//   +16  low key: separator that routed this node's keys when it was split off
//   +24  leftmost child (internal nodes)
//   +32  tag: level | kind << 8 | magic << 32
struct NodeGeometry {
  static constexpr std::uint32_t kEntrySize = 16;
  static constexpr std::uint32_t kLineSize = 64;
  static constexpr std::uint32_t kEntriesPerLine = kLineSize / kEntrySize;
  static constexpr std::uint32_t kHeaderSize = 64;

  static constexpr std::uint64_t kSiblingWord = 0;
  static constexpr std::uint64_t kRingWord = 8;
  static constexpr std::uint64_t kLowKeyWord = 16;
  static constexpr std::uint64_t kLeftmostWord = 24;
  static constexpr std::uint64_t kTagWord = 32;

  std::uint32_t node_size = 4096;

  /// Throws Errc::config unless node_size is a multiple of 64 in [128, 65536].
  static NodeGeometry make(std::uint32_t node_size);

  constexpr std::uint32_t capacity() const { return node_size / kEntrySize; }
  constexpr std::uint32_t lines() const { return node_size / kLineSize; }
  constexpr std::uint32_t footprint() const { return node_size + kHeaderSize; }
  constexpr std::uint64_t header(std::uint64_t node) const { return node + node_size; }
  static constexpr std::uint64_t key_offset(std::uint64_t node, std::uint32_t slot) {
    return node + std::uint64_t{slot} * kEntrySize;
  }
  static constexpr std::uint64_t ptr_offset(std::uint64_t node, std::uint32_t slot) {
    return key_offset(node, slot) + 8;
  }
};

enum class NodeKind : std::uint8_t { linear = 0, circular = 1 };

inline constexpr std::uint32_t kNodeMagic = 0x4e564e44;  // "NVND"

constexpr std::uint64_t make_tag(std::uint32_t level, NodeKind kind) {
  return std::uint64_t{level} | (std::uint64_t{static_cast<std::uint8_t>(kind)} << 8) |
         (std::uint64_t{kNodeMagic} << 32);
}

/// Issues flush_line whenever consecutive stores move to another cache line
/// and once more in finish(). Callers emit their stores in the order the
/// failure-atomicity argument needs; the frontier only adds the flushes.
class LineFlusher {
 public:
  explicit LineFlusher(PersistentRegion& region) : region_(region) {}

  void store(std::uint64_t offset, std::uint64_t value) {
    const std::uint64_t line = offset / region_.line_size();
    if (line_ && *line_ != line) region_.flush_line(*line_ * region_.line_size());
    line_ = line;
    region_.store_word(offset, value);
  }

  void finish() {
    if (line_) region_.flush_line(*line_ * region_.line_size());
    line_.reset();
  }

  /// finish() followed by one fence.
  void commit() {
    finish();
    region_.fence();
  }

 private:
  PersistentRegion& region_;
  std::optional<std::uint64_t> line_;
};

/// One key/ptr pair in logical order.
struct Entry {
  Key key = 0;
  std::uint64_t ptr = 0;

  friend bool operator==(const Entry&, const Entry&) = default;
};

/// Hands out node-sized, line-aligned chunks of a region. Its cursor is
/// volatile; recovery recomputes it from the reachable nodes.
class BumpAllocator {
 public:
  BumpAllocator(std::uint64_t start, std::uint64_t limit, std::uint32_t footprint)
      : start_(start), limit_(limit), footprint_(footprint), next_(start) {}

  std::uint64_t allocate();
  void reset(std::uint64_t next) { next_.store(next, std::memory_order_relaxed); }
  std::uint64_t next() const { return next_.load(std::memory_order_relaxed); }
  std::uint64_t start() const { return start_; }
  std::uint64_t limit() const { return limit_; }
  std::uint32_t footprint() const { return footprint_; }

 private:
  std::uint64_t start_;
  std::uint64_t limit_;
  std::uint32_t footprint_;
  std::atomic<std::uint64_t> next_;
};

/// Header fields written when a node is (re)formatted.
struct NodeHeader {
  std::uint64_t sibling = 0;
  std::uint64_t ring = 0;
  Key low_key = 0;
  std::uint64_t leftmost = 0;
  std::uint32_t level = 0;
  NodeKind kind = NodeKind::linear;
};

/// Writes `entries` into slots [0, n), nils every other non-nil ptr and
/// writes the header. Stores go through `flusher`; the caller commits.
void format_node(PersistentRegion& region, LineFlusher& flusher, const NodeGeometry& geo, std::uint64_t node,
                 const NodeHeader& header, std::span<const Entry> entries);

NodeHeader read_header(const PersistentRegion& region, const NodeGeometry& geo, std::uint64_t node);

}  // namespace nvmtree
