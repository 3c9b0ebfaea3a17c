#include "nvmtree/node_layout.hpp"

#include <string>

namespace nvmtree {

NodeGeometry NodeGeometry::make(std::uint32_t node_size) {
  if (node_size < 128 || node_size > 65536 || node_size % kLineSize != 0) {
    throw Error(Errc::config, "node size " + std::to_string(node_size) + " must be a multiple of 64 in [128, 65536]");
  }
  return NodeGeometry{node_size};
}

std::uint64_t BumpAllocator::allocate() {
  const std::uint64_t at = next_.fetch_add(footprint_, std::memory_order_relaxed);
  if (at + footprint_ > limit_) {
    next_.fetch_sub(footprint_, std::memory_order_relaxed);
    throw Error(Errc::out_of_space, "region has no room for another node");
  }
  return at;
}

void format_node(PersistentRegion& region, LineFlusher& flusher, const NodeGeometry& geo, std::uint64_t node,
                 const NodeHeader& header, std::span<const Entry> entries) {
  for (std::uint32_t j = 0; j < geo.capacity(); ++j) {
    if (j < entries.size()) {
      flusher.store(NodeGeometry::key_offset(node, j), entries[j].key);
      flusher.store(NodeGeometry::ptr_offset(node, j), entries[j].ptr);
    } else if (region.load(NodeGeometry::ptr_offset(node, j)) != kNilPtr) {
      flusher.store(NodeGeometry::ptr_offset(node, j), kNilPtr);
    }
  }
  const std::uint64_t h = geo.header(node);
  flusher.store(h + NodeGeometry::kSiblingWord, header.sibling);
  flusher.store(h + NodeGeometry::kRingWord, header.ring);
  flusher.store(h + NodeGeometry::kLowKeyWord, header.low_key);
  flusher.store(h + NodeGeometry::kLeftmostWord, header.leftmost);
  flusher.store(h + NodeGeometry::kTagWord, make_tag(header.level, header.kind));
}

NodeHeader read_header(const PersistentRegion& region, const NodeGeometry& geo, std::uint64_t node) {
  const std::uint64_t h = geo.header(node);
  if (h + NodeGeometry::kHeaderSize > region.size()) throw Error(Errc::corruption, "node outside region");
  const std::uint64_t tag = region.load(h + NodeGeometry::kTagWord);
  if ((tag >> 32) != kNodeMagic) {
    throw Error(Errc::corruption, "bad node tag at offset " + std::to_string(node));
  }
  NodeHeader out;
  out.sibling = region.load(h + NodeGeometry::kSiblingWord);
  out.ring = region.load(h + NodeGeometry::kRingWord);
  out.low_key = region.load(h + NodeGeometry::kLowKeyWord);
  out.leftmost = region.load(h + NodeGeometry::kLeftmostWord);
  out.level = static_cast<std::uint32_t>(tag & 0xff);
  out.kind = static_cast<NodeKind>((tag >> 8) & 0xff);
  return out;
}

}  // namespace nvmtree
