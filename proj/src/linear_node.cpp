#include "nvmtree/linear_node.hpp"

#include <string>

namespace nvmtree {

std::vector<Entry> collapse_shift_traces(const std::vector<Entry>& raw) {
  std::vector<Entry> out;
  out.reserve(raw.size());
  for (const Entry& e : raw) {
    if (e.ptr == kPendingPtr) continue;
    if (!out.empty() && out.back().ptr == e.ptr) continue;
    out.push_back(e);
  }
  return out;
}

void require_sorted(const std::vector<Entry>& entries, std::uint64_t node) {
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i - 1].key >= entries[i].key) {
      throw Error(Errc::corruption, "node at offset " + std::to_string(node) + " is not sorted at position " +
                                        std::to_string(i));
    }
  }
}

std::vector<Entry> LinearNode::entries(std::uint32_t count) const {
  std::vector<Entry> out;
  out.reserve(count);
  for (std::uint32_t j = 0; j < count; ++j) out.push_back({key_at(j), ptr_at(j)});
  return out;
}

std::uint32_t LinearNode::lower_bound(std::uint32_t count, Key key) const {
  std::uint32_t p = 0;
  while (p < count && key_at(p) < key) ++p;
  return p;
}

InsertResult LinearNode::insert(std::uint32_t& count, Key key, std::uint64_t ptr) {
  if (is_reserved_ptr(ptr)) throw Error(Errc::invalid_argument, "ptr value is reserved");
  const std::uint32_t n = count;
  const std::uint32_t p = lower_bound(n, key);
  if (p < n && key_at(p) == key) throw Error(Errc::duplicate_key, "key " + std::to_string(key) + " already present");
  if (n == capacity()) return {false, p};

  LineFlusher flusher(*region_);
  for (std::uint32_t i = n; i > p; --i) {
    flusher.store(NodeGeometry::ptr_offset(offset_, i), ptr_at(i - 1));
    flusher.store(NodeGeometry::key_offset(offset_, i), key_at(i - 1));
  }
  if (p < n) flusher.store(NodeGeometry::ptr_offset(offset_, p), kPendingPtr);
  flusher.store(NodeGeometry::key_offset(offset_, p), key);
  flusher.store(NodeGeometry::ptr_offset(offset_, p), ptr);
  flusher.commit();
  ++count;
  return {true, p};
}

std::uint32_t LinearNode::erase(std::uint32_t& count, Key key) {
  const std::uint32_t n = count;
  const std::uint32_t p = lower_bound(n, key);
  if (p == n || key_at(p) != key) throw Error(Errc::not_found, "key " + std::to_string(key) + " not present");

  LineFlusher flusher(*region_);
  if (p + 1 < n) {
    flusher.store(NodeGeometry::ptr_offset(offset_, p), kPendingPtr);
    for (std::uint32_t i = p; i + 1 < n; ++i) {
      flusher.store(NodeGeometry::key_offset(offset_, i), key_at(i + 1));
      flusher.store(NodeGeometry::ptr_offset(offset_, i), ptr_at(i + 1));
    }
  }
  flusher.store(NodeGeometry::ptr_offset(offset_, n - 1), kNilPtr);
  flusher.commit();
  --count;
  return p;
}

std::uint64_t LinearNode::update(std::uint32_t count, Key key, std::uint64_t ptr) {
  if (is_reserved_ptr(ptr)) throw Error(Errc::invalid_argument, "ptr value is reserved");
  const std::uint32_t p = lower_bound(count, key);
  if (p == count || key_at(p) != key) throw Error(Errc::not_found, "key " + std::to_string(key) + " not present");
  const std::uint64_t old = ptr_at(p);
  region_->store_word(NodeGeometry::ptr_offset(offset_, p), ptr);
  region_->flush_line(NodeGeometry::ptr_offset(offset_, p));
  region_->fence();
  return old;
}

SplitResult LinearNode::split(std::uint32_t& count, BumpAllocator& allocator, bool internal) {
  const std::uint32_t n = count;
  const std::uint32_t m = n / 2;
  const NodeHeader mine = read_header(*region_, geo_, offset_);

  SplitResult result;
  result.separator = key_at(m);
  std::vector<Entry> moved;
  NodeHeader fresh;
  fresh.sibling = mine.sibling;
  fresh.low_key = result.separator;
  fresh.level = mine.level;
  fresh.kind = NodeKind::linear;
  if (internal) {
    fresh.leftmost = ptr_at(m);
    for (std::uint32_t j = m + 1; j < n; ++j) moved.push_back({key_at(j), ptr_at(j)});
  } else {
    for (std::uint32_t j = m; j < n; ++j) moved.push_back({key_at(j), ptr_at(j)});
  }

  result.new_node = allocator.allocate();
  LineFlusher flusher(*region_);
  format_node(*region_, flusher, geo_, result.new_node, fresh, moved);
  flusher.commit();

  flusher.store(geo_.header(offset_) + NodeGeometry::kSiblingWord, result.new_node);
  flusher.commit();

  truncate(count, m);
  result.new_count = static_cast<std::uint32_t>(moved.size());
  return result;
}

void LinearNode::truncate(std::uint32_t& count, std::uint32_t from) {
  if (from >= count) return;
  LineFlusher flusher(*region_);
  for (std::uint32_t j = count; j-- > from;) flusher.store(NodeGeometry::ptr_offset(offset_, j), kNilPtr);
  flusher.commit();
  count = from;
}

std::uint32_t LinearNode::recover() {
  std::vector<Entry> raw;
  for (std::uint32_t j = 0; j < capacity(); ++j) {
    const std::uint64_t p = ptr_at(j);
    if (p == kNilPtr) break;
    raw.push_back({key_at(j), p});
  }
  const std::vector<Entry> clean = collapse_shift_traces(raw);
  require_sorted(clean, offset_);

  LineFlusher flusher(*region_);
  bool wrote = false;
  for (std::uint32_t j = 0; j < capacity(); ++j) {
    if (j < clean.size()) {
      if (key_at(j) != clean[j].key) {
        flusher.store(NodeGeometry::key_offset(offset_, j), clean[j].key);
        wrote = true;
      }
      if (ptr_at(j) != clean[j].ptr) {
        flusher.store(NodeGeometry::ptr_offset(offset_, j), clean[j].ptr);
        wrote = true;
      }
    } else if (ptr_at(j) != kNilPtr) {
      flusher.store(NodeGeometry::ptr_offset(offset_, j), kNilPtr);
      wrote = true;
    }
  }
  if (wrote) flusher.commit();
  return static_cast<std::uint32_t>(clean.size());
}

}  // namespace nvmtree
