#include "nvmtree/circular_node.hpp"

#include <string>

namespace nvmtree {

std::uint32_t CircularNode::logical_index(std::uint32_t i) const {
  if (i >= capacity()) {
    throw Error(Errc::range, "logical position " + std::to_string(i) + " >= capacity " + std::to_string(capacity()));
  }
  return physical(base(), i);
}

std::vector<Entry> CircularNode::entries() const {
  const std::uint32_t b = base();
  const std::uint32_t n = count();
  std::vector<Entry> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t s = physical(b, i);
    out.push_back({region_->load(NodeGeometry::key_offset(offset_, s)), region_->load(NodeGeometry::ptr_offset(offset_, s))});
  }
  return out;
}

std::uint32_t CircularNode::lower_bound(std::uint32_t b, std::uint32_t n, Key key) const {
  std::uint32_t p = 0;
  while (p < n && region_->load(NodeGeometry::key_offset(offset_, physical(b, p))) < key) ++p;
  return p;
}

InsertResult CircularNode::insert(Key key, std::uint64_t ptr, ShiftInfo* info) {
  if (is_reserved_ptr(ptr)) throw Error(Errc::invalid_argument, "ptr value is reserved");
  const std::uint32_t b = base();
  const std::uint32_t n = count();
  const std::uint32_t cap = capacity();
  const std::uint32_t p = lower_bound(b, n, key);
  if (p < n && region_->load(NodeGeometry::key_offset(offset_, physical(b, p))) == key) {
    throw Error(Errc::duplicate_key, "key " + std::to_string(key) + " already present");
  }
  if (n == max_entries()) return {false, p};

  auto key_off = [&](std::uint32_t slot) { return NodeGeometry::key_offset(offset_, slot); };
  auto ptr_off = [&](std::uint32_t slot) { return NodeGeometry::ptr_offset(offset_, slot); };
  const std::uint64_t ring_off = geo_.header(offset_) + NodeGeometry::kRingWord;

  LineFlusher flusher(*region_);
  const bool left = p <= n - p;
  if (left) {
    const std::uint32_t nb = b == 0 ? cap - 1 : b - 1;
    for (std::uint32_t j = 0; j < p; ++j) {
      const std::uint32_t dst = physical(nb, j);
      const std::uint32_t src = physical(b, j);
      flusher.store(key_off(dst), region_->load(key_off(src)));
      flusher.store(ptr_off(dst), region_->load(ptr_off(src)));
    }
    const std::uint32_t dst = physical(nb, p);
    flusher.store(key_off(dst), key);
    flusher.store(ptr_off(dst), ptr);
    flusher.store(ring_off, ring_word(nb, n + 1));
  } else {
    for (std::uint32_t i = n; i > p; --i) {
      const std::uint32_t dst = physical(b, i);
      const std::uint32_t src = physical(b, i - 1);
      flusher.store(ptr_off(dst), region_->load(ptr_off(src)));
      flusher.store(key_off(dst), region_->load(key_off(src)));
    }
    const std::uint32_t dst = physical(b, p);
    if (p < n) flusher.store(ptr_off(dst), kPendingPtr);
    flusher.store(key_off(dst), key);
    flusher.store(ptr_off(dst), ptr);
    flusher.store(ring_off, ring_word(b, n + 1));
  }
  flusher.commit();
  if (info) *info = {left, left ? p : n - p};
  return {true, p};
}

std::uint32_t CircularNode::erase(Key key, ShiftInfo* info) {
  const std::uint32_t b = base();
  const std::uint32_t n = count();
  const std::uint32_t p = lower_bound(b, n, key);
  if (p == n || region_->load(NodeGeometry::key_offset(offset_, physical(b, p))) != key) {
    throw Error(Errc::not_found, "key " + std::to_string(key) + " not present");
  }
  auto key_off = [&](std::uint32_t slot) { return NodeGeometry::key_offset(offset_, slot); };
  auto ptr_off = [&](std::uint32_t slot) { return NodeGeometry::ptr_offset(offset_, slot); };
  const std::uint64_t ring_off = geo_.header(offset_) + NodeGeometry::kRingWord;

  LineFlusher flusher(*region_);
  const bool left = p <= n - 1 - p;
  if (left) {
    for (std::uint32_t i = p; i >= 1; --i) {
      const std::uint32_t dst = physical(b, i);
      const std::uint32_t src = physical(b, i - 1);
      flusher.store(ptr_off(dst), region_->load(ptr_off(src)));
      flusher.store(key_off(dst), region_->load(key_off(src)));
    }
    flusher.store(ring_off, ring_word(physical(b, 1), n - 1));
    flusher.store(ptr_off(b), kNilPtr);
  } else {
    if (p + 1 < n) {
      flusher.store(ptr_off(physical(b, p)), kPendingPtr);
      for (std::uint32_t i = p; i + 1 < n; ++i) {
        const std::uint32_t dst = physical(b, i);
        const std::uint32_t src = physical(b, i + 1);
        flusher.store(key_off(dst), region_->load(key_off(src)));
        flusher.store(ptr_off(dst), region_->load(ptr_off(src)));
      }
    }
    flusher.store(ptr_off(physical(b, n - 1)), kNilPtr);
    flusher.store(ring_off, ring_word(b, n - 1));
  }
  flusher.commit();
  if (info) *info = {left, left ? p : n - 1 - p};
  return p;
}

std::uint64_t CircularNode::update(Key key, std::uint64_t ptr) {
  if (is_reserved_ptr(ptr)) throw Error(Errc::invalid_argument, "ptr value is reserved");
  const std::uint32_t b = base();
  const std::uint32_t n = count();
  const std::uint32_t p = lower_bound(b, n, key);
  const std::uint32_t slot = physical(b, p);
  if (p == n || region_->load(NodeGeometry::key_offset(offset_, slot)) != key) {
    throw Error(Errc::not_found, "key " + std::to_string(key) + " not present");
  }
  const std::uint64_t old = region_->load(NodeGeometry::ptr_offset(offset_, slot));
  region_->store_word(NodeGeometry::ptr_offset(offset_, slot), ptr);
  region_->flush_line(NodeGeometry::ptr_offset(offset_, slot));
  region_->fence();
  return old;
}

SplitResult CircularNode::split(BumpAllocator& allocator) {
  const std::uint32_t b = base();
  const std::uint32_t n = count();
  const std::uint32_t m = n / 2;
  const NodeHeader mine = read_header(*region_, geo_, offset_);

  std::vector<Entry> moved;
  for (std::uint32_t i = m; i < n; ++i) {
    const std::uint32_t s = physical(b, i);
    moved.push_back({region_->load(NodeGeometry::key_offset(offset_, s)), region_->load(NodeGeometry::ptr_offset(offset_, s))});
  }
  SplitResult result;
  result.separator = moved.front().key;
  result.new_count = static_cast<std::uint32_t>(moved.size());

  NodeHeader fresh;
  fresh.sibling = mine.sibling;
  fresh.ring = ring_word(0, result.new_count);
  fresh.low_key = result.separator;
  fresh.level = mine.level;
  fresh.kind = NodeKind::circular;

  result.new_node = allocator.allocate();
  LineFlusher flusher(*region_);
  format_node(*region_, flusher, geo_, result.new_node, fresh, moved);
  flusher.commit();

  flusher.store(geo_.header(offset_) + NodeGeometry::kSiblingWord, result.new_node);
  flusher.commit();

  truncate(m);
  return result;
}

void CircularNode::truncate(std::uint32_t from) {
  const std::uint32_t b = base();
  const std::uint32_t n = count();
  if (from >= n) return;
  LineFlusher flusher(*region_);
  for (std::uint32_t i = n; i-- > from;) {
    flusher.store(NodeGeometry::ptr_offset(offset_, physical(b, i)), kNilPtr);
  }
  flusher.store(geo_.header(offset_) + NodeGeometry::kRingWord, ring_word(b, from));
  flusher.commit();
}

std::uint32_t CircularNode::recover() {
  const std::uint32_t cap = capacity();
  const std::uint32_t b = base();
  if (b >= cap) throw Error(Errc::corruption, "ring base out of range at offset " + std::to_string(offset_));

  auto read = [&](std::uint32_t slot) {
    return Entry{region_->load(NodeGeometry::key_offset(offset_, slot)),
                 region_->load(NodeGeometry::ptr_offset(offset_, slot))};
  };

  // A non-nil slot just before base can only come from an in-flight left shift.
  std::vector<Entry> raw;
  const std::uint32_t before = b == 0 ? cap - 1 : b - 1;
  std::uint32_t start = b;
  std::uint32_t budget = cap;
  if (read(before).ptr != kNilPtr) {
    raw.push_back(read(before));
    start = before;
    --budget;
  }
  for (std::uint32_t i = 0; i < budget; ++i) {
    const Entry e = read(physical(b, i));
    if (e.ptr == kNilPtr) break;
    raw.push_back(e);
  }
  const std::vector<Entry> clean = collapse_shift_traces(raw);
  require_sorted(clean, offset_);
  if (clean.size() > max_entries()) {
    throw Error(Errc::corruption, "ring at offset " + std::to_string(offset_) + " has no spare slot");
  }

  const auto n = static_cast<std::uint32_t>(clean.size());
  LineFlusher flusher(*region_);
  bool wrote = false;
  for (std::uint32_t i = 0; i < cap; ++i) {
    const std::uint32_t s = physical(start, i);
    const Entry cur = read(s);
    if (i < n) {
      if (cur.key != clean[i].key) {
        flusher.store(NodeGeometry::key_offset(offset_, s), clean[i].key);
        wrote = true;
      }
      if (cur.ptr != clean[i].ptr) {
        flusher.store(NodeGeometry::ptr_offset(offset_, s), clean[i].ptr);
        wrote = true;
      }
    } else if (cur.ptr != kNilPtr) {
      flusher.store(NodeGeometry::ptr_offset(offset_, s), kNilPtr);
      wrote = true;
    }
  }
  if (ring() != ring_word(start, n)) {
    flusher.store(geo_.header(offset_) + NodeGeometry::kRingWord, ring_word(start, n));
    wrote = true;
  }
  if (wrote) flusher.commit();
  return n;
}

}  // namespace nvmtree
