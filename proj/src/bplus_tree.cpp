#include "nvmtree/bplus_tree.hpp"

#include <algorithm>
#include <mutex>
#include <new>
#include <shared_mutex>
#include <string>
#include <unordered_set>

namespace nvmtree {

void TreeConfig::validate() const {
  NodeGeometry::make(node_size);
  if (search == SearchKind::binary && (accel != AccelKind::none || leaf_kind != NodeKind::linear)) {
    throw Error(Errc::config, "binary search requires linear leaves and no accelerator");
  }
  if (lock_free_reads &&
      (accel != AccelKind::none || leaf_kind != NodeKind::linear || search != SearchKind::linear)) {
    throw Error(Errc::config, "lock-free reads require linear leaves, linear search and no accelerator");
  }
}

const char* to_string(AccelKind kind) {
  switch (kind) {
    case AccelKind::none: return "none";
    case AccelKind::sentinel: return "sentinel";
    case AccelKind::fingerprint: return "fingerprint";
  }
  return "?";
}

const char* to_string(SearchKind kind) { return kind == SearchKind::binary ? "binary" : "linear"; }

struct BPlusTree::PathLocks {
  std::vector<NodeMeta*> held;
  ~PathLocks() { release(); }
  void release() {
    for (NodeMeta* m : held) m->latch.unlock();
    held.clear();
  }
};

BPlusTree::BPlusTree(PersistentRegion& region, const TreeConfig& config)
    : region_(&region),
      config_(config),
      geo_(NodeGeometry::make(config.node_size)),
      allocator_(Superblock::kSize, region.size(), geo_.footprint()) {
  config_.validate();
  if (region.size() < Superblock::kSize + geo_.footprint()) {
    throw Error(Errc::out_of_space, "region cannot hold a single node");
  }
  meta_span_ = region.size() - Superblock::kSize;
  meta_slots_ = meta_span_ / geo_.footprint();
  meta_ = static_cast<NodeMeta*>(::operator new(meta_slots_ * sizeof(NodeMeta), std::align_val_t{alignof(NodeMeta)}));
  meta_built_ = std::make_unique<std::atomic<std::uint8_t>[]>(meta_slots_);
  // floor(x * ceil(2^64 / d) / 2^64) == x / d for all 32-bit x.
  if (meta_span_ <= 0xffffffffULL) meta_recip_ = ~std::uint64_t{0} / geo_.footprint() + 1;
}

BPlusTree::~BPlusTree() {
  for (std::size_t i = 0; i < meta_slots_; ++i) {
    if (meta_built_[i].load(std::memory_order_relaxed)) meta_[i].~NodeMeta();
  }
  ::operator delete(meta_, std::align_val_t{alignof(NodeMeta)});
}

std::uint32_t BPlusTree::leaf_capacity() const noexcept {
  return config_.leaf_kind == NodeKind::circular ? geo_.capacity() - 1 : geo_.capacity();
}

void BPlusTree::validate_node_offset(std::uint64_t node) const {
  if (node < Superblock::kSize || (node - Superblock::kSize) % geo_.footprint() != 0 ||
      node + geo_.footprint() > region_->size()) {
    throw Error(Errc::corruption, "invalid node reference " + std::to_string(node));
  }
}

std::size_t BPlusTree::meta_index(std::uint64_t node) const noexcept {
  const std::uint64_t x = node - Superblock::kSize;
  if (x >= meta_span_) return meta_slots_;
  if (meta_recip_ == 0) return x / geo_.footprint();
  return static_cast<std::size_t>((static_cast<unsigned __int128>(x) * meta_recip_) >> 64);
}

BPlusTree::NodeMeta& BPlusTree::meta(std::uint64_t node) const {
  const std::size_t idx = meta_index(node);
  if (idx >= meta_slots_ || !meta_built_[idx].load(std::memory_order_acquire)) {
    throw Error(Errc::corruption, "no metadata for node " + std::to_string(node));
  }
  return meta_[idx];
}

BPlusTree::NodeMeta& BPlusTree::make_meta(std::uint64_t node, std::uint32_t level, std::uint32_t count) {
  const std::size_t idx = meta_index(node);
  if (idx >= meta_slots_) throw Error(Errc::corruption, "node " + std::to_string(node) + " outside the region");
  if (meta_built_[idx].load(std::memory_order_relaxed)) meta_[idx].~NodeMeta();
  NodeMeta* m = new (&meta_[idx]) NodeMeta();
  m->level = level;
  m->count.store(count, std::memory_order_relaxed);
  if (level == 0) {
    if (config_.accel == AccelKind::sentinel) m->sentinel.emplace(geo_.lines());
    if (config_.accel == AccelKind::fingerprint) m->fingerprint.emplace(geo_.capacity());
  }
  meta_built_[idx].store(1, std::memory_order_release);
  return *m;
}

std::uint32_t BPlusTree::count_of(std::uint64_t, const NodeMeta& m) const {
  return m.count.load(std::memory_order_relaxed);
}

bool BPlusTree::is_safe(std::uint64_t node, const NodeMeta& m) const {
  const std::uint32_t limit = m.level == 0 ? leaf_capacity() : geo_.capacity();
  return count_of(node, m) < limit;
}

void BPlusTree::format_root(std::uint64_t node, std::uint32_t level, std::uint64_t leftmost,
                            const std::vector<Entry>& entries) {
  NodeHeader h;
  h.leftmost = leftmost;
  h.level = level;
  h.kind = level == 0 ? config_.leaf_kind : NodeKind::linear;
  LineFlusher flusher(*region_);
  format_node(*region_, flusher, geo_, node, h, entries);
  flusher.commit();
}

std::unique_ptr<BPlusTree> BPlusTree::create(PersistentRegion& region, const TreeConfig& config) {
  std::unique_ptr<BPlusTree> t(new BPlusTree(region, config));
  const std::uint64_t root = t->allocator_.allocate();
  t->format_root(root, 0, 0, {});
  LineFlusher flusher(region);
  flusher.store(Superblock::kRootWord, root);
  flusher.store(Superblock::kMagicWord, Superblock::kMagic);
  flusher.store(Superblock::kNodeSizeWord, config.node_size);
  flusher.store(Superblock::kLeafKindWord, static_cast<std::uint64_t>(config.leaf_kind));
  flusher.commit();
  NodeMeta& m = t->make_meta(root, 0, 0);
  t->rebuild_accel(root, m);
  t->root_.store(root, std::memory_order_release);
  return t;
}

// --- accelerators ---

void BPlusTree::sync_accel(std::uint64_t leaf, NodeMeta& m, std::uint32_t lo, std::uint32_t hi) {
  if (!m.sentinel && !m.fingerprint) return;
  const std::uint32_t n = count_of(leaf, m);
  auto apply = [&](auto&& key_at) {
    if (m.sentinel) m.sentinel->sync(n, lo, hi, key_at);
    if (m.fingerprint) m.fingerprint->sync(n, lo, hi, key_at);
  };
  if (config_.leaf_kind == NodeKind::linear) {
    LinearNode node(*region_, leaf, geo_);
    apply([&](std::uint32_t i) { return node.key_at(i); });
  } else {
    CircularNode node(*region_, leaf, geo_);
    const std::uint32_t b = node.base();
    apply([&](std::uint32_t i) { return node.key_at(b, i); });
  }
}

void BPlusTree::rebuild_accel(std::uint64_t leaf, NodeMeta& m) {
  sync_accel(leaf, m, 0, geo_.capacity() - 1);
}

// --- search ---

template <class Trace>
std::uint64_t BPlusTree::descend(Key key, bool exclusive_leaf, Trace& trace, bool latch) const {
  auto lock = [&](NodeMeta& m) {
    if (!latch) return;
    if (m.level == 0 && exclusive_leaf) {
      m.latch.lock();
    } else {
      m.latch.lock_shared();
    }
  };
  if (latch) root_latch_.lock_shared();
  std::uint64_t cur = root_.load(std::memory_order_acquire);
  NodeMeta* cm = &meta(cur);
  lock(*cm);
  if (latch) root_latch_.unlock_shared();
  while (cm->level > 0) {
    const std::uint64_t child = LinearNode(*region_, cur, geo_).find_child(count_of(cur, *cm), key, trace);
    NodeMeta* next = &meta(child);
    if (cm->level == 1) prefetch_leaf(child, *next);
    lock(*next);
    if (latch) cm->latch.unlock_shared();
    cur = child;
    cm = next;
  }
  return cur;
}

const Key* BPlusTree::probes_of(const NodeMeta& m) const {
  return geo_.lines() - 1 <= SentinelArray::kInlineProbes ? m.sentinel->inline_probes() : m.sentinel->probe_data();
}

const std::uint8_t* BPlusTree::fingerprints_of(const NodeMeta& m) const {
  return geo_.capacity() <= FingerprintArray::kInlineBytes ? m.fingerprint->inline_bytes() : m.fingerprint->data();
}

void BPlusTree::prefetch_leaf(std::uint64_t leaf, const NodeMeta& m) const {
  switch (config_.accel) {
    case AccelKind::sentinel:
      __builtin_prefetch(probes_of(m));
      break;
    case AccelKind::fingerprint: {
      const auto* fp = reinterpret_cast<const char*>(fingerprints_of(m));
      for (std::uint32_t i = 0; i < geo_.capacity(); i += 64) __builtin_prefetch(fp + i);
      break;
    }
    case AccelKind::none:
      if (config_.leaf_kind == NodeKind::linear) __builtin_prefetch(region_->address(NodeGeometry::key_offset(leaf, 0)));
      break;
  }
  if (config_.leaf_kind == NodeKind::circular) {
    __builtin_prefetch(region_->address(geo_.header(leaf) + NodeGeometry::kRingWord));
  }
}

template <class Trace>
std::optional<std::uint64_t> BPlusTree::leaf_search(std::uint64_t leaf, const NodeMeta& m, Key key,
                                                    Trace& trace) const {
  if (config_.leaf_kind == NodeKind::linear) {
    const LinearNode node(*region_, leaf, geo_);
    const std::uint32_t n = count_of(leaf, m);
    switch (config_.accel) {
      case AccelKind::none:
        if (config_.search == SearchKind::binary) return node.search_binary(n, key, trace);
        if (config_.lock_free_reads) return node.search_linear(key, trace);
        return node.scan(0, n, key, trace);
      case AccelKind::sentinel: {
        const std::uint32_t begin = SentinelArray::locate(probes_of(m), geo_.lines(), key, n, trace);
        return node.scan(begin, std::min(begin + SentinelArray::kPerLine, n), key, trace);
      }
      case AccelKind::fingerprint: {
        const auto pos = FingerprintArray::find(
            fingerprints_of(m), key, n,
            [&](std::uint32_t i) {
              trace.touch(node.key_address(i));
              return node.key_at(i);
            },
            trace);
        if (!pos) return std::nullopt;
        return node.ptr_at(*pos);
      }
    }
    return std::nullopt;
  }

  const CircularNode node(*region_, leaf, geo_);
  trace.touch(node.ring_address());
  const std::uint64_t ring = node.ring();
  const auto b = static_cast<std::uint32_t>(ring & 0xffffffffu);
  const auto n = static_cast<std::uint32_t>(ring >> 32);
  switch (config_.accel) {
    case AccelKind::none:
      return node.scan_logical(b, 0, n, key, trace);
    case AccelKind::sentinel: {
      const std::uint32_t begin = SentinelArray::locate(probes_of(m), geo_.lines(), key, n, trace);
      return node.scan_logical(b, begin, std::min(begin + SentinelArray::kPerLine, n), key, trace);
    }
    case AccelKind::fingerprint: {
      const auto pos = FingerprintArray::find(
          fingerprints_of(m), key, n,
          [&](std::uint32_t i) {
            trace.touch(node.key_address(b, i));
            return node.key_at(b, i);
          },
          trace);
      if (!pos) return std::nullopt;
      return node.ptr_at(b, *pos);
    }
  }
  return std::nullopt;
}

std::optional<ValueRef> BPlusTree::search(Key key) const {
  NullTrace trace;
  const bool latch = !config_.lock_free_reads;
  const std::uint64_t leaf = descend(key, false, trace, latch);
  const NodeMeta& m = meta(leaf);
  std::optional<std::uint64_t> r;
  if (latch) {
    std::shared_lock guard(m.latch, std::adopt_lock);
    r = leaf_search(leaf, m, key, trace);
  } else {
    r = leaf_search(leaf, m, key, trace);
  }
  if (!r) return std::nullopt;
  return ValueRef{*r};
}

std::optional<ValueRef> BPlusTree::search_traced(Key key, AccessTrace& trace, bool include_internal) const {
  const bool latch = !config_.lock_free_reads;
  std::uint64_t leaf = 0;
  if (include_internal) {
    leaf = descend(key, false, trace, latch);
  } else {
    NullTrace none;
    leaf = descend(key, false, none, latch);
  }
  const NodeMeta& m = meta(leaf);
  std::optional<std::uint64_t> r;
  if (latch) {
    std::shared_lock guard(m.latch, std::adopt_lock);
    r = leaf_search(leaf, m, key, trace);
  } else {
    r = leaf_search(leaf, m, key, trace);
  }
  if (!r) return std::nullopt;
  return ValueRef{*r};
}

// --- insert ---

bool BPlusTree::leaf_insert(std::uint64_t leaf, NodeMeta& m, Key key, std::uint64_t ptr) {
  InsertResult r;
  if (config_.leaf_kind == NodeKind::linear) {
    std::uint32_t n = count_of(leaf, m);
    r = LinearNode(*region_, leaf, geo_).insert(n, key, ptr);
    if (!r.inserted) return false;
    m.count.store(n, std::memory_order_relaxed);
  } else {
    CircularNode node(*region_, leaf, geo_);
    r = node.insert(key, ptr);
    if (!r.inserted) return false;
    m.count.store(node.count(), std::memory_order_relaxed);
  }
  sync_accel(leaf, m, r.position, count_of(leaf, m) - 1);
  return true;
}

bool BPlusTree::leaf_contains(std::uint64_t leaf, const NodeMeta& m, Key key) const {
  NullTrace trace;
  return leaf_search(leaf, m, key, trace).has_value();
}

SplitResult BPlusTree::split_leaf(std::uint64_t leaf, NodeMeta& m) {
  const std::uint32_t before = count_of(leaf, m);
  SplitResult s;
  if (config_.leaf_kind == NodeKind::linear) {
    std::uint32_t n = before;
    s = LinearNode(*region_, leaf, geo_).split(n, allocator_, false);
    m.count.store(n, std::memory_order_relaxed);
  } else {
    CircularNode node(*region_, leaf, geo_);
    s = node.split(allocator_);
    m.count.store(node.count(), std::memory_order_relaxed);
  }
  sync_accel(leaf, m, count_of(leaf, m), before - 1);
  NodeMeta& fresh = make_meta(s.new_node, 0, s.new_count);
  rebuild_accel(s.new_node, fresh);
  return s;
}

std::optional<SplitResult> BPlusTree::internal_insert(std::uint64_t node, Key key, std::uint64_t child) {
  NodeMeta& m = meta(node);
  LinearNode view(*region_, node, geo_);
  std::uint32_t n = count_of(node, m);
  if (view.insert(n, key, child).inserted) {
    m.count.store(n, std::memory_order_relaxed);
    return std::nullopt;
  }
  SplitResult s = view.split(n, allocator_, true);
  m.count.store(n, std::memory_order_relaxed);
  make_meta(s.new_node, m.level, s.new_count);
  const std::uint64_t target = key >= s.separator ? s.new_node : node;
  NodeMeta& tm = meta(target);
  std::uint32_t tn = count_of(target, tm);
  LinearNode(*region_, target, geo_).insert(tn, key, child);
  tm.count.store(tn, std::memory_order_relaxed);
  return s;
}

void BPlusTree::grow_root(std::uint64_t old_root, Key sep, std::uint64_t child) {
  if (old_root != root_.load(std::memory_order_relaxed)) {
    throw Error(Errc::corruption, "split reached the top of a path that does not start at the root");
  }
  const std::uint64_t fresh = allocator_.allocate();
  const std::uint32_t level = meta(old_root).level + 1;
  format_root(fresh, level, old_root, {Entry{sep, child}});
  region_->store_word(Superblock::kRootWord, fresh);
  region_->flush_line(Superblock::kRootWord);
  region_->fence();
  make_meta(fresh, level, 1);
  root_.store(fresh, std::memory_order_release);
}

void BPlusTree::propagate(const std::vector<std::uint64_t>& path, std::size_t idx, Key sep, std::uint64_t child) {
  for (;;) {
    if (idx == 0) {
      grow_root(path[0], sep, child);
      return;
    }
    --idx;
    const auto s = internal_insert(path[idx], sep, child);
    if (!s) return;
    sep = s->separator;
    child = s->new_node;
  }
}

bool BPlusTree::insert_optimistic(Key key, std::uint64_t ptr) {
  NullTrace trace;
  const std::uint64_t leaf = descend(key, true, trace, true);
  NodeMeta& m = meta(leaf);
  std::unique_lock guard(m.latch, std::adopt_lock);
  if (!is_safe(leaf, m)) {
    if (leaf_contains(leaf, m, key)) throw Error(Errc::duplicate_key, "key " + std::to_string(key) + " already present");
    return false;
  }
  leaf_insert(leaf, m, key, ptr);
  return true;
}

void BPlusTree::insert_pessimistic(Key key, std::uint64_t ptr) {
  std::unique_lock root_guard(root_latch_);
  PathLocks locks;
  std::vector<std::uint64_t> path;

  std::uint64_t cur = root_.load(std::memory_order_relaxed);
  NodeMeta* cm = &meta(cur);
  cm->latch.lock();
  locks.held.push_back(cm);
  path.push_back(cur);
  if (is_safe(cur, *cm)) root_guard.unlock();

  while (cm->level > 0) {
    NullTrace none;
    const std::uint64_t child = LinearNode(*region_, cur, geo_).find_child(count_of(cur, *cm), key, none);
    NodeMeta* next = &meta(child);
    next->latch.lock();
    if (is_safe(child, *next)) {
      locks.release();
      path.clear();
      if (root_guard.owns_lock()) root_guard.unlock();
    }
    locks.held.push_back(next);
    path.push_back(child);
    cur = child;
    cm = next;
  }

  if (leaf_insert(cur, *cm, key, ptr)) return;
  const SplitResult s = split_leaf(cur, *cm);
  const std::uint64_t target = key >= s.separator ? s.new_node : cur;
  leaf_insert(target, meta(target), key, ptr);
  propagate(path, path.size() - 1, s.separator, s.new_node);
}

void BPlusTree::insert(Key key, ValueRef value) {
  const std::uint64_t ptr = to_raw(value);
  if (is_reserved_ptr(ptr)) throw Error(Errc::invalid_argument, "value reference " + std::to_string(ptr) + " is reserved");
  if (insert_optimistic(key, ptr)) return;
  insert_pessimistic(key, ptr);
}

// --- update / erase ---

ValueRef BPlusTree::update(Key key, ValueRef value) {
  const std::uint64_t ptr = to_raw(value);
  if (is_reserved_ptr(ptr)) throw Error(Errc::invalid_argument, "value reference " + std::to_string(ptr) + " is reserved");
  NullTrace trace;
  const std::uint64_t leaf = descend(key, true, trace, true);
  NodeMeta& m = meta(leaf);
  std::unique_lock guard(m.latch, std::adopt_lock);
  if (config_.leaf_kind == NodeKind::linear) {
    return ValueRef{LinearNode(*region_, leaf, geo_).update(count_of(leaf, m), key, ptr)};
  }
  return ValueRef{CircularNode(*region_, leaf, geo_).update(key, ptr)};
}

ValueRef BPlusTree::erase(Key key) {
  NullTrace trace;
  const std::uint64_t leaf = descend(key, true, trace, true);
  NodeMeta& m = meta(leaf);
  std::unique_lock guard(m.latch, std::adopt_lock);
  const auto old = leaf_search(leaf, m, key, trace);
  if (!old) throw Error(Errc::not_found, "key " + std::to_string(key) + " not present");
  std::uint32_t p = 0;
  if (config_.leaf_kind == NodeKind::linear) {
    std::uint32_t n = count_of(leaf, m);
    p = LinearNode(*region_, leaf, geo_).erase(n, key);
    m.count.store(n, std::memory_order_relaxed);
  } else {
    CircularNode node(*region_, leaf, geo_);
    p = node.erase(key);
    m.count.store(node.count(), std::memory_order_relaxed);
  }
  sync_accel(leaf, m, p, count_of(leaf, m));
  return ValueRef{*old};
}

// --- inspection ---

std::uint32_t BPlusTree::height() const { return meta(root()).level + 1; }

std::uint32_t BPlusTree::leaf_count(std::uint64_t leaf) const { return count_of(leaf, meta(leaf)); }

const SentinelArray* BPlusTree::sentinel_of(std::uint64_t leaf) const {
  const NodeMeta& m = meta(leaf);
  return m.sentinel ? &*m.sentinel : nullptr;
}

const FingerprintArray* BPlusTree::fingerprint_of(std::uint64_t leaf) const {
  const NodeMeta& m = meta(leaf);
  return m.fingerprint ? &*m.fingerprint : nullptr;
}

std::uint64_t BPlusTree::leftmost_leaf() const {
  std::uint64_t cur = root();
  while (meta(cur).level > 0) cur = LinearNode(*region_, cur, geo_).leftmost();
  return cur;
}

std::vector<std::uint64_t> BPlusTree::leaves() const {
  std::vector<std::uint64_t> out;
  for (std::uint64_t cur = leftmost_leaf(); cur != 0;) {
    if (out.size() > meta_slots_) throw Error(Errc::corruption, "leaf sibling chain does not terminate");
    out.push_back(cur);
    cur = region_->load(geo_.header(cur) + NodeGeometry::kSiblingWord);
  }
  return out;
}

std::vector<std::pair<Key, ValueRef>> BPlusTree::scan_all() const {
  std::vector<std::pair<Key, ValueRef>> out;
  for (const std::uint64_t leaf : leaves()) {
    const std::vector<Entry> entries = config_.leaf_kind == NodeKind::linear
                                           ? LinearNode(*region_, leaf, geo_).entries(leaf_count(leaf))
                                           : CircularNode(*region_, leaf, geo_).entries();
    for (const Entry& e : entries) out.emplace_back(e.key, ValueRef{e.ptr});
  }
  return out;
}

bool BPlusTree::accelerators_consistent() const {
  for (const std::uint64_t leaf : leaves()) {
    const NodeMeta& m = meta(leaf);
    const std::uint32_t n = count_of(leaf, m);
    auto check = [&](auto&& key_at) {
      if (m.sentinel) {
        SentinelArray fresh(geo_.lines());
        fresh.build(n, key_at);
        if (!(fresh == *m.sentinel)) return false;
      }
      if (m.fingerprint) {
        FingerprintArray fresh(geo_.capacity());
        fresh.build(n, key_at);
        if (!(fresh == *m.fingerprint)) return false;
      }
      return true;
    };
    bool ok = true;
    if (config_.leaf_kind == NodeKind::linear) {
      const LinearNode node(*region_, leaf, geo_);
      ok = check([&](std::uint32_t i) { return node.key_at(i); });
    } else {
      const CircularNode node(*region_, leaf, geo_);
      const std::uint32_t b = node.base();
      ok = check([&](std::uint32_t i) { return node.key_at(b, i); });
    }
    if (!ok) return false;
  }
  return true;
}

void BPlusTree::check_subtree(std::uint64_t node, std::uint32_t level, std::optional<Key> lo, std::optional<Key> hi,
                              std::vector<std::uint64_t>& leaves_out) const {
  validate_node_offset(node);
  const std::string where = " at node " + std::to_string(node);
  const NodeHeader h = read_header(*region_, geo_, node);
  const NodeMeta& m = meta(node);
  if (h.level != level || m.level != level) throw Error(Errc::corruption, "unexpected level" + where);
  const NodeKind want = level == 0 ? config_.leaf_kind : NodeKind::linear;
  if (h.kind != want) throw Error(Errc::corruption, "unexpected node kind" + where);

  const std::uint32_t n = count_of(node, m);
  std::vector<Entry> entries;
  if (want == NodeKind::linear) {
    const LinearNode view(*region_, node, geo_);
    if (n > geo_.capacity()) throw Error(Errc::corruption, "count exceeds capacity" + where);
    entries = view.entries(n);
    if (n < geo_.capacity() && view.ptr_at(n) != kNilPtr) throw Error(Errc::corruption, "missing terminator" + where);
  } else {
    const CircularNode view(*region_, node, geo_);
    if (view.count() != n) throw Error(Errc::corruption, "ring count disagrees with metadata" + where);
    if (n > view.max_entries() || view.base() >= geo_.capacity()) {
      throw Error(Errc::corruption, "ring word out of range" + where);
    }
    entries = view.entries();
    if (view.ptr_at(view.base(), n) != kNilPtr || view.ptr_at(view.base(), geo_.capacity() - 1) != kNilPtr) {
      throw Error(Errc::corruption, "free ring slots are not nil" + where);
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Key k = entries[i].key;
    if (is_reserved_ptr(entries[i].ptr)) throw Error(Errc::corruption, "reserved ptr in valid range" + where);
    if (i > 0 && entries[i - 1].key >= k) throw Error(Errc::corruption, "keys not strictly sorted" + where);
    if ((lo && k < *lo) || (hi && k >= *hi)) throw Error(Errc::corruption, "key outside parent bounds" + where);
  }
  if (level == 0) {
    leaves_out.push_back(node);
    return;
  }
  const std::uint64_t leftmost = LinearNode(*region_, node, geo_).leftmost();
  check_subtree(leftmost, level - 1, lo, entries.empty() ? hi : std::optional<Key>(entries[0].key), leaves_out);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::optional<Key> upper = i + 1 < entries.size() ? std::optional<Key>(entries[i + 1].key) : hi;
    check_subtree(entries[i].ptr, level - 1, entries[i].key, upper, leaves_out);
  }
}

void BPlusTree::check_invariants() const {
  const std::uint64_t r = root();
  std::vector<std::uint64_t> in_order;
  check_subtree(r, meta(r).level, std::nullopt, std::nullopt, in_order);
  if (leaves() != in_order) throw Error(Errc::corruption, "leaf sibling chain disagrees with tree order");
}

// --- recovery ---

std::unique_ptr<BPlusTree> BPlusTree::recover(PersistentRegion& region, const TreeConfig& config) {
  std::unique_ptr<BPlusTree> t(new BPlusTree(region, config));
  if (region.size() < Superblock::kSize || region.load_word(Superblock::kMagicWord) != Superblock::kMagic) {
    throw Error(Errc::corruption, "region has no tree superblock");
  }
  if (region.load_word(Superblock::kNodeSizeWord) != config.node_size ||
      region.load_word(Superblock::kLeafKindWord) != static_cast<std::uint64_t>(config.leaf_kind)) {
    throw Error(Errc::config, "tree configuration does not match the region's superblock");
  }
  const std::uint64_t root = region.load_word(Superblock::kRootWord);
  t->validate_node_offset(root);
  t->root_.store(root, std::memory_order_relaxed);
  t->recover_structure();
  return t;
}

void BPlusTree::recover_structure() {
  // Normalize every node reachable through leftmost descent and sibling chains.
  std::vector<std::vector<std::uint64_t>> levels;
  std::uint64_t first = root();
  std::uint32_t level = read_header(*region_, geo_, first).level;
  std::uint64_t max_end = allocator_.start();
  std::size_t seen = 0;
  for (;;) {
    std::vector<std::uint64_t> chain;
    for (std::uint64_t node = first; node != 0;) {
      validate_node_offset(node);
      if (++seen > meta_slots_) throw Error(Errc::corruption, "sibling chain does not terminate");
      const NodeHeader h = read_header(*region_, geo_, node);
      const NodeKind want = level == 0 ? config_.leaf_kind : NodeKind::linear;
      if (h.level != level || h.kind != want) {
        throw Error(Errc::corruption, "node " + std::to_string(node) + " has an unexpected level or kind");
      }
      const std::uint32_t n = want == NodeKind::circular ? CircularNode(*region_, node, geo_).recover()
                                                         : LinearNode(*region_, node, geo_).recover();
      make_meta(node, level, n);
      max_end = std::max(max_end, node + geo_.footprint());
      chain.push_back(node);
      node = h.sibling;
    }
    levels.push_back(std::move(chain));
    if (level == 0) break;
    first = LinearNode(*region_, levels.back().front(), geo_).leftmost();
    if (first == 0) throw Error(Errc::corruption, "internal node without a leftmost child");
    --level;
  }
  allocator_.reset(max_end);

  // Drop entries a split already copied to the right sibling.
  for (const auto& chain : levels) {
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
      const std::uint64_t a = chain[i];
      const Key low = read_header(*region_, geo_, chain[i + 1]).low_key;
      NodeMeta& am = meta(a);
      if (am.level == 0 && config_.leaf_kind == NodeKind::circular) {
        CircularNode view(*region_, a, geo_);
        const std::vector<Entry> entries = view.entries();
        const auto p = static_cast<std::uint32_t>(
            std::find_if(entries.begin(), entries.end(), [&](const Entry& e) { return e.key >= low; }) -
            entries.begin());
        view.truncate(p);
        am.count.store(view.count(), std::memory_order_relaxed);
      } else {
        LinearNode view(*region_, a, geo_);
        std::uint32_t n = count_of(a, am);
        view.truncate(n, view.lower_bound(n, low));
        am.count.store(n, std::memory_order_relaxed);
      }
    }
  }

  // A root that split without the new root being published.
  if (levels.front().size() > 1) {
    const auto& chain = levels.front();
    std::vector<Entry> entries;
    for (std::size_t i = 1; i < chain.size(); ++i) {
      entries.push_back({read_header(*region_, geo_, chain[i]).low_key, chain[i]});
    }
    if (entries.size() > geo_.capacity()) throw Error(Errc::corruption, "root level too wide to repair");
    const std::uint64_t fresh = allocator_.allocate();
    const std::uint32_t top = meta(chain.front()).level + 1;
    format_root(fresh, top, chain.front(), entries);
    region_->store_word(Superblock::kRootWord, fresh);
    region_->flush_line(Superblock::kRootWord);
    region_->fence();
    make_meta(fresh, top, static_cast<std::uint32_t>(entries.size()));
    root_.store(fresh, std::memory_order_release);
    levels.insert(levels.begin(), std::vector<std::uint64_t>{fresh});
  }

  // Link nodes that are only reachable through their left sibling.
  for (std::size_t li = 1; li < levels.size(); ++li) {
    std::unordered_set<std::uint64_t> referenced;
    for (std::uint64_t p = levels[li - 1].front(); p != 0;) {
      const LinearNode view(*region_, p, geo_);
      referenced.insert(view.leftmost());
      for (const Entry& e : view.entries(count_of(p, meta(p)))) referenced.insert(e.ptr);
      p = view.sibling();
    }
    for (const std::uint64_t node : levels[li]) {
      if (referenced.count(node)) continue;
      const Key low = read_header(*region_, geo_, node).low_key;
      const std::uint32_t parent_level = meta(node).level + 1;
      std::vector<std::uint64_t> path;
      std::uint64_t cur = root();
      for (;;) {
        path.push_back(cur);
        const NodeMeta& cm = meta(cur);
        if (cm.level == parent_level) break;
        NullTrace none;
        cur = LinearNode(*region_, cur, geo_).find_child(count_of(cur, cm), low, none);
      }
      if (const auto s = internal_insert(cur, low, node)) propagate(path, path.size() - 1, s->separator, s->new_node);
    }
  }

  for (const std::uint64_t leaf : leaves()) rebuild_accel(leaf, meta(leaf));
  check_invariants();
}

}  // namespace nvmtree
