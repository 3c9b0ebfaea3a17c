#include "nvmtree/persistent_region.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <new>
#include <random>
#include <unordered_set>

namespace nvmtree {

struct PersistentRegion::Tracking {
  std::vector<std::uint64_t> persisted;
  std::vector<PendingStore> pending;
  std::map<std::uint64_t, std::size_t> line_last;  // line index -> newest pending store
  std::vector<std::size_t> frontier;               // every later store depends on these
};

namespace {

std::uint64_t* allocate_words(std::size_t bytes) {
  auto* p = static_cast<std::uint64_t*>(::operator new(bytes, std::align_val_t{64}));
  std::memset(p, 0, bytes);
  return p;
}

void add_unique(std::vector<std::size_t>& v, std::size_t x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

}  // namespace

PersistentRegion::PersistentRegion(const RegionConfig& config) : config_(config) {
  if (config_.line_size < 8 || (config_.line_size & (config_.line_size - 1)) != 0) {
    throw Error(Errc::invalid_argument, "line size must be a power of two >= 8");
  }
  if (config_.size_bytes == 0) throw Error(Errc::invalid_argument, "empty region");
  // Round up to whole lines so flushes never run past the end.
  config_.size_bytes = (config_.size_bytes + config_.line_size - 1) / config_.line_size * config_.line_size;
  words_ = allocate_words(config_.size_bytes);
  if (config_.track_persistence) {
    tracking_ = std::make_unique<Tracking>();
    tracking_->persisted.assign(config_.size_bytes / 8, 0);
  }
}

PersistentRegion::PersistentRegion(const PersistentRegion& other) : config_(other.config_) {
  std::lock_guard guard(other.tracking_mutex_);
  words_ = allocate_words(config_.size_bytes);
  std::memcpy(words_, other.words_, config_.size_bytes);
  flushes_ = other.flushes_.load();
  fences_ = other.fences_.load();
  if (other.tracking_) tracking_ = std::make_unique<Tracking>(*other.tracking_);
}

PersistentRegion::~PersistentRegion() { ::operator delete(words_, std::align_val_t{64}); }

void PersistentRegion::check_word(std::uint64_t offset) const {
  if (offset % 8 != 0) throw Error(Errc::alignment, "offset " + std::to_string(offset) + " is not 8-byte aligned");
  if (offset + 8 > config_.size_bytes) {
    throw Error(Errc::alignment, "offset " + std::to_string(offset) + " outside region");
  }
}

std::uint64_t PersistentRegion::load_word(std::uint64_t offset) const {
  check_word(offset);
  return load(offset);
}

void PersistentRegion::store_word(std::uint64_t offset, std::uint64_t value) {
  check_word(offset);
  if (event_log_) event_log_->push_back({EventKind::store, offset, value});
  if (tracking_) {
    std::lock_guard guard(tracking_mutex_);
    std::atomic_ref<std::uint64_t>(words_[offset >> 3]).store(value, std::memory_order_relaxed);
    track_store(offset, value);
    return;
  }
  std::atomic_ref<std::uint64_t>(words_[offset >> 3]).store(value, std::memory_order_relaxed);
}

void PersistentRegion::flush_line(std::uint64_t offset) {
  if (offset >= config_.size_bytes) {
    throw Error(Errc::range, "flush offset " + std::to_string(offset) + " outside region");
  }
  const std::uint64_t line = offset / config_.line_size;
  if (event_log_) event_log_->push_back({EventKind::flush, line * config_.line_size, 0});
  if (tracking_) {
    std::lock_guard guard(tracking_mutex_);
    track_flush(line);
  }
  flushes_.fetch_add(1, std::memory_order_relaxed);
  inject_delay();
}

void PersistentRegion::fence() {
  if (event_log_) event_log_->push_back({EventKind::fence, 0, 0});
  if (tracking_) {
    std::lock_guard guard(tracking_mutex_);
    track_fence();
  }
  fences_.fetch_add(1, std::memory_order_relaxed);
  std::atomic_thread_fence(std::memory_order_seq_cst);
}

FlushCounters PersistentRegion::counters() const noexcept {
  FlushCounters c;
  c.flushes = flushes_.load(std::memory_order_relaxed);
  c.fences = fences_.load(std::memory_order_relaxed);
  c.injected_delay_ns = c.flushes * config_.write_latency_ns;
  return c;
}

void PersistentRegion::inject_delay() const {
  if (config_.write_latency_ns == 0) return;
  using clock = std::chrono::steady_clock;
  const auto until = clock::now() + std::chrono::nanoseconds(config_.write_latency_ns);
  while (clock::now() < until) {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_ia32_pause();
#endif
  }
}

void PersistentRegion::track_store(std::uint64_t offset, std::uint64_t value) {
  auto& t = *tracking_;
  const std::uint64_t line = offset / config_.line_size;
  PendingStore s;
  s.offset = offset;
  s.value = value;
  s.deps = t.frontier;
  if (auto it = t.line_last.find(line); it != t.line_last.end()) add_unique(s.deps, it->second);
  std::sort(s.deps.begin(), s.deps.end());
  t.pending.push_back(std::move(s));
  t.line_last[line] = t.pending.size() - 1;
}

void PersistentRegion::track_flush(std::uint64_t line) {
  auto& t = *tracking_;
  auto it = t.line_last.find(line);
  if (it == t.line_last.end()) return;
  for (auto& s : t.pending) {
    if (s.offset / config_.line_size == line) s.flushed = true;
  }
  add_unique(t.frontier, it->second);
}

void PersistentRegion::track_fence() {
  auto& t = *tracking_;
  std::vector<char> durable(t.pending.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < t.pending.size(); ++i) {
    if (t.pending[i].flushed) stack.push_back(i);
  }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    if (durable[i]) continue;
    durable[i] = 1;
    for (std::size_t d : t.pending[i].deps) stack.push_back(d);
  }

  std::vector<std::size_t> remap(t.pending.size(), SIZE_MAX);
  std::vector<PendingStore> kept;
  for (std::size_t i = 0; i < t.pending.size(); ++i) {
    if (durable[i]) {
      t.persisted[t.pending[i].offset >> 3] = t.pending[i].value;
    } else {
      remap[i] = kept.size();
      kept.push_back(std::move(t.pending[i]));
    }
  }
  for (auto& s : kept) {
    std::vector<std::size_t> deps;
    for (std::size_t d : s.deps) {
      if (remap[d] != SIZE_MAX) deps.push_back(remap[d]);
    }
    s.deps = std::move(deps);
  }
  t.pending = std::move(kept);
  t.line_last.clear();
  for (std::size_t i = 0; i < t.pending.size(); ++i) t.line_last[t.pending[i].offset / config_.line_size] = i;
  t.frontier.clear();
  for (const auto& [line, idx] : t.line_last) t.frontier.push_back(idx);
}

std::set<std::uint64_t> PersistentRegion::dirty_words() const {
  std::set<std::uint64_t> out;
  std::lock_guard guard(tracking_mutex_);
  if (!tracking_) return out;
  for (const auto& s : tracking_->pending) out.insert(s.offset);
  return out;
}

std::vector<PendingStore> PersistentRegion::pending_stores() const {
  std::lock_guard guard(tracking_mutex_);
  if (!tracking_) return {};
  return tracking_->pending;
}

std::size_t PersistentRegion::pending_count() const {
  std::lock_guard guard(tracking_mutex_);
  return tracking_ ? tracking_->pending.size() : 0;
}

std::uint64_t PersistentRegion::persisted_word(std::uint64_t offset) const {
  check_word(offset);
  std::lock_guard guard(tracking_mutex_);
  if (!tracking_) throw Error(Errc::plan, "persistence tracking is disabled");
  return tracking_->persisted[offset >> 3];
}

std::vector<CrashPlan> PersistentRegion::enumerate_crash_plans(std::size_t cap) const {
  std::lock_guard guard(tracking_mutex_);
  if (!tracking_) throw Error(Errc::plan, "persistence tracking is disabled");
  const auto& pending = tracking_->pending;
  if (cap < 2) cap = 2;

  // Stores on one line persist in order, so a closed set is a prefix of
  // every line's chain.
  std::vector<std::vector<std::size_t>> chains;
  std::vector<std::pair<std::size_t, std::size_t>> where(pending.size());  // (chain, position)
  {
    std::map<std::uint64_t, std::size_t> chain_of_line;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const std::uint64_t line = pending[i].offset / config_.line_size;
      auto [it, fresh] = chain_of_line.try_emplace(line, chains.size());
      if (fresh) chains.emplace_back();
      where[i] = {it->second, chains[it->second].size()};
      chains[it->second].push_back(i);
    }
  }
  const std::size_t n_chains = chains.size();

  auto closed = [&](const std::vector<std::size_t>& k) {
    for (std::size_t c = 0; c < n_chains; ++c) {
      for (std::size_t pos = 0; pos < k[c]; ++pos) {
        for (std::size_t d : pending[chains[c][pos]].deps) {
          if (k[where[d].first] <= where[d].second) return false;
        }
      }
    }
    return true;
  };
  auto close = [&](std::vector<std::size_t>& k) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t c = 0; c < n_chains; ++c) {
        for (std::size_t pos = 0; pos < k[c]; ++pos) {
          for (std::size_t d : pending[chains[c][pos]].deps) {
            auto [dc, dpos] = where[d];
            if (k[dc] <= dpos) {
              k[dc] = dpos + 1;
              changed = true;
            }
          }
        }
      }
    }
  };
  auto to_plan = [&](const std::vector<std::size_t>& k) {
    CrashPlan plan;
    for (std::size_t c = 0; c < n_chains; ++c) {
      plan.stores.insert(plan.stores.end(), chains[c].begin(), chains[c].begin() + static_cast<std::ptrdiff_t>(k[c]));
    }
    std::sort(plan.stores.begin(), plan.stores.end());
    return plan;
  };

  double space = 1.0;
  for (const auto& chain : chains) space *= static_cast<double>(chain.size() + 1);

  std::vector<std::vector<std::size_t>> valid;
  constexpr double kExhaustiveLimit = double(1u << 22);
  if (space <= kExhaustiveLimit) {
    std::vector<std::size_t> k(n_chains, 0);
    while (true) {
      if (closed(k)) valid.push_back(k);
      std::size_t c = 0;
      while (c < n_chains && ++k[c] > chains[c].size()) k[c++] = 0;
      if (c == n_chains) break;
    }
    if (valid.size() <= cap) {
      std::vector<CrashPlan> plans;
      plans.reserve(valid.size());
      for (const auto& k : valid) plans.push_back(to_plan(k));
      return plans;
    }
    // Deterministic sample; keep the two extreme plans.
    std::mt19937_64 rng(0x5eed5eedULL);
    std::vector<std::size_t> order(valid.size() - 2);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i + 1;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(cap - 2);
    order.push_back(0);
    order.push_back(valid.size() - 1);
    std::sort(order.begin(), order.end());
    std::vector<CrashPlan> plans;
    for (std::size_t i : order) plans.push_back(to_plan(valid[i]));
    return plans;
  }

  // Too many combinations to walk: sample random prefixes and close them.
  std::mt19937_64 rng(0x5eed5eedULL);
  std::set<std::vector<std::size_t>> seen;
  seen.insert(std::vector<std::size_t>(n_chains, 0));
  std::vector<std::size_t> full(n_chains);
  for (std::size_t c = 0; c < n_chains; ++c) full[c] = chains[c].size();
  seen.insert(full);
  for (std::size_t attempt = 0; seen.size() < cap && attempt < cap * 16; ++attempt) {
    std::vector<std::size_t> k(n_chains);
    for (std::size_t c = 0; c < n_chains; ++c) {
      k[c] = std::uniform_int_distribution<std::size_t>(0, chains[c].size())(rng);
    }
    close(k);
    seen.insert(k);
  }
  std::vector<CrashPlan> plans;
  for (const auto& k : seen) plans.push_back(to_plan(k));
  return plans;
}

PersistentRegion PersistentRegion::crash_image(const CrashPlan& plan) const {
  std::lock_guard guard(tracking_mutex_);
  if (!tracking_) throw Error(Errc::plan, "persistence tracking is disabled");
  const auto& pending = tracking_->pending;
  std::vector<char> chosen(pending.size(), 0);
  std::size_t prev = 0;
  for (std::size_t n = 0; n < plan.stores.size(); ++n) {
    const std::size_t i = plan.stores[n];
    if (i >= pending.size()) throw Error(Errc::plan, "plan references a store that is not pending");
    if (n > 0 && i <= prev) throw Error(Errc::plan, "plan indices must be strictly ascending");
    chosen[i] = 1;
    prev = i;
  }
  for (std::size_t i : plan.stores) {
    for (std::size_t d : pending[i].deps) {
      if (!chosen[d]) throw Error(Errc::plan, "plan violates persist ordering");
    }
  }

  RegionConfig cfg = config_;
  PersistentRegion image(cfg);
  std::memcpy(image.words_, tracking_->persisted.data(), config_.size_bytes);
  for (std::size_t i : plan.stores) image.words_[pending[i].offset >> 3] = pending[i].value;
  if (image.tracking_) {
    std::memcpy(image.tracking_->persisted.data(), image.words_, config_.size_bytes);
  }
  return image;
}

void PersistentRegion::set_event_log(std::vector<Event>* log) { event_log_ = log; }

void PersistentRegion::apply(const Event& event) {
  switch (event.kind) {
    case EventKind::store: store_word(event.offset, event.value); break;
    case EventKind::flush: flush_line(event.offset); break;
    case EventKind::fence: fence(); break;
  }
}

}  // namespace nvmtree
