#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <bitset>
#include <random>
#include <set>

#include "nvmtree/accel.hpp"
#include "nvmtree/circular_node.hpp"
#include "nvmtree/linear_node.hpp"
#include "nvmtree/metrics.hpp"
#include "support.hpp"

using namespace nvmtree;
using nvmtree::testing::entries_for;
using nvmtree::testing::NodeFixture;

namespace {

std::vector<Key> keys_times(std::uint32_t n, Key step, Key first = 0) {
  std::vector<Key> out;
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(first + i * step);
  return out;
}

// Min-of-each-group oracle over a sorted key list.
std::vector<Key> group_minimums(const std::vector<Key>& keys, std::uint32_t groups) {
  std::vector<Key> out(groups, kKeyMax);
  for (std::size_t i = 0; i < keys.size(); ++i) out[i / 4] = std::min(out[i / 4], keys[i]);
  return out;
}

std::vector<Key> sentinels_of(const SentinelArray& s) {
  std::vector<Key> out;
  for (std::uint32_t g = 0; g < s.groups(); ++g) out.push_back(s.sentinel(g));
  return out;
}

// Locate oracle: linear walk of the sentinel values as defined, with no
// clamping; the caller clamps to the last non-empty group.
std::uint32_t walk(const std::vector<Key>& sentinels, Key key) {
  std::uint32_t begin = 0;
  for (std::size_t i = 1; i < sentinels.size(); ++i) {
    if (key < sentinels[i]) break;
    begin += 4;
  }
  return begin;
}

// Sentinel-assisted search over a quiescent linear node.
template <class Trace>
std::optional<std::uint64_t> sentinel_search(const LinearNode& node, const SentinelArray& s, std::uint32_t n, Key key,
                                             Trace& t) {
  const std::uint32_t begin = s.locate(key, n, t);
  return node.scan(begin, std::min(begin + 4, n), key, t);
}

template <class Trace>
std::optional<std::uint64_t> fingerprint_search(const LinearNode& node, const FingerprintArray& f, std::uint32_t n,
                                                Key key, Trace& t, std::uint32_t* cmp = nullptr) {
  const auto pos = f.find(
      key, n,
      [&](std::uint32_t i) {
        t.touch(node.key_address(i));
        return node.key_at(i);
      },
      t, cmp);
  if (!pos) return std::nullopt;
  return node.ptr_at(*pos);
}

}  // namespace

TEST(SentinelArray, TwoKilobyteNodeNeedsFourLines) {
  const auto geo = NodeGeometry::make(2048);
  SentinelArray s(geo.capacity() / 4);
  EXPECT_EQ(s.groups(), 32u);
  EXPECT_EQ(s.storage_lines(), 4u);
}

TEST(SentinelArray, FiveTwelveByteNodeFitsOneLine) {
  SentinelArray s(NodeGeometry::make(512).capacity() / 4);
  EXPECT_EQ(s.groups(), 8u);
  EXPECT_EQ(s.storage_lines(), 1u);
}

TEST(SentinelArray, ProbesAreLineAligned) {
  for (std::uint32_t groups : {8u, 32u, 64u, 128u}) {
    SentinelArray s(groups);
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(s.probe_data()) % 64, 0u) << groups;
  }
}

TEST(SentinelArray, EmptyNodeIsAllKeyMax) {
  SentinelArray s(64);
  s.build(0, [](std::uint32_t) -> Key { throw std::logic_error("no keys"); });
  for (Key k : sentinels_of(s)) EXPECT_EQ(k, kKeyMax);
}

TEST(SentinelArray, BuildMatchesMinOfEachGroupOracle) {
  const std::vector<Key> keys = keys_times(256, 4);
  SentinelArray s(64);
  s.build(256, [&](std::uint32_t i) { return keys[i]; });
  const std::vector<Key> got = sentinels_of(s);
  EXPECT_EQ(got, group_minimums(keys, 64));
  EXPECT_EQ(got[0], 0u);
  EXPECT_EQ(got[1], 16u);
  EXPECT_EQ(got[2], 32u);
}

TEST(SentinelArray, PartialNodeLeavesTailGroupsEmpty) {
  const std::vector<Key> keys = keys_times(10, 3, 1);
  SentinelArray s(8);
  s.build(10, [&](std::uint32_t i) { return keys[i]; });
  EXPECT_EQ(sentinels_of(s), group_minimums(keys, 8));
  EXPECT_EQ(s.sentinel(3), kKeyMax);
}

TEST(SentinelArray, OutOfRangeGroupThrows) {
  SentinelArray s(4);
  EXPECT_THROW(s.sentinel(4), std::out_of_range);
  EXPECT_THROW(SentinelArray(0), Error);
}

TEST(SentinelArray, LocateWalkThrough) {
  // 16 entries in 4 groups: group minimums 10, 50, 100, 126.
  const std::vector<Key> keys{10, 20, 30, 40, 50, 60, 70, 80, 100, 110, 120, 125, 126, 130, 140, 150};
  SentinelArray s(4);
  s.build(16, [&](std::uint32_t i) { return keys[i]; });
  ASSERT_EQ(sentinels_of(s), (std::vector<Key>{10, 50, 100, 126}));
  NullTrace t;
  EXPECT_EQ(s.locate(130, 16, t), 12u);
  EXPECT_EQ(s.locate(5, 16, t), 0u);
  EXPECT_EQ(s.locate(100, 16, t), 8u);
  EXPECT_EQ(s.locate(99, 16, t), 4u);
}

TEST(SentinelArray, LocateMatchesWalkOracle) {
  std::mt19937_64 rng(3);
  for (int round = 0; round < 300; ++round) {
    const std::uint32_t n = 1 + rng() % 64;
    std::set<Key> ks;
    while (ks.size() < n) ks.insert(rng() % 1000);
    const std::vector<Key> keys(ks.begin(), ks.end());
    SentinelArray s(16);
    s.build(n, [&](std::uint32_t i) { return keys[i]; });
    const std::vector<Key> sent = group_minimums(keys, 16);
    const std::uint32_t last = (n - 1) / 4 * 4;
    for (Key k = 0; k < 1010; k += 7) {
      NullTrace t;
      ASSERT_EQ(s.locate(k, n, t), std::min(walk(sent, k), last));
    }
  }
}

TEST(SentinelArray, SentinelsAreNonDecreasingAfterEveryMutation) {
  NodeFixture f(1024, NodeKind::linear, {}, 0, 1, false);
  LinearNode node(f.region, f.node, f.geo);
  SentinelArray s(f.geo.capacity() / 4);
  std::uint32_t count = 0;
  std::set<Key> present;
  std::mt19937_64 rng(4);
  auto key_at = [&](std::uint32_t i) { return node.key_at(i); };
  for (int i = 0; i < 5000; ++i) {
    const Key k = rng() % 200;
    if (present.count(k)) {
      const std::uint32_t p = node.erase(count, k);
      present.erase(k);
      s.sync(count, p, count, key_at);
    } else if (count < node.capacity()) {
      const auto r = node.insert(count, k, k + 2);
      present.insert(k);
      s.sync(count, r.position, count - 1, key_at);
    }
    const std::vector<Key> v = sentinels_of(s);
    ASSERT_TRUE(std::is_sorted(v.begin(), v.end()));
    SentinelArray fresh(s.groups());
    fresh.build(count, key_at);
    ASSERT_TRUE(s == fresh);
  }
}

TEST(SentinelArray, SyncOfShiftedRangeEqualsFullBuild) {
  // Insert at position 8 of a 20-entry node shifts groups 2..5 only.
  std::vector<Key> keys = keys_times(20, 10, 10);
  NodeFixture f(512, NodeKind::linear, entries_for(keys), 0, 1, false);
  LinearNode node(f.region, f.node, f.geo);
  auto key_at = [&](std::uint32_t i) { return node.key_at(i); };
  std::uint32_t count = 20;
  SentinelArray s(8);
  s.build(count, key_at);
  const std::vector<Key> before = sentinels_of(s);
  const auto r = node.insert(count, 85, 852);
  ASSERT_EQ(r.position, 8u);
  s.sync(count, 8, count - 1, key_at);
  SentinelArray fresh(8);
  fresh.build(count, key_at);
  EXPECT_TRUE(s == fresh);
  const std::vector<Key> after = sentinels_of(s);
  EXPECT_EQ(after[0], before[0]);
  EXPECT_EQ(after[1], before[1]);
  for (std::uint32_t g = 2; g <= 5; ++g) EXPECT_NE(after[g], before[g]) << g;
  EXPECT_EQ(after[6], before[6]);
}

TEST(SentinelArray, DeletingGroupMinimumRaisesItsSentinel) {
  std::vector<Key> keys = keys_times(8, 10, 10);
  NodeFixture f(512, NodeKind::linear, entries_for(keys), 0, 1, false);
  LinearNode node(f.region, f.node, f.geo);
  auto key_at = [&](std::uint32_t i) { return node.key_at(i); };
  std::uint32_t count = 8;
  SentinelArray s(8);
  s.build(count, key_at);
  ASSERT_EQ(s.sentinel(1), 50u);
  const std::uint32_t p = node.erase(count, 50);
  s.sync(count, p, count, key_at);
  EXPECT_EQ(s.sentinel(1), 60u);
}

TEST(SentinelArray, SyncIssuesNoFlushesOrFences) {
  NodeFixture f(4096, NodeKind::linear, entries_for(keys_times(200, 3, 1)), 0, 1, true);
  LinearNode node(f.region, f.node, f.geo);
  auto key_at = [&](std::uint32_t i) { return node.key_at(i); };
  SentinelArray s(64);
  FingerprintArray fp(256);
  const auto before = f.region.counters();
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100000; ++i) {
    const auto lo = static_cast<std::uint32_t>(rng() % 256);
    const auto hi = lo + static_cast<std::uint32_t>(rng() % (256 - lo));
    s.sync(200, lo, hi, key_at);
    fp.sync(200, lo, hi, key_at);
  }
  EXPECT_EQ(f.region.counters(), before);
}

TEST(SentinelArray, RebuildOverwritesGarbage) {
  const std::vector<Key> keys = keys_times(30, 5, 2);
  SentinelArray s(8);
  s.build(8, [](std::uint32_t i) { return Key{999 - i}; });
  s.build(30, [&](std::uint32_t i) { return keys[i]; });
  SentinelArray fresh(8);
  fresh.build(30, [&](std::uint32_t i) { return keys[i]; });
  EXPECT_TRUE(s == fresh);
}

// Present key in line L: probes up to index L are read, i.e. ceil((L+1)/8)
// probe lines, plus the one KV line.
TEST(SentinelPath, TouchedLinesOnFullNodesOfEverySize) {
  for (std::uint32_t size : {512u, 1024u, 2048u, 4096u}) {
    const auto geo = NodeGeometry::make(size);
    const std::uint32_t cap = geo.capacity();
    NodeFixture f(size, NodeKind::linear, entries_for(keys_times(cap, 2, 2)), 0, 1, false);
    LinearNode node(f.region, f.node, f.geo);
    SentinelArray s(cap / 4);
    s.build(cap, [&](std::uint32_t i) { return node.key_at(i); });
    std::uint32_t worst = 0;
    for (std::uint32_t j = 0; j < cap; ++j) {
      AccessTrace t;
      const auto got = sentinel_search(node, s, cap, node.key_at(j), t);
      ASSERT_EQ(got, std::optional<std::uint64_t>(node.ptr_at(j)));
      const std::uint32_t line = j / 4;
      ASSERT_EQ(touched_lines(t), (line + 1 + 7) / 8 + 1) << size << " slot " << j;
      worst = std::max(worst, static_cast<std::uint32_t>(touched_lines(t)));
    }
    if (size == 2048) EXPECT_EQ(worst, 5u);
  }
}

TEST(SentinelPath, FullFourKilobyteNodeAverages) {
  NodeFixture f(4096, NodeKind::linear, entries_for(keys_times(256, 2, 2)), 0, 1, false);
  LinearNode node(f.region, f.node, f.geo);
  SentinelArray s(64);
  s.build(256, [&](std::uint32_t i) { return node.key_at(i); });
  double plain = 0, sentinel = 0, binary = 0;
  for (std::uint32_t j = 0; j < 256; ++j) {
    AccessTrace a, b, c;
    node.scan(0, 256, node.key_at(j), a);
    sentinel_search(node, s, 256, node.key_at(j), b);
    node.search_binary(256, node.key_at(j), c);
    plain += static_cast<double>(touched_lines(a));
    sentinel += static_cast<double>(touched_lines(b));
    binary += static_cast<double>(touched_lines(c));
  }
  EXPECT_DOUBLE_EQ(plain / 256, 32.5);
  EXPECT_DOUBLE_EQ(sentinel / 256, 5.5);
  EXPECT_GT(binary / 256, sentinel / 256);
}

TEST(SentinelPath, WorstCaseOnTwoKilobyteNodeIsFiveVersusThirtyTwo) {
  NodeFixture f(2048, NodeKind::linear, entries_for(keys_times(128, 2, 2)), 0, 1, false);
  LinearNode node(f.region, f.node, f.geo);
  SentinelArray s(32);
  s.build(128, [&](std::uint32_t i) { return node.key_at(i); });
  AccessTrace a, b;
  node.scan(0, 128, node.key_at(127), a);
  sentinel_search(node, s, 128, node.key_at(127), b);
  EXPECT_EQ(touched_lines(a), 32u);
  EXPECT_EQ(touched_lines(b), 5u);
}

TEST(Fingerprint, Deterministic) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Key k = rng();
    EXPECT_EQ(fingerprint_byte(k), fingerprint_byte(k));
  }
}

TEST(Fingerprint, UniformOverMillionRandomKeys) {
  std::array<std::uint32_t, 256> freq{};
  std::mt19937_64 rng(2024);
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) ++freq[fingerprint_byte(rng())];
  const double expect = n / 256.0;
  for (std::uint32_t b = 0; b < 256; ++b) {
    EXPECT_NEAR(freq[b], expect, expect * 0.05) << "byte " << b;
  }
}

TEST(Fingerprint, AvalancheAboveFortyPercentPerOutputBit) {
  std::mt19937_64 rng(77);
  std::array<std::uint64_t, 8> flips{};
  std::uint64_t trials = 0;
  for (int i = 0; i < 2000; ++i) {
    const Key k = rng();
    for (int bit = 0; bit < 64; ++bit) {
      const std::uint8_t d = fingerprint_byte(k) ^ fingerprint_byte(k ^ (Key{1} << bit));
      for (int o = 0; o < 8; ++o) flips[o] += (d >> o) & 1;
      ++trials;
    }
  }
  for (int o = 0; o < 8; ++o) EXPECT_GT(static_cast<double>(flips[o]) / trials, 0.4) << "bit " << o;
}

TEST(Fingerprint, BuildAndOutOfRange) {
  const std::vector<Key> keys = keys_times(5, 11);
  FingerprintArray f(8);
  f.build(5, [&](std::uint32_t i) { return keys[i]; });
  for (std::uint32_t i = 0; i < 5; ++i) EXPECT_EQ(f.at(i), fingerprint_byte(keys[i]));
  for (std::uint32_t i = 5; i < 8; ++i) EXPECT_EQ(f.at(i), 0u);
  EXPECT_THROW(f.at(8), std::out_of_range);
}

TEST(Fingerprint, PresentKeyNeedsAtLeastOneComparison) {
  NodeFixture f(512, NodeKind::linear, entries_for(keys_times(20, 7, 1)), 0, 1, false);
  LinearNode node(f.region, f.node, f.geo);
  FingerprintArray fp(32);
  fp.build(20, [&](std::uint32_t i) { return node.key_at(i); });
  NullTrace t;
  std::uint32_t cmp = 0;
  EXPECT_EQ(fingerprint_search(node, fp, 20, 43, t, &cmp), std::optional<std::uint64_t>(432));
  EXPECT_GE(cmp, 1u);
}

TEST(Fingerprint, AbsentKeyWithoutCollisionCostsNoComparison) {
  NodeFixture f(512, NodeKind::linear, entries_for(keys_times(20, 7, 1)), 0, 1, false);
  LinearNode node(f.region, f.node, f.geo);
  FingerprintArray fp(32);
  fp.build(20, [&](std::uint32_t i) { return node.key_at(i); });
  std::set<std::uint8_t> used;
  for (std::uint32_t i = 0; i < 20; ++i) used.insert(fingerprint_byte(node.key_at(i)));
  Key k = 100000;
  while (used.count(fingerprint_byte(k))) ++k;
  NullTrace t;
  std::uint32_t cmp = 99;
  EXPECT_FALSE(fingerprint_search(node, fp, 20, k, t, &cmp).has_value());
  EXPECT_EQ(cmp, 0u);
}

TEST(Fingerprint, AbsentKeysInFullNodeCostAboutOneComparison) {
  NodeFixture f(4096, NodeKind::linear, {}, 0, 1, false);
  LinearNode node(f.region, f.node, f.geo);
  std::uint32_t count = 0;
  std::mt19937_64 rng(9);
  std::set<Key> present;
  while (count < 255) {
    const Key k = rng() >> 1;
    if (present.insert(k).second) node.insert(count, k, 2);
  }
  FingerprintArray fp(256);
  fp.build(count, [&](std::uint32_t i) { return node.key_at(i); });
  double total = 0;
  int absent = 0;
  while (absent < 10000) {
    const Key k = rng() >> 1;
    if (present.count(k)) continue;
    NullTrace t;
    std::uint32_t cmp = 0;
    ASSERT_FALSE(fingerprint_search(node, fp, count, k, t, &cmp).has_value());
    total += cmp;
    ++absent;
  }
  EXPECT_NEAR(total / absent, 255.0 / 256.0, 0.1);
}

TEST(Accelerators, AllSearchPathsAgreeOnLinearNodes) {
  std::mt19937_64 rng(21);
  for (std::uint32_t size : {512u, 1024u}) {
    NodeFixture f(size, NodeKind::linear, {}, 0, 1, false);
    LinearNode node(f.region, f.node, f.geo);
    const std::uint32_t cap = f.geo.capacity();
    auto key_at = [&](std::uint32_t i) { return node.key_at(i); };
    SentinelArray s(cap / 4);
    FingerprintArray fp(cap);
    std::uint32_t count = 0;
    std::set<Key> present;
    for (int i = 0; i < 3000; ++i) {
      const Key k = rng() % 300;
      if (present.count(k)) {
        const std::uint32_t p = node.erase(count, k);
        present.erase(k);
        s.sync(count, p, count, key_at);
        fp.sync(count, p, count, key_at);
      } else if (count < cap) {
        const auto r = node.insert(count, k, k * 3 + 2);
        present.insert(k);
        s.sync(count, r.position, count - 1, key_at);
        fp.sync(count, r.position, count - 1, key_at);
      }
      for (Key q = 0; q < 305; q += 1 + rng() % 9) {
        NullTrace t;
        const auto lin = node.scan(0, count, q, t);
        const std::optional<std::uint64_t> want =
            present.count(q) ? std::optional<std::uint64_t>(q * 3 + 2) : std::nullopt;
        ASSERT_EQ(lin, want);
        ASSERT_EQ(node.search_linear(q, t), want);
        ASSERT_EQ(node.search_binary(count, q, t), want);
        ASSERT_EQ(sentinel_search(node, s, count, q, t), want);
        ASSERT_EQ(fingerprint_search(node, fp, count, q, t), want);
      }
    }
  }
}

TEST(Accelerators, SentinelPathAgreesOnWrappedCircularNodes) {
  std::mt19937_64 rng(22);
  NodeFixture f(512, NodeKind::circular, {}, CircularNode::ring_word(29, 0), 1, false);
  CircularNode node(f.region, f.node, f.geo);
  SentinelArray s(8);
  std::set<Key> present;
  for (int i = 0; i < 3000; ++i) {
    const Key k = rng() % 100;
    if (present.count(k)) {
      node.erase(k);
      present.erase(k);
    } else if (node.count() < node.max_entries()) {
      node.insert(k, k + 2);
      present.insert(k);
    }
    const std::uint32_t b = node.base(), n = node.count();
    s.build(n, [&](std::uint32_t j) { return node.key_at(b, j); });
    for (Key q = 0; q < 101; ++q) {
      NullTrace t;
      const std::uint32_t begin = s.locate(q, n, t);
      const auto got = node.scan_logical(b, begin, std::min(begin + 4, n), q, t);
      ASSERT_EQ(got, node.search(q, t));
      ASSERT_EQ(got.has_value(), present.count(q) == 1);
    }
  }
}
