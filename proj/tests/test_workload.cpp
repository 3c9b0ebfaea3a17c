#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "nvmtree/workload.hpp"

using namespace nvmtree;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::config;
}

}  // namespace

TEST(YcsbKey, ParsesNumericSuffix) {
  EXPECT_EQ(parse_ycsb_key("user123"), 123u);
  EXPECT_EQ(parse_ycsb_key("user0"), 0u);
  EXPECT_EQ(parse_ycsb_key("42"), 42u);
  EXPECT_EQ(parse_ycsb_key("user18446744073709551615"), 18446744073709551615ull);
}

TEST(YcsbKey, RejectsOverflowAndMissingDigits) {
  EXPECT_EQ(code_of([] { parse_ycsb_key("user18446744073709551616"); }), Errc::parse);
  EXPECT_EQ(code_of([] { parse_ycsb_key("user"); }), Errc::parse);
  EXPECT_EQ(code_of([] { parse_ycsb_key(""); }), Errc::parse);
  EXPECT_EQ(code_of([] { parse_ycsb_key("user12x"); }), Errc::parse);
}

TEST(Zipf, ThetaZeroIsUniform) {
  const std::uint64_t n = 10;
  ZipfGen z(n, 0.0, 5);
  std::vector<std::uint64_t> freq(n + 1, 0);
  const int draws = 1'000'000;
  for (int i = 0; i < draws; ++i) {
    const std::uint64_t r = z.next();
    ASSERT_GE(r, 1u);
    ASSERT_LE(r, n);
    ++freq[r];
  }
  for (std::uint64_t r = 1; r <= n; ++r) {
    const double p = static_cast<double>(freq[r]) / draws;
    EXPECT_NEAR(p, 1.0 / n, 0.02 / n) << "rank " << r;
  }
}

TEST(Zipf, RankOneToRankTwoRatioMatchesPmf) {
  ZipfGen z(1'000'000, 0.99, 7);
  std::uint64_t one = 0, two = 0;
  for (int i = 0; i < 10'000'000; ++i) {
    const std::uint64_t r = z.next();
    one += r == 1;
    two += r == 2;
  }
  const double ratio = static_cast<double>(one) / static_cast<double>(two);
  const double want = std::pow(2.0, 0.99);
  EXPECT_NEAR(ratio, want, want * 0.05);
}

TEST(Zipf, RanksStayInRange) {
  for (std::uint64_t n : {1u, 2u, 3u, 100u}) {
    ZipfGen z(n, 0.99, 1);
    for (int i = 0; i < 10000; ++i) {
      const std::uint64_t r = z.next();
      ASSERT_GE(r, 1u);
      ASSERT_LE(r, n);
    }
  }
}

TEST(Zipf, SameSeedSameSequence) {
  ZipfGen a(1000, 0.99, 3), b(1000, 0.99, 3), c(1000, 0.99, 4);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next();
    ASSERT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Zipf, RejectsBadParameters) {
  EXPECT_EQ(code_of([] { ZipfGen(0, 0.5, 1); }), Errc::config);
  EXPECT_EQ(code_of([] { ZipfGen(10, 1.0, 1); }), Errc::config);
  EXPECT_EQ(code_of([] { ZipfGen(10, -0.1, 1); }), Errc::config);
}

TEST(Workload, SmallSpecIsDeterministicSevenOpScript) {
  WorkloadSpec spec;
  spec.record_count = 3;
  spec.op_count = 4;
  spec.seed = 12;
  const Workload a = gen_workload(spec);
  const Workload b = gen_workload(spec);
  ASSERT_EQ(a.load.size() + a.run.size(), 7u);
  EXPECT_EQ(a.load, b.load);
  EXPECT_EQ(a.run, b.run);
  for (const Op& op : a.load) EXPECT_EQ(op.type, OpType::insert);
  for (const Op& op : a.run) EXPECT_NE(op.type, OpType::insert);
  spec.seed = 13;
  EXPECT_NE(gen_workload(spec).load, a.load);
}

TEST(Workload, RunPhaseIsHalfReads) {
  WorkloadSpec spec;
  spec.record_count = 1000;
  spec.op_count = 1'000'000;
  spec.seed = 3;
  const Workload w = gen_workload(spec);
  std::uint64_t reads = 0;
  for (const Op& op : w.run) reads += op.type == OpType::read;
  EXPECT_NEAR(static_cast<double>(reads) / 1e6, 0.5, 0.005);
}

TEST(Workload, LoadKeysAreUniqueAndRunKeysWereLoaded) {
  for (Distribution d : {Distribution::zipf, Distribution::uniform}) {
    WorkloadSpec spec;
    spec.record_count = 50000;
    spec.op_count = 100000;
    spec.distribution = d;
    const Workload w = gen_workload(spec);
    std::unordered_set<Key> loaded;
    for (const Op& op : w.load) loaded.insert(op.key);
    EXPECT_EQ(loaded.size(), w.load.size());
    for (const Op& op : w.run) ASSERT_TRUE(loaded.count(op.key));
  }
}

TEST(Workload, ZipfRunConcentratesOnFirstRecord) {
  WorkloadSpec spec;
  spec.record_count = 10000;
  spec.op_count = 100000;
  const Workload w = gen_workload(spec);
  std::uint64_t hot = 0;
  for (const Op& op : w.run) hot += op.key == w.load[0].key;
  // P(rank 1) = 1 / zeta(10^4, 0.99), about 0.1.
  double zeta = 0;
  for (int i = 1; i <= 10000; ++i) zeta += 1.0 / std::pow(i, 0.99);
  EXPECT_NEAR(static_cast<double>(hot) / 1e5, 1.0 / zeta, 0.01);
}

TEST(Workload, RejectsInvalidSpecs) {
  WorkloadSpec s;
  s.record_count = 0;
  EXPECT_EQ(code_of([&] { gen_workload(s); }), Errc::config);
  s = {};
  s.read_fraction = 0.7;
  EXPECT_EQ(code_of([&] { gen_workload(s); }), Errc::config);
  s = {};
  s.theta = 1.5;
  EXPECT_EQ(code_of([&] { gen_workload(s); }), Errc::config);
}

TEST(Workload, UniformKeysAreDistinctAndSeeded) {
  const auto a = uniform_keys(100000, 1);
  EXPECT_EQ(std::set<Key>(a.begin(), a.end()).size(), a.size());
  EXPECT_EQ(a, uniform_keys(100000, 1));
  EXPECT_NE(a, uniform_keys(100000, 2));
}

TEST(Trace, ParsesYcsbStyleLines) {
  std::istringstream in(
      "# header\n"
      "\n"
      "INSERT usertable user10 [ field0=abc ]\n"
      "READ usertable user7\n"
      "update user99\n");
  const std::vector<Op> ops = parse_trace(in);
  ASSERT_EQ(ops.size(), 3u);
  EXPECT_EQ(ops[0], (Op{OpType::insert, 10}));
  EXPECT_EQ(ops[1], (Op{OpType::read, 7}));
  EXPECT_EQ(ops[2], (Op{OpType::update, 99}));
}

TEST(Trace, ReportsBadLines) {
  for (const char* text : {"SCAN user1\n", "READ\n", "READ t user1 extra\n", "READ userx\n"}) {
    std::istringstream in(text);
    EXPECT_EQ(code_of([&] { parse_trace(in); }), Errc::parse) << text;
  }
}

TEST(Trace, MissingFileIsConfigError) {
  EXPECT_EQ(code_of([] { load_trace_file("/nonexistent/trace.txt"); }), Errc::config);
}

TEST(Trace, LoadsFromFile) {
  const std::string path = ::testing::TempDir() + "/nvmtree_trace.txt";
  {
    std::ofstream out(path);
    out << "INSERT user5\nREAD user5\n";
  }
  const auto ops = load_trace_file(path);
  std::remove(path.c_str());
  ASSERT_EQ(ops.size(), 2u);
  EXPECT_EQ(ops[1], (Op{OpType::read, 5}));
}

TEST(ValueStore, BlocksCarryKeyAndAreReused) {
  ValueStore store(1000, 2);
  const ValueRef a = store.allocate(0, 77);
  Key first = 0;
  std::memcpy(&first, ValueStore::data(a), sizeof first);
  EXPECT_EQ(first, 77u);
  EXPECT_EQ(static_cast<std::uint8_t>(ValueStore::data(a)[999]), 77u);
  EXPECT_FALSE(is_reserved_ptr(to_raw(a)));
  store.release(0, a);
  EXPECT_EQ(store.allocate(0, 5), a);
  EXPECT_NE(store.allocate(1, 5), a);
  EXPECT_THROW(ValueStore(16, 0), Error);
}
