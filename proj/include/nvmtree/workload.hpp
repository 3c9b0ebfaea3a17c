#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nvmtree/types.hpp"

namespace nvmtree {

/// "user123" -> 123. Throws Errc::parse without digits or on overflow.
Key parse_ycsb_key(std::string_view text);

/// Zipfian ranks in [1, n] (Gray et al., as in YCSB). theta in [0, 1).
class ZipfGen {
 public:
  ZipfGen(std::uint64_t n, double theta, std::uint64_t seed);

  std::uint64_t next();
  std::uint64_t n() const noexcept { return n_; }
  double theta() const noexcept { return theta_; }

 private:
  std::uint64_t n_;
  double theta_;
  double zetan_;
  double alpha_;
  double eta_;
  double half_pow_theta_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

enum class OpType : std::uint8_t { insert, read, update };
enum class Distribution : std::uint8_t { zipf, uniform };

const char* to_string(OpType op);

struct Op {
  OpType type = OpType::read;
  Key key = 0;

  friend bool operator==(const Op&, const Op&) = default;
};

struct WorkloadSpec {
  std::uint64_t record_count = 1000;
  std::uint64_t op_count = 1000;
  double read_fraction = 0.5;
  double update_fraction = 0.5;
  Distribution distribution = Distribution::zipf;
  double theta = 0.99;
  std::uint64_t seed = 1;
  std::uint32_t value_size = 1000;  // 10 fields x 100 bytes

  /// Throws Errc::config.
  void validate() const;
};

struct Workload {
  std::vector<Op> load;
  std::vector<Op> run;
};

/// Key of the i-th loaded record: a bijective 64-bit mix of i, so distinct.
Key record_key(std::uint64_t index, std::uint64_t seed);

/// Load phase of distinct keys, then a run phase of reads/updates whose keys
/// are drawn from the loaded ones (zipf rank r -> r-th loaded key).
Workload gen_workload(const WorkloadSpec& spec);

/// `count` distinct uniformly distributed keys.
std::vector<Key> uniform_keys(std::uint64_t count, std::uint64_t seed);

/// Text trace: one op per line, `INSERT|READ|UPDATE [table] key`. Blank
/// lines and lines starting with '#' are skipped. Throws Errc::parse.
std::vector<Op> parse_trace(std::istream& in);
std::vector<Op> load_trace_file(const std::string& path);

/// Out-of-node value blocks. Each worker allocates through its own arena;
/// freed blocks go to that worker's free list.
class ValueStore {
 public:
  ValueStore(std::uint32_t value_size, std::size_t arenas);
  ~ValueStore();
  ValueStore(const ValueStore&) = delete;
  ValueStore& operator=(const ValueStore&) = delete;

  /// New block filled with a pattern derived from `key`; never a reserved
  /// ptr value.
  ValueRef allocate(std::size_t arena, Key key);
  void release(std::size_t arena, ValueRef ref);

  std::uint32_t value_size() const noexcept { return value_size_; }
  static const std::byte* data(ValueRef ref) { return reinterpret_cast<const std::byte*>(to_raw(ref)); }

 private:
  struct Arena {
    std::vector<std::unique_ptr<std::byte[]>> chunks;
    std::size_t used_in_chunk = 0;
    std::vector<std::byte*> free;
  };

  std::uint32_t value_size_;
  std::size_t stride_;
  std::vector<Arena> arenas_;
};

}  // namespace nvmtree
