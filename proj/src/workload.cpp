#include "nvmtree/workload.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nvmtree {

Key parse_ycsb_key(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i]))) ++i;
  const std::string_view digits = text.substr(i);
  if (digits.empty()) throw Error(Errc::parse, "key '" + std::string(text) + "' has no digits");
  Key value = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec == std::errc::result_out_of_range) {
    throw Error(Errc::parse, "key '" + std::string(text) + "' does not fit in 64 bits");
  }
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) {
    throw Error(Errc::parse, "key '" + std::string(text) + "' is not a prefix followed by digits");
  }
  return value;
}

namespace {

double zeta(std::uint64_t n, double theta) {
  double sum = 0;
  for (std::uint64_t i = 1; i <= n; ++i) sum += 1.0 / std::pow(static_cast<double>(i), theta);
  return sum;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

}  // namespace

ZipfGen::ZipfGen(std::uint64_t n, double theta, std::uint64_t seed) : n_(n), theta_(theta), rng_(seed) {
  if (n == 0) throw Error(Errc::config, "zipf population must be positive");
  if (!(theta >= 0.0 && theta < 1.0)) throw Error(Errc::config, "zipf theta must be in [0, 1)");
  zetan_ = zeta(n, theta);
  const double zeta2 = zeta(std::min<std::uint64_t>(n, 2), theta);
  alpha_ = 1.0 / (1.0 - theta);
  eta_ = n > 2 ? (1.0 - std::pow(2.0 / static_cast<double>(n), 1.0 - theta)) / (1.0 - zeta2 / zetan_) : 0.0;
  half_pow_theta_ = std::pow(0.5, theta);
}

std::uint64_t ZipfGen::next() {
  const double u = unit_(rng_);
  const double uz = u * zetan_;
  if (n_ == 1 || uz < 1.0) return 1;
  if (n_ == 2 || uz < 1.0 + half_pow_theta_) return 2;
  const auto r = 1 + static_cast<std::uint64_t>(static_cast<double>(n_) * std::pow(eta_ * u - eta_ + 1.0, alpha_));
  return std::min(r, n_);
}

const char* to_string(OpType op) {
  switch (op) {
    case OpType::insert: return "insert";
    case OpType::read: return "read";
    case OpType::update: return "update";
  }
  return "?";
}

void WorkloadSpec::validate() const {
  if (record_count == 0) throw Error(Errc::config, "record_count must be at least 1");
  if (read_fraction < 0 || update_fraction < 0 || std::abs(read_fraction + update_fraction - 1.0) > 1e-9) {
    throw Error(Errc::config, "read and update fractions must be non-negative and sum to 1");
  }
  if (!(theta >= 0.0 && theta < 1.0)) throw Error(Errc::config, "zipf theta must be in [0, 1)");
  if (value_size == 0) throw Error(Errc::config, "value_size must be positive");
}

Key record_key(std::uint64_t index, std::uint64_t seed) { return mix64(index + mix64(seed ^ 0x9e3779b97f4a7c15ULL)); }

Workload gen_workload(const WorkloadSpec& spec) {
  spec.validate();
  Workload w;
  w.load.reserve(spec.record_count);
  for (std::uint64_t i = 0; i < spec.record_count; ++i) w.load.push_back({OpType::insert, record_key(i, spec.seed)});

  w.run.reserve(spec.op_count);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::uint64_t> pick(0, spec.record_count - 1);
  ZipfGen zipf(spec.record_count, spec.distribution == Distribution::zipf ? spec.theta : 0.0,
               spec.seed ^ 0x2545f4914f6cdd1dULL);
  for (std::uint64_t i = 0; i < spec.op_count; ++i) {
    const OpType type = unit(rng) < spec.read_fraction ? OpType::read : OpType::update;
    const std::uint64_t index = spec.distribution == Distribution::zipf ? zipf.next() - 1 : pick(rng);
    w.run.push_back({type, record_key(index, spec.seed)});
  }
  return w;
}

std::vector<Key> uniform_keys(std::uint64_t count, std::uint64_t seed) {
  std::vector<Key> keys;
  keys.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) keys.push_back(record_key(i, seed));
  return keys;
}

std::vector<Op> parse_trace(std::istream& in) {
  std::vector<Op> ops;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream words(line);
    std::string op_word;
    if (!(words >> op_word) || op_word[0] == '#') continue;
    std::transform(op_word.begin(), op_word.end(), op_word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    Op op;
    if (op_word == "INSERT") {
      op.type = OpType::insert;
    } else if (op_word == "READ") {
      op.type = OpType::read;
    } else if (op_word == "UPDATE") {
      op.type = OpType::update;
    } else {
      throw Error(Errc::parse, "line " + std::to_string(lineno) + ": unknown operation '" + op_word + "'");
    }
    std::vector<std::string> rest;
    for (std::string w; words >> w && w[0] != '[';) rest.push_back(w);
    if (rest.empty() || rest.size() > 2) {
      throw Error(Errc::parse, "line " + std::to_string(lineno) + ": expected `OP [table] key`");
    }
    try {
      op.key = parse_ycsb_key(rest.back());
    } catch (const Error& e) {
      throw Error(Errc::parse, "line " + std::to_string(lineno) + ": " + e.what());
    }
    ops.push_back(op);
  }
  return ops;
}

std::vector<Op> load_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::config, "cannot open trace file '" + path + "'");
  return parse_trace(in);
}

namespace {
constexpr std::size_t kChunkBlocks = 4096;
}

ValueStore::ValueStore(std::uint32_t value_size, std::size_t arenas)
    : value_size_(value_size), stride_((std::max<std::size_t>(value_size, 16) + 15) / 16 * 16), arenas_(arenas) {
  if (arenas == 0) throw Error(Errc::config, "value store needs at least one arena");
}

ValueStore::~ValueStore() = default;

ValueRef ValueStore::allocate(std::size_t arena, Key key) {
  Arena& a = arenas_.at(arena);
  std::byte* block = nullptr;
  if (!a.free.empty()) {
    block = a.free.back();
    a.free.pop_back();
  } else {
    if (a.chunks.empty() || a.used_in_chunk == kChunkBlocks) {
      a.chunks.push_back(std::make_unique<std::byte[]>(stride_ * kChunkBlocks));
      a.used_in_chunk = 0;
    }
    block = a.chunks.back().get() + stride_ * a.used_in_chunk++;
  }
  // Key in the first word, a key-derived byte pattern in the rest.
  std::memset(block, static_cast<int>(key & 0xff), value_size_);
  std::memcpy(block, &key, std::min<std::size_t>(sizeof key, value_size_));
  return ValueRef{reinterpret_cast<std::uint64_t>(block)};
}

void ValueStore::release(std::size_t arena, ValueRef ref) {
  arenas_.at(arena).free.push_back(reinterpret_cast<std::byte*>(to_raw(ref)));
}

}  // namespace nvmtree
