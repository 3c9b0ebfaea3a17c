#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace nvmtree {

using Key = std::uint64_t;

inline constexpr Key kKeyMax = std::numeric_limits<Key>::max();

/// Reference to a value stored outside the node. Leaves store it in the
/// 8-byte ptr field of a slot.
enum class ValueRef : std::uint64_t {};

constexpr std::uint64_t to_raw(ValueRef v) { return static_cast<std::uint64_t>(v); }

// Reserved ptr encodings. A nil ptr terminates a node's valid range; the
// pending marker flags a slot that is being rewritten.
inline constexpr std::uint64_t kNilPtr = 0;
inline constexpr std::uint64_t kPendingPtr = 1;

constexpr bool is_reserved_ptr(std::uint64_t p) { return p == kNilPtr || p == kPendingPtr; }

enum class Errc {
  alignment,
  range,
  plan,
  empty_stats,
  domain,
  duplicate_key,
  not_found,
  corruption,
  out_of_space,
  parse,
  config,
  invalid_argument,
};

const char* to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace nvmtree
