#include "nvmtree/accel.hpp"

#include <stdexcept>

namespace nvmtree {

SentinelArray::SentinelArray(std::uint32_t groups) : groups_(groups) {
  if (groups == 0) throw Error(Errc::invalid_argument, "sentinel array needs at least one group");
  std::fill(std::begin(inline_), std::end(inline_), kKeyMax);
  if (groups - 1 > kInlineProbes) spill_.assign(groups - 1, kKeyMax);
}

Key SentinelArray::sentinel(std::uint32_t g) const {
  if (g >= groups_) throw std::out_of_range("sentinel group out of range");
  return g == 0 ? first_ : probe_data()[g - 1];
}

FingerprintArray::FingerprintArray(std::uint32_t capacity) : capacity_(capacity) {
  std::fill(std::begin(inline_), std::end(inline_), std::uint8_t{0});
  if (capacity > kInlineBytes) spill_.assign(capacity, 0);
}

std::uint8_t FingerprintArray::at(std::uint32_t i) const {
  if (i >= capacity_) throw std::out_of_range("fingerprint position out of range");
  return data()[i];
}

std::uint8_t fingerprint_byte(Key key) noexcept {
  key ^= key >> 33;
  key *= 0xff51afd7ed558ccdULL;
  key ^= key >> 33;
  key *= 0xc4ceb9fe1a85ec53ULL;
  key ^= key >> 33;
  return static_cast<std::uint8_t>(key & 0xff);
}

}  // namespace nvmtree
