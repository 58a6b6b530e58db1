#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace ncsr {

/// 64-bit FNV-1a, used for content addressing and provenance tags.
class Fnv1a {
 public:
  Fnv1a& update(std::span<const std::byte> bytes);
  Fnv1a& update(std::string_view text);
  template <class T>
  Fnv1a& update_values(std::span<const T> values) {
    return update(std::as_bytes(values));
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_hex(std::string_view text);

}  // namespace ncsr
