// SPDX-License-Identifier: Apache-2.0
#include "taskmix/rng.hpp"

namespace taskmix {

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                          std::uint64_t id) noexcept {
  // FNV-1a over the purpose tag
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(mix64(root) ^ mix64(h) ^ mix64(id + 0x632be59bd9b4e019ULL));
}

} // namespace taskmix
