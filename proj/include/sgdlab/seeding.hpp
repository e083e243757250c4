#pragma once

#include <cstdint>
#include <string_view>

namespace sgdlab {

// splitmix64 mixing step.  Used to derive independent per-replication and
// per-scale seeds from a single base seed; the derivation is a pure function
// of its inputs so results never depend on scheduling or worker count.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// derive_seed(base, tag, a, b) = sm(sm(sm(base ^ fnv(tag)) ^ a) ^ b).
// tag names the stream (e.g. "replication", "escape"); a and b are stream
// indices such as scale and replication number.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t s = splitmix64(base ^ fnv1a64(tag));
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ b);
  return s;
}

}  // namespace sgdlab
