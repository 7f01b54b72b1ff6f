#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsim {

using Rng = std::mt19937_64;

/// Stream tags keep independent random consumers from sharing a sequence.
enum class Stream : std::uint64_t {
  dataset = 1,
  partition = 2,
  init = 3,
  client_sampling = 4,
  client_training = 5,
  peer_plan = 6,
  receiver_training = 7,
  distill_data = 8,
  noise = 9,
  split = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mixes a master seed with an ordered tuple of identifiers, e.g.
/// (seed, Stream::client_training, client, round). Order matters.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = splitmix64(master);
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> parts) {
  return Rng(derive_seed(master, parts));
}

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace fedsim
