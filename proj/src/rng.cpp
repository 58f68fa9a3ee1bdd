#include "softdsgd/rng.hpp"

namespace softdsgd {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

inline PhiloxCounter philox_round(const PhiloxCounter& c, const PhiloxKey& k) {
  std::uint32_t hi0, lo0, hi1, lo1;
  mulhilo(kMul0, c[0], hi0, lo0);
  mulhilo(kMul1, c[2], hi1, lo1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline PhiloxCounter make_counter(const StreamCoord& coord, std::uint32_t block) {
  return {block, (coord.source << 16) ^ (coord.destination & 0xFFFFu),
          static_cast<std::uint32_t>(coord.iteration),
          static_cast<std::uint32_t>(coord.iteration >> 32)};
}

}  // namespace

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    counter = philox_round(counter, key);
  }
  return counter;
}

CounterEngine::CounterEngine(PhiloxKey key, StreamCoord coord) : key_(key), coord_(coord) {}

CounterEngine::result_type CounterEngine::operator()() {
  if (used_ == 4) {
    buffer_ = philox4x32_10(make_counter(coord_, block_++), key_);
    used_ = 0;
  }
  return buffer_[used_++];
}

RngStream::RngStream(std::uint64_t seed, StreamDomain domain) : seed_(seed), domain_(domain) {
  const std::uint64_t k = mix64(seed ^ mix64(static_cast<std::uint64_t>(domain)));
  key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

double RngStream::uniform(StreamCoord coord, std::uint64_t index) const {
  const auto words = philox4x32_10(make_counter(coord, static_cast<std::uint32_t>(index >> 1)), key_);
  const std::size_t half = static_cast<std::size_t>(index & 1u) * 2;
  const std::uint64_t bits =
      (static_cast<std::uint64_t>(words[half]) << 32) | static_cast<std::uint64_t>(words[half + 1]);
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace softdsgd
