#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace softdsgd {

// Philox4x32-10 block function (Salmon et al., SC'11). Stateless: the same
// (counter, key) always yields the same four words.
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

// Separate key spaces for each consumer of randomness, so that e.g. adding
// gradient noise never shifts the packet-loss draws of a run.
enum class StreamDomain : std::uint32_t {
  kLayout = 1,
  kMask = 2,
  kRetransmission = 3,
  kGradientNoise = 4,
  kMinibatch = 5,
  kObjective = 6,
  kInitialParams = 7,
  kSampling = 8,
};

// Coordinates addressing one draw sequence of a stream.
struct StreamCoord {
  std::uint64_t iteration = 0;
  std::uint32_t source = 0;
  std::uint32_t destination = 0;
};

// URBG over one coordinate. Usable with <random> distributions; two engines
// built from the same stream and coordinate produce identical sequences.
class CounterEngine {
 public:
  using result_type = std::uint32_t;

  CounterEngine(PhiloxKey key, StreamCoord coord);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

 private:
  PhiloxKey key_;
  StreamCoord coord_;
  std::uint32_t block_ = 0;
  PhiloxCounter buffer_{};
  int used_ = 4;
};

// Counter-based random stream keyed by (seed, domain). Draws are addressed by
// (iteration, source, destination, index); there is no mutable state, so
// evaluation order and threading cannot change any value.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, StreamDomain domain = StreamDomain::kSampling);

  std::uint64_t seed() const { return seed_; }
  StreamDomain domain() const { return domain_; }
  RngStream with_domain(StreamDomain domain) const { return RngStream(seed_, domain); }

  // Uniform double in [0,1) with 53 random bits.
  double uniform(StreamCoord coord, std::uint64_t index) const;

  CounterEngine engine(StreamCoord coord) const { return CounterEngine(key_, coord); }

 private:
  std::uint64_t seed_;
  StreamDomain domain_;
  PhiloxKey key_;
};

}  // namespace softdsgd
