#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "softdsgd/rng.hpp"
#include "softdsgd/types.hpp"

// Simulated UDP-style broadcast with per-parameter loss, and the
// retransmission count of a reliable (TCP-style) exchange.
namespace softdsgd::transport {

struct Granularity {
  enum class Mode { kPerDimension, kPacket };
  Mode mode = Mode::kPerDimension;
  std::size_t packet_size = 1;

  static Granularity per_dimension() { return {}; }
  static Granularity packets(std::size_t size) { return {Mode::kPacket, size}; }
  void validate() const;
};

// Delivery masks for every ordered pair src -> dst, src != dst.
class MaskSet {
 public:
  MaskSet(Index n, Index d);

  Index n() const { return n_; }
  Index d() const { return d_; }
  std::span<const std::uint8_t> mask(Index src, Index dst) const;
  std::span<std::uint8_t> mask(Index src, Index dst);

  bool operator==(const MaskSet&) const = default;

 private:
  std::size_t offset(Index src, Index dst) const;

  Index n_;
  Index d_;
  std::vector<std::uint8_t> bits_;
};

// Each directed mask entry is Bernoulli(p[src,dst]). In packet mode the d
// dimensions form ceil(d/S) contiguous packets sharing one draw each; draw k
// of a link is the same random number in both modes, so S = 1 reproduces the
// per-dimension masks exactly.
MaskSet sample_masks(const ReliabilityMatrix& p, Index d, std::uint64_t t, const RngStream& stream,
                     Granularity granularity = {});

// Received entries where mask is 1, local entries where it is 0.
VectorXd fill_missing(const Eigen::Ref<const VectorXd>& received,
                      std::span<const std::uint8_t> mask,
                      const Eigen::Ref<const VectorXd>& local);

// Synchronous rounds needed for every neighbour pair to deliver in both
// directions: each delivery retries until success (geometric in p_ij) and the
// round ends when the slowest delivery is acknowledged. Acks are never lost.
std::uint64_t tcp_rounds(const AdjacencyGraph& g, const ReliabilityMatrix& p, std::uint64_t t,
                         const RngStream& stream);

struct LinkDelivery {
  Index src;
  Index dst;
  double delivered_fraction;
};

std::vector<LinkDelivery> mask_statistics(const MaskSet& masks);

}  // namespace softdsgd::transport
