#include "softdsgd/transport.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace softdsgd::transport {

void Granularity::validate() const {
  if (mode == Mode::kPacket && packet_size < 1) {
    throw InvalidConfiguration("packet size must be >= 1");
  }
}

MaskSet::MaskSet(Index n, Index d) : n_(n), d_(d) {
  if (n < 1 || d < 1) throw InvalidArgument("mask set needs n >= 1 and d >= 1");
  bits_.assign(static_cast<std::size_t>(n * n * d), 0);
}

std::size_t MaskSet::offset(Index src, Index dst) const {
  if (src < 0 || dst < 0 || src >= n_ || dst >= n_ || src == dst) {
    throw InvalidArgument("mask requested for invalid link " + std::to_string(src) + "->" +
                          std::to_string(dst));
  }
  return static_cast<std::size_t>((src * n_ + dst) * d_);
}

std::span<const std::uint8_t> MaskSet::mask(Index src, Index dst) const {
  return {bits_.data() + offset(src, dst), static_cast<std::size_t>(d_)};
}

std::span<std::uint8_t> MaskSet::mask(Index src, Index dst) {
  return {bits_.data() + offset(src, dst), static_cast<std::size_t>(d_)};
}

MaskSet sample_masks(const ReliabilityMatrix& p, Index d, std::uint64_t t, const RngStream& stream,
                     Granularity granularity) {
  granularity.validate();
  if (d < 1) throw InvalidArgument("mask dimension must be >= 1");
  const Index n = p.n();
  const std::size_t group =
      granularity.mode == Granularity::Mode::kPacket ? granularity.packet_size : 1;
  MaskSet masks(n, d);
  for (Index src = 0; src < n; ++src) {
    for (Index dst = 0; dst < n; ++dst) {
      if (src == dst) continue;
      const double prob = p(src, dst);
      const StreamCoord coord{t, static_cast<std::uint32_t>(src), static_cast<std::uint32_t>(dst)};
      auto out = masks.mask(src, dst);
      for (std::size_t k = 0; k < out.size(); k += group) {
        const std::uint8_t bit = stream.uniform(coord, k / group) < prob ? 1 : 0;
        std::fill(out.begin() + static_cast<std::ptrdiff_t>(k),
                  out.begin() + static_cast<std::ptrdiff_t>(std::min(out.size(), k + group)), bit);
      }
    }
  }
  return masks;
}

VectorXd fill_missing(const Eigen::Ref<const VectorXd>& received,
                      std::span<const std::uint8_t> mask,
                      const Eigen::Ref<const VectorXd>& local) {
  if (received.size() != local.size() || static_cast<std::size_t>(received.size()) != mask.size()) {
    throw InvalidArgument("fill_missing: length mismatch");
  }
  VectorXd out(received.size());
  for (Index k = 0; k < received.size(); ++k) {
    out(k) = mask[static_cast<std::size_t>(k)] ? received(k) : local(k);
  }
  return out;
}

std::uint64_t tcp_rounds(const AdjacencyGraph& g, const ReliabilityMatrix& p, std::uint64_t t,
                         const RngStream& stream) {
  if (g.n() != p.n()) throw InvalidArgument("tcp_rounds: graph and reliability sizes differ");
  std::uint64_t rounds = 1;
  for (const auto& [i, j] : g.edges()) {
    const double prob = p(i, j);
    if (!(prob > 0.0)) {
      throw NonTerminatingRetransmission("link " + std::to_string(i) + "-" + std::to_string(j) +
                                         " has zero delivery probability");
    }
    if (prob >= 1.0) continue;
    const double log_fail = std::log1p(-prob);
    for (const auto& [src, dst] : {std::pair{i, j}, std::pair{j, i}}) {
      const StreamCoord coord{t, static_cast<std::uint32_t>(src), static_cast<std::uint32_t>(dst)};
      // Inverse CDF of the number of attempts: P(A > a) = (1-p)^a.
      const double u = 1.0 - stream.uniform(coord, 0);  // (0, 1]
      const double attempts = 1.0 + std::floor(std::log(u) / log_fail);
      rounds = std::max(rounds, static_cast<std::uint64_t>(attempts));
    }
  }
  return rounds;
}

std::vector<LinkDelivery> mask_statistics(const MaskSet& masks) {
  std::vector<LinkDelivery> out;
  for (Index src = 0; src < masks.n(); ++src) {
    for (Index dst = 0; dst < masks.n(); ++dst) {
      if (src == dst) continue;
      const auto m = masks.mask(src, dst);
      const auto hits = std::count(m.begin(), m.end(), std::uint8_t{1});
      out.push_back({src, dst, static_cast<double>(hits) / static_cast<double>(m.size())});
    }
  }
  return out;
}

}  // namespace softdsgd::transport
