#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "softdsgd/types.hpp"

namespace softdsgd::topology {

// n devices placed uniformly i.i.d. in the unit square.
DeviceLayout generate_layout(Index n, std::uint64_t seed);

// p_ij = k^((d_ij / r)^2) off the diagonal, 0 on it. Requires 0 < k < 1, r > 0.
ReliabilityMatrix reliability_from_layout(const DeviceLayout& layout, double k, double r);

// Keeps link {i,j} iff p_ij > p_delta (strict).
AdjacencyGraph threshold_graph(const ReliabilityMatrix& p, double p_delta);

bool is_connected(const AdjacencyGraph& g);

struct CdfPoint {
  double probability;
  double cumulative_fraction;
};

// Empirical CDF over the upper-triangle links. Tied values collapse into one
// step carrying the cumulative fraction after the tie.
std::vector<CdfPoint> reliability_cdf(const ReliabilityMatrix& p);

}  // namespace softdsgd::topology
