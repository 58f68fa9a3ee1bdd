#include "softdsgd/topology.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>
#include <string>

#include "softdsgd/rng.hpp"

namespace softdsgd {

AdjacencyGraph::AdjacencyGraph(Index n) {
  if (n < 0) throw InvalidArgument("graph size must be nonnegative");
  neighbors_.resize(static_cast<std::size_t>(n));
}

AdjacencyGraph::AdjacencyGraph(Index n, const std::vector<Edge>& edges) : AdjacencyGraph(n) {
  for (const auto& [i, j] : edges) add_edge(i, j);
}

void AdjacencyGraph::add_edge(Index i, Index j) {
  if (i < 0 || j < 0 || i >= n() || j >= n()) {
    throw InvalidArgument("edge endpoint out of range");
  }
  if (i == j) throw InvalidArgument("self-loops are not allowed");
  if (has_edge(i, j)) return;
  auto insert_sorted = [](std::vector<Index>& v, Index x) {
    v.insert(std::upper_bound(v.begin(), v.end(), x), x);
  };
  insert_sorted(neighbors_[static_cast<std::size_t>(i)], j);
  insert_sorted(neighbors_[static_cast<std::size_t>(j)], i);
}

bool AdjacencyGraph::has_edge(Index i, Index j) const {
  const auto& v = neighbors_.at(static_cast<std::size_t>(i));
  return std::binary_search(v.begin(), v.end(), j);
}

std::vector<AdjacencyGraph::Edge> AdjacencyGraph::edges() const {
  std::vector<Edge> out;
  for (Index i = 0; i < n(); ++i) {
    for (Index j : neighbors(i)) {
      if (i < j) out.emplace_back(i, j);
    }
  }
  return out;
}

std::size_t AdjacencyGraph::edge_count() const {
  std::size_t total = 0;
  for (const auto& v : neighbors_) total += v.size();
  return total / 2;
}

namespace topology {

DeviceLayout generate_layout(Index n, std::uint64_t seed) {
  if (n < 2) {
    throw InvalidConfiguration("layout needs n >= 2 devices, got " + std::to_string(n));
  }
  auto engine = RngStream(seed, StreamDomain::kLayout).engine({});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  DeviceLayout::Positions positions(n, 2);
  for (Index i = 0; i < n; ++i) {
    positions(i, 0) = unit(engine);
    positions(i, 1) = unit(engine);
  }
  return DeviceLayout(std::move(positions));
}

ReliabilityMatrix reliability_from_layout(const DeviceLayout& layout, double k, double r) {
  if (!(k > 0.0 && k < 1.0)) {
    throw InvalidConfiguration("reliability base k must lie in (0,1), got " + std::to_string(k));
  }
  if (!(r > 0.0) || !std::isfinite(r)) {
    throw InvalidConfiguration("reliability length r must be positive, got " + std::to_string(r));
  }
  const Index n = layout.n();
  MatrixXd p = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double d = (layout.position(i) - layout.position(j)).norm();
      const double ratio = d / r;
      p(i, j) = p(j, i) = std::pow(k, ratio * ratio);
    }
  }
  return ReliabilityMatrix(std::move(p));
}

AdjacencyGraph threshold_graph(const ReliabilityMatrix& p, double p_delta) {
  if (!(p_delta >= 0.0 && p_delta <= 1.0)) {
    throw InvalidConfiguration("threshold p_delta must lie in [0,1], got " + std::to_string(p_delta));
  }
  AdjacencyGraph g(p.n());
  for (Index i = 0; i < p.n(); ++i) {
    for (Index j = i + 1; j < p.n(); ++j) {
      if (p(i, j) > p_delta) g.add_edge(i, j);
    }
  }
  return g;
}

bool is_connected(const AdjacencyGraph& g) {
  if (g.n() == 0) return true;
  std::vector<char> seen(static_cast<std::size_t>(g.n()), 0);
  std::queue<Index> frontier;
  frontier.push(0);
  seen[0] = 1;
  Index reached = 1;
  while (!frontier.empty()) {
    const Index u = frontier.front();
    frontier.pop();
    for (Index v : g.neighbors(u)) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        ++reached;
        frontier.push(v);
      }
    }
  }
  return reached == g.n();
}

std::vector<CdfPoint> reliability_cdf(const ReliabilityMatrix& p) {
  std::vector<double> values;
  const Index n = p.n();
  values.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) values.push_back(p(i, j));
  }
  std::sort(values.begin(), values.end());
  std::vector<CdfPoint> cdf;
  const double total = static_cast<double>(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k + 1 < values.size() && values[k + 1] == values[k]) continue;
    cdf.push_back({values[k], static_cast<double>(k + 1) / total});
  }
  return cdf;
}

}  // namespace topology
}  // namespace softdsgd
