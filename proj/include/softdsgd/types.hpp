#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "softdsgd/error.hpp"

namespace softdsgd {

using Index = Eigen::Index;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Mat<double>;
using VectorXd = Vec<double>;

namespace detail {

template <typename Derived>
bool is_square(const Eigen::MatrixBase<Derived>& m) {
  return m.rows() == m.cols();
}

template <typename Derived>
typename Derived::Scalar asymmetry(const Eigen::MatrixBase<Derived>& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

inline std::string shape_str(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

// N device positions in the unit square, one row per device.
template <typename Scalar>
class BasicDeviceLayout {
 public:
  using Positions = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;

  explicit BasicDeviceLayout(Positions positions) : positions_(std::move(positions)) {
    if (positions_.rows() < 2) {
      throw InvalidConfiguration("device layout needs at least 2 devices, got " +
                                 std::to_string(positions_.rows()));
    }
    if (!positions_.allFinite() || positions_.minCoeff() < Scalar(0) ||
        positions_.maxCoeff() > Scalar(1)) {
      throw InvalidConfiguration("device coordinates must lie in [0,1]^2");
    }
  }

  Index n() const { return positions_.rows(); }
  const Positions& positions() const { return positions_; }
  Eigen::Matrix<Scalar, 1, 2> position(Index i) const { return positions_.row(i); }

  bool operator==(const BasicDeviceLayout&) const = default;

 private:
  Positions positions_;
};

// Symmetric matrix of per-link delivery probabilities with zero diagonal.
template <typename Scalar>
class BasicReliabilityMatrix {
 public:
  static constexpr double kSymmetryTol = 1e-12;

  explicit BasicReliabilityMatrix(Mat<Scalar> p) : p_(std::move(p)) {
    if (!detail::is_square(p_) || p_.rows() < 2) {
      throw InvalidArgument("reliability matrix must be square with n >= 2, got " +
                            detail::shape_str(p_.rows(), p_.cols()));
    }
    if (!p_.allFinite() || p_.minCoeff() < Scalar(0) || p_.maxCoeff() > Scalar(1)) {
      throw InvalidArgument("reliability entries must lie in [0,1]");
    }
    if (detail::asymmetry(p_) > Scalar(kSymmetryTol)) {
      throw InvalidArgument("reliability matrix must be symmetric");
    }
    if (p_.diagonal().cwiseAbs().maxCoeff() != Scalar(0)) {
      throw InvalidArgument("reliability matrix must have a zero diagonal");
    }
    // Store the exactly symmetric part so downstream moments are symmetric.
    p_ = (p_ + p_.transpose()) / Scalar(2);
  }

  // Every off-diagonal entry equals `value`.
  static BasicReliabilityMatrix constant(Index n, Scalar value) {
    Mat<Scalar> p = Mat<Scalar>::Constant(n, n, value);
    p.diagonal().setZero();
    return BasicReliabilityMatrix(std::move(p));
  }

  Index n() const { return p_.rows(); }
  const Mat<Scalar>& matrix() const { return p_; }
  Scalar operator()(Index i, Index j) const { return p_(i, j); }

 private:
  Mat<Scalar> p_;
};

// Symmetric, doubly stochastic weights with entries in [0,1].
template <typename Scalar>
class BasicMixingMatrix {
 public:
  static constexpr double kTol = 1e-9;

  explicit BasicMixingMatrix(Mat<Scalar> w) : w_(std::move(w)) {
    if (!detail::is_square(w_) || w_.rows() < 2) {
      throw InvalidArgument("mixing matrix must be square with n >= 2, got " +
                            detail::shape_str(w_.rows(), w_.cols()));
    }
    if (!w_.allFinite()) throw InvalidArgument("mixing matrix has non-finite entries");
    const Scalar tol(kTol);
    if (detail::asymmetry(w_) > tol) throw InvalidArgument("mixing matrix must be symmetric");
    if ((w_.rowwise().sum().array() - Scalar(1)).abs().maxCoeff() > tol) {
      throw InvalidArgument("mixing matrix rows must sum to 1");
    }
    if (w_.minCoeff() < -tol || w_.maxCoeff() > Scalar(1) + tol) {
      throw InvalidArgument("mixing weights must lie in [0,1]");
    }
  }

  Index n() const { return w_.rows(); }
  const Mat<Scalar>& matrix() const { return w_; }
  Scalar operator()(Index i, Index j) const { return w_(i, j); }

 private:
  Mat<Scalar> w_;
};

using DeviceLayout = BasicDeviceLayout<double>;
using ReliabilityMatrix = BasicReliabilityMatrix<double>;
using MixingMatrix = BasicMixingMatrix<double>;

// Undirected simple graph over devices 0..n-1.
class AdjacencyGraph {
 public:
  using Edge = std::pair<Index, Index>;

  explicit AdjacencyGraph(Index n);
  AdjacencyGraph(Index n, const std::vector<Edge>& edges);

  void add_edge(Index i, Index j);
  bool has_edge(Index i, Index j) const;

  Index n() const { return static_cast<Index>(neighbors_.size()); }
  Index degree(Index i) const { return static_cast<Index>(neighbors_.at(i).size()); }
  const std::vector<Index>& neighbors(Index i) const { return neighbors_.at(i); }
  // Edges with i < j, sorted lexicographically.
  std::vector<Edge> edges() const;
  std::size_t edge_count() const;

 private:
  std::vector<std::vector<Index>> neighbors_;
};

}  // namespace softdsgd
