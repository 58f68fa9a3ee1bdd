#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "softdsgd/error.hpp"
#include "softdsgd/types.hpp"

namespace softdsgd {

// Cyclic Jacobi eigensolver for small dense symmetric matrices. Sweeps the
// upper triangle row by row until the off-diagonal Frobenius norm falls below
// tol * max(1, ||A||_F). Deterministic: the same input always produces the
// same eigenvectors, including inside repeated eigenspaces.
//
// Eigenvalues are sorted in decreasing order; column k of eigenvectors()
// pairs with eigenvalues()(k).
template <typename Scalar>
class SymmetricJacobi {
 public:
  static constexpr int kMaxSweeps = 100;

  SymmetricJacobi() = default;

  template <typename Derived>
  explicit SymmetricJacobi(const Eigen::MatrixBase<Derived>& a, Scalar tol = Scalar(1e-12)) {
    compute(a, tol);
  }

  template <typename Derived>
  SymmetricJacobi& compute(const Eigen::MatrixBase<Derived>& a, Scalar tol = Scalar(1e-12)) {
    using std::abs;
    using std::sqrt;
    if (a.rows() != a.cols()) throw InvalidArgument("Jacobi solver needs a square matrix");
    const Index n = a.rows();
    Mat<Scalar> m = (a + a.transpose()) / Scalar(2);
    Mat<Scalar> v = Mat<Scalar>::Identity(n, n);
    const Scalar scale = std::max(Scalar(1), m.norm());
    sweeps_ = 0;

    auto off_norm = [&]() {
      Scalar s(0);
      for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) s += Scalar(2) * m(i, j) * m(i, j);
      return sqrt(s);
    };

    while (off_norm() > tol * scale) {
      if (sweeps_ == kMaxSweeps) {
        throw NumericalFailure("Jacobi eigensolver did not converge in " +
                               std::to_string(kMaxSweeps) + " sweeps");
      }
      ++sweeps_;
      for (Index p = 0; p < n; ++p) {
        for (Index q = p + 1; q < n; ++q) {
          const Scalar apq = m(p, q);
          if (apq == Scalar(0)) continue;
          // Rotation angle chosen so the (p,q) entry vanishes; |t| <= 1.
          const Scalar theta = (m(q, q) - m(p, p)) / (Scalar(2) * apq);
          const Scalar t = (theta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                           (abs(theta) + sqrt(theta * theta + Scalar(1)));
          const Scalar c = Scalar(1) / sqrt(t * t + Scalar(1));
          const Scalar s = t * c;
          for (Index k = 0; k < n; ++k) {
            const Scalar mkp = m(k, p);
            const Scalar mkq = m(k, q);
            m(k, p) = c * mkp - s * mkq;
            m(k, q) = s * mkp + c * mkq;
          }
          for (Index k = 0; k < n; ++k) {
            const Scalar mpk = m(p, k);
            const Scalar mqk = m(q, k);
            m(p, k) = c * mpk - s * mqk;
            m(q, k) = s * mpk + c * mqk;
          }
          m(p, q) = m(q, p) = Scalar(0);
          for (Index k = 0; k < n; ++k) {
            const Scalar vkp = v(k, p);
            const Scalar vkq = v(k, q);
            v(k, p) = c * vkp - s * vkq;
            v(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index(0));
    std::stable_sort(order.begin(), order.end(),
                     [&](Index x, Index y) { return m(x, x) > m(y, y); });
    values_.resize(n);
    vectors_.resize(n, n);
    for (Index k = 0; k < n; ++k) {
      const Index src = order[static_cast<std::size_t>(k)];
      values_(k) = m(src, src);
      vectors_.col(k) = v.col(src);
    }
    return *this;
  }

  const Vec<Scalar>& eigenvalues() const { return values_; }
  const Mat<Scalar>& eigenvectors() const { return vectors_; }
  int sweeps() const { return sweeps_; }

 private:
  Vec<Scalar> values_;
  Mat<Scalar> vectors_;
  int sweeps_ = 0;
};

template <typename Scalar>
struct EigenPair {
  Scalar value;
  Vec<Scalar> vector;
};

// Largest eigenvalue and a unit eigenvector of a symmetric matrix.
template <typename Derived>
EigenPair<typename Derived::Scalar> symmetric_eigen_max(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw InvalidArgument("symmetric_eigen_max needs a non-empty square matrix");
  }
  if (detail::asymmetry(m) > Scalar(1e-10)) {
    throw InvalidArgument("symmetric_eigen_max: input is not symmetric within 1e-10");
  }
  SymmetricJacobi<Scalar> solver(m.eval());
  return {solver.eigenvalues()(0), solver.eigenvectors().col(0)};
}

}  // namespace softdsgd
