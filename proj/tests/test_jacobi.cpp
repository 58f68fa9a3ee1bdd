#include <doctest.h>

#include <random>

#include <Eigen/Eigenvalues>

#include "softdsgd/error.hpp"
#include "softdsgd/jacobi.hpp"

using namespace softdsgd;

TEST_SUITE("jacobi") {

TEST_CASE("hand cases") {
  CHECK(symmetric_eigen_max(MatrixXd::Identity(3, 3)).value == doctest::Approx(1.0));

  MatrixXd m(2, 2);
  m << 0.25, -0.25, -0.25, 0.25;
  const auto top = symmetric_eigen_max(m);
  CHECK(top.value == doctest::Approx(0.5));
  CHECK(std::abs(top.vector(0) + top.vector(1)) < 1e-12);
  CHECK(top.vector.norm() == doctest::Approx(1.0));

  const MatrixXd d = Eigen::Vector3d(3, 1, 2).asDiagonal();
  const auto dd = symmetric_eigen_max(d);
  CHECK(dd.value == 3.0);
  CHECK(std::abs(dd.vector(0)) == doctest::Approx(1.0));
}

TEST_CASE("matches Eigen's self-adjoint solver") {
  std::mt19937_64 eng(11);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 2 + trial % 15;
    MatrixXd a(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) a(i, j) = normal(eng);
    a = (a + a.transpose()).eval();
    SymmetricJacobi<double> jac(a);
    Eigen::SelfAdjointEigenSolver<MatrixXd> ref(a);
    const VectorXd expected = ref.eigenvalues().reverse();
    CHECK((jac.eigenvalues() - expected).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, a.norm()));
    // A V = V Λ and V orthonormal
    const MatrixXd& v = jac.eigenvectors();
    CHECK((a * v - v * jac.eigenvalues().asDiagonal()).norm() < 1e-9 * a.norm());
    CHECK((v.transpose() * v - MatrixXd::Identity(n, n)).norm() < 1e-10);
  }
}

TEST_CASE("repeated eigenvalues") {
  const Index n = 6;
  const MatrixXd j = MatrixXd::Constant(n, n, 1.0 / n);
  SymmetricJacobi<double> jac(MatrixXd(MatrixXd::Identity(n, n) - j));
  CHECK(jac.eigenvalues()(0) == doctest::Approx(1.0));
  CHECK(jac.eigenvalues()(n - 2) == doctest::Approx(1.0));
  CHECK(std::abs(jac.eigenvalues()(n - 1)) < 1e-12);
}

TEST_CASE("input checks") {
  CHECK_THROWS_AS(symmetric_eigen_max(MatrixXd(2, 3)), InvalidArgument);
  MatrixXd asym = MatrixXd::Zero(2, 2);
  asym(0, 1) = 1.0;
  CHECK_THROWS_AS(symmetric_eigen_max(asym), InvalidArgument);
}

TEST_CASE("long double instantiation") {
  Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic> m(2, 2);
  m << 2, 1, 1, 2;
  const auto top = symmetric_eigen_max(m);
  CHECK(static_cast<double>(top.value) == doctest::Approx(3.0));
}

}
