#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "softdsgd/error.hpp"
#include "softdsgd/objective.hpp"

using namespace softdsgd;
using namespace softdsgd::objective;

namespace {

Quadratic iso(double scale, const VectorXd& c, double noise = 0.0) {
  Quadratic q;
  q.a = scale * MatrixXd::Identity(c.size(), c.size());
  q.b = q.a * c;
  q.offset = 0.5 * c.dot(q.b);
  q.noise_std = noise;
  return q;
}

const RngStream kNoise(1, StreamDomain::kGradientNoise);
const RngStream kBatch(1, StreamDomain::kMinibatch);

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("quadratic gradients") {
  const Quadratic q = iso(2.0, VectorXd::Zero(2));
  const VectorXd g = local_gradient(q, Eigen::Vector2d(1, 1), 0, 0, kNoise, kBatch);
  CHECK(g(0) == 2.0);
  CHECK(g(1) == 2.0);

  const auto set = make_quadratic_objectives(3, QuadraticFamily{}, 9);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& qi = std::get<Quadratic>(set[i]);
    const VectorXd xstar = qi.a.ldlt().solve(qi.b);
    CHECK(local_gradient(set[i], xstar, 0, static_cast<Index>(i), kNoise, kBatch).norm() < 1e-12);
    CHECK(loss(set[i], xstar) == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("noisy gradient is unbiased") {
  const Quadratic q = iso(1.5, Eigen::Vector3d(1, -2, 0.5), 0.7);
  const Eigen::Vector3d x(0.2, 0.1, -0.3);
  const VectorXd exact = full_gradient(q, x);
  const int trials = 100000;
  VectorXd sum = VectorXd::Zero(3), sq = VectorXd::Zero(3);
  for (int t = 0; t < trials; ++t) {
    const VectorXd g = local_gradient(q, x, static_cast<std::uint64_t>(t), 2, kNoise, kBatch);
    sum += g;
    sq += g.cwiseProduct(g);
  }
  const VectorXd mean = sum / trials;
  const VectorXd var = sq / trials - mean.cwiseProduct(mean);
  for (Index k = 0; k < 3; ++k) {
    CHECK(std::abs(mean(k) - exact(k)) <= 3.0 * std::sqrt(var(k) / trials));
    CHECK(var(k) == doctest::Approx(0.49).epsilon(0.02));
  }
}

TEST_CASE("global optimum of quadratics") {
  const auto set = make_quadratic_objectives(8, QuadraticFamily{}, 2);
  const auto opt = quadratic_optimum(set);
  REQUIRE(opt.has_value());
  CHECK(global_gradient(set, opt->x).norm() < 1e-10);
  CHECK(global_loss(set, opt->x) == doctest::Approx(opt->loss));
  for (int k = 0; k < 5; ++k) {
    const VectorXd y = opt->x + 0.1 * VectorXd::Random(opt->x.size());
    CHECK(global_loss(set, y) > opt->loss);
  }
}

TEST_CASE("quadratic family spectrum") {
  QuadraticFamily fam;
  fam.dim = 5;
  fam.curvature_min = 0.5;
  fam.curvature_max = 3.0;
  const auto set = make_quadratic_objectives(6, fam, 4);
  for (const auto& obj : set) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(std::get<Quadratic>(obj).a);
    CHECK(es.eigenvalues().minCoeff() >= 0.5 - 1e-12);
    CHECK(es.eigenvalues().maxCoeff() <= 3.0 + 1e-12);
  }
  const auto again = make_quadratic_objectives(6, fam, 4);
  CHECK(std::get<Quadratic>(again[3]).a == std::get<Quadratic>(set[3]).a);
}

TEST_CASE("logistic gradient against finite differences") {
  LogisticFamily fam;
  fam.batch_size = 0;
  const auto set = make_logistic_objectives(4, fam, 5);
  const VectorXd x = 0.3 * VectorXd::Ones(fam.dim);
  for (const auto& obj : set) {
    const VectorXd g = full_gradient(obj, x);
    for (Index k = 0; k < fam.dim; ++k) {
      VectorXd up = x, down = x;
      up(k) += 1e-6;
      down(k) -= 1e-6;
      const double fd = (loss(obj, up) - loss(obj, down)) / 2e-6;
      CHECK(std::abs(fd - g(k)) < 1e-7);
    }
    CHECK(epochs_per_iteration(obj) == 1.0);
  }
  CHECK_FALSE(quadratic_optimum(set).has_value());
}

TEST_CASE("minibatch gradients average to the full gradient") {
  LogisticFamily fam;
  fam.batch_size = 4;
  fam.samples_per_device = 32;
  const auto set = make_logistic_objectives(2, fam, 6);
  CHECK(epochs_per_iteration(set[0]) == doctest::Approx(4.0 / 32.0));
  const VectorXd x = VectorXd::Zero(fam.dim);
  const VectorXd full = full_gradient(set[0], x);
  const int trials = 20000;
  VectorXd sum = VectorXd::Zero(fam.dim), sq = VectorXd::Zero(fam.dim);
  for (int t = 0; t < trials; ++t) {
    const VectorXd g = local_gradient(set[0], x, static_cast<std::uint64_t>(t), 0, kNoise, kBatch);
    sum += g;
    sq += g.cwiseProduct(g);
  }
  const VectorXd mean = sum / trials;
  const VectorXd var = sq / trials - mean.cwiseProduct(mean);
  for (Index k = 0; k < fam.dim; ++k) CHECK(std::abs(mean(k) - full(k)) <= 4.0 * std::sqrt(var(k) / trials) + 1e-12);
}

TEST_CASE("label skew") {
  LogisticFamily fam;
  fam.label_skew = 1.0;
  const auto set = make_logistic_objectives(4, fam, 7);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& l = std::get<Logistic>(set[i]);
    CHECK(std::abs(l.labels.sum()) == doctest::Approx(static_cast<double>(l.labels.size())));
  }
  fam.label_skew = 0.0;
  const auto bal = make_logistic_objectives(4, fam, 7);
  for (const auto& obj : bal) CHECK(std::get<Logistic>(obj).labels.sum() == 0.0);
}

TEST_CASE("validation") {
  Quadratic q = iso(1.0, VectorXd::Zero(2));
  q.a(0, 0) = -1.0;
  CHECK_THROWS_AS(validate(q), InvalidConfiguration);
  Logistic l;
  l.features = MatrixXd::Ones(2, 2);
  l.labels = Eigen::Vector2d(1, 0);
  CHECK_THROWS_AS(validate(l), InvalidConfiguration);
}

}
