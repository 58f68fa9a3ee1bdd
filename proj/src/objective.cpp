#include "softdsgd/objective.hpp"

#include <cmath>
#include <random>
#include <string>

namespace softdsgd::objective {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Gradient of the mean logistic loss restricted to `rows` (with repeats).
template <typename RowRange>
VectorXd logistic_gradient(const Logistic& obj, const Eigen::Ref<const VectorXd>& x,
                           const RowRange& rows, double count) {
  VectorXd g = obj.reg * x;
  for (Index r : rows) {
    const double margin = obj.labels(r) * obj.features.row(r).dot(x);
    g -= (obj.labels(r) * sigmoid(-margin) / count) * obj.features.row(r).transpose();
  }
  return g;
}

void require_finite(const VectorXd& g, std::uint64_t t, Index device) {
  if (!g.allFinite()) {
    throw NumericalFailure("non-finite gradient on device " + std::to_string(device) +
                           " at iteration " + std::to_string(t));
  }
}

}  // namespace

void validate(const LocalObjective& obj) {
  std::visit(Overloaded{
                 [](const Quadratic& q) {
                   if (q.a.rows() != q.a.cols() || q.a.rows() != q.b.size() || q.b.size() == 0) {
                     throw InvalidConfiguration("quadratic objective: inconsistent shapes");
                   }
                   if (detail::asymmetry(q.a) > 1e-12) {
                     throw InvalidConfiguration("quadratic objective: A is not symmetric");
                   }
                   Eigen::LLT<MatrixXd> llt(q.a);
                   if (llt.info() != Eigen::Success) {
                     throw InvalidConfiguration("quadratic objective: A is not positive definite");
                   }
                   if (!(q.noise_std >= 0.0)) {
                     throw InvalidConfiguration("quadratic objective: noise std must be >= 0");
                   }
                 },
                 [](const Logistic& l) {
                   if (l.features.rows() == 0 || l.features.rows() != l.labels.size()) {
                     throw InvalidConfiguration("logistic objective: inconsistent shapes");
                   }
                   if (!(l.reg >= 0.0)) {
                     throw InvalidConfiguration("logistic objective: regularisation must be >= 0");
                   }
                   if (((l.labels.array().abs() - 1.0).abs() > 0.0).any()) {
                     throw InvalidConfiguration("logistic objective: labels must be +1 or -1");
                   }
                 },
             },
             obj);
}

Index dimension(const LocalObjective& obj) {
  return std::visit(Overloaded{[](const Quadratic& q) { return q.b.size(); },
                               [](const Logistic& l) { return l.features.cols(); }},
                    obj);
}

double loss(const LocalObjective& obj, const Eigen::Ref<const VectorXd>& x) {
  return std::visit(Overloaded{
                        [&](const Quadratic& q) {
                          return 0.5 * x.dot(q.a * x) - q.b.dot(x) + q.offset;
                        },
                        [&](const Logistic& l) {
                          const VectorXd margins = l.labels.cwiseProduct(l.features * x);
                          double total = 0.0;
                          for (Index r = 0; r < margins.size(); ++r) total += softplus(-margins(r));
                          return total / static_cast<double>(margins.size()) +
                                 0.5 * l.reg * x.squaredNorm();
                        },
                    },
                    obj);
}

VectorXd full_gradient(const LocalObjective& obj, const Eigen::Ref<const VectorXd>& x) {
  return std::visit(Overloaded{
                        [&](const Quadratic& q) -> VectorXd { return q.a * x - q.b; },
                        [&](const Logistic& l) -> VectorXd {
                          std::vector<Index> rows(static_cast<std::size_t>(l.features.rows()));
                          for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = static_cast<Index>(r);
                          return logistic_gradient(l, x, rows, static_cast<double>(rows.size()));
                        },
                    },
                    obj);
}

VectorXd local_gradient(const LocalObjective& obj, const Eigen::Ref<const VectorXd>& x,
                        std::uint64_t t, Index device, const RngStream& noise,
                        const RngStream& minibatch) {
  const StreamCoord coord{t, static_cast<std::uint32_t>(device), 0};
  VectorXd g = std::visit(
      Overloaded{
          [&](const Quadratic& q) -> VectorXd {
            VectorXd out = q.a * x - q.b;
            if (q.noise_std > 0.0) {
              auto engine = noise.engine(coord);
              std::normal_distribution<double> gauss(0.0, q.noise_std);
              for (Index k = 0; k < out.size(); ++k) out(k) += gauss(engine);
            }
            return out;
          },
          [&](const Logistic& l) -> VectorXd {
            const auto m = static_cast<std::size_t>(l.features.rows());
            if (l.batch_size == 0 || l.batch_size >= m) return full_gradient(obj, x);
            auto engine = minibatch.engine(coord);
            std::uniform_int_distribution<Index> pick(0, static_cast<Index>(m) - 1);
            std::vector<Index> rows(l.batch_size);
            for (auto& r : rows) r = pick(engine);
            return logistic_gradient(l, x, rows, static_cast<double>(rows.size()));
          },
      },
      obj);
  require_finite(g, t, device);
  return g;
}

double epochs_per_iteration(const LocalObjective& obj) {
  if (const auto* l = std::get_if<Logistic>(&obj)) {
    const auto m = static_cast<std::size_t>(l->features.rows());
    if (l->batch_size != 0 && l->batch_size < m) {
      return static_cast<double>(l->batch_size) / static_cast<double>(m);
    }
  }
  return 1.0;
}

double global_loss(const ObjectiveSet& objs, const Eigen::Ref<const VectorXd>& x) {
  double total = 0.0;
  for (const auto& obj : objs) total += loss(obj, x);
  return total / static_cast<double>(objs.size());
}

VectorXd global_gradient(const ObjectiveSet& objs, const Eigen::Ref<const VectorXd>& x) {
  VectorXd g = VectorXd::Zero(x.size());
  for (const auto& obj : objs) g += full_gradient(obj, x);
  return g / static_cast<double>(objs.size());
}

std::optional<Optimum> quadratic_optimum(const ObjectiveSet& objs) {
  if (objs.empty()) return std::nullopt;
  const Index d = dimension(objs.front());
  MatrixXd a_sum = MatrixXd::Zero(d, d);
  VectorXd b_sum = VectorXd::Zero(d);
  for (const auto& obj : objs) {
    const auto* q = std::get_if<Quadratic>(&obj);
    if (q == nullptr) return std::nullopt;
    a_sum += q->a;
    b_sum += q->b;
  }
  VectorXd x = a_sum.llt().solve(b_sum);
  return Optimum{x, global_loss(objs, x)};
}

ObjectiveSet make_quadratic_objectives(Index n, const QuadraticFamily& family, std::uint64_t seed) {
  if (n < 1 || family.dim < 1 || !(family.curvature_min > 0.0) ||
      family.curvature_max < family.curvature_min || family.heterogeneity < 0.0 ||
      family.noise_std < 0.0) {
    throw InvalidConfiguration("invalid quadratic objective family");
  }
  const RngStream stream(seed, StreamDomain::kObjective);
  ObjectiveSet out;
  for (Index i = 0; i < n; ++i) {
    auto engine = stream.engine({0, static_cast<std::uint32_t>(i), 0});
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> spectrum(family.curvature_min, family.curvature_max);
    MatrixXd g(family.dim, family.dim);
    for (Index r = 0; r < g.rows(); ++r)
      for (Index c = 0; c < g.cols(); ++c) g(r, c) = gauss(engine);
    const MatrixXd rotation = Eigen::HouseholderQR<MatrixXd>(g).householderQ();
    VectorXd eig(family.dim);
    for (Index k = 0; k < eig.size(); ++k) eig(k) = spectrum(engine);
    MatrixXd a = rotation * eig.asDiagonal() * rotation.transpose();
    a = (a + a.transpose()) / 2.0;
    VectorXd center(family.dim);
    for (Index k = 0; k < center.size(); ++k) center(k) = family.heterogeneity * gauss(engine);
    Quadratic q;
    q.b = a * center;
    q.offset = 0.5 * center.dot(q.b);
    q.a = std::move(a);
    q.noise_std = family.noise_std;
    out.emplace_back(std::move(q));
  }
  return out;
}

ObjectiveSet make_logistic_objectives(Index n, const LogisticFamily& family, std::uint64_t seed) {
  if (n < 1 || family.dim < 1 || family.samples_per_device < 1 || family.label_skew < 0.0 ||
      family.label_skew > 1.0 || family.reg < 0.0) {
    throw InvalidConfiguration("invalid logistic objective family");
  }
  const RngStream stream(seed, StreamDomain::kObjective);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto truth_engine = stream.engine({1, 0, 0});
  VectorXd truth(family.dim);
  for (Index k = 0; k < truth.size(); ++k) truth(k) = gauss(truth_engine);

  ObjectiveSet out;
  for (Index i = 0; i < n; ++i) {
    auto engine = stream.engine({0, static_cast<std::uint32_t>(i), 0});
    const double sign = i % 2 == 0 ? 1.0 : -1.0;
    const double positive_fraction = 0.5 + 0.5 * family.label_skew * sign;
    const auto m = family.samples_per_device;
    const auto want_pos = static_cast<Index>(std::llround(positive_fraction * static_cast<double>(m)));
    Index have_pos = 0;
    Index have_neg = 0;
    Logistic l;
    l.features.resize(m, family.dim);
    l.labels.resize(m);
    l.reg = family.reg;
    l.batch_size = family.batch_size;
    VectorXd candidate(family.dim);
    for (long attempt = 0; have_pos + have_neg < m; ++attempt) {
      if (attempt > 10'000'000) throw NumericalFailure("logistic generator could not fill shards");
      for (Index k = 0; k < candidate.size(); ++k) candidate(k) = gauss(engine);
      const double label = candidate.dot(truth) + 0.5 * gauss(engine) >= 0.0 ? 1.0 : -1.0;
      if (label > 0 && have_pos < want_pos) {
        l.features.row(have_pos + have_neg) = candidate.transpose();
        l.labels(have_pos + have_neg) = 1.0;
        ++have_pos;
      } else if (label < 0 && have_neg < m - want_pos) {
        l.features.row(have_pos + have_neg) = candidate.transpose();
        l.labels(have_pos + have_neg) = -1.0;
        ++have_neg;
      }
    }
    out.emplace_back(std::move(l));
  }
  return out;
}

}  // namespace softdsgd::objective
