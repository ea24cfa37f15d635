#include "doctest.h"

#include "stadv/lbfgs.hpp"

#include <Eigen/Dense>

#include <limits>
#include <random>

using namespace stadv;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void check_monotone(const SolveTrace& t) {
  for (std::size_t i = 1; i < t.objective.size(); ++i) CHECK(t.objective[i] <= t.objective[i - 1] + 1e-12);
  CHECK(t.objective.size() == static_cast<std::size_t>(t.iterations) + 1);
}

double rosenbrock(const VectorXd& x, VectorXd& g) {
  const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
  g[0] = -2.0 * a - 400.0 * x[0] * b;
  g[1] = 200.0 * b;
  return a * a + 100.0 * b * b;
}

}  // namespace

TEST_CASE("shifted quadratic converges in a handful of iterations") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd a(6), x0(6);
    for (int i = 0; i < 6; ++i) {
      a[i] = n(rng);
      x0[i] = n(rng);
    }
    auto f = [&](const VectorXd& x, VectorXd& g) {
      g = 2.0 * (x - a);
      return (x - a).squaredNorm();
    };
    LbfgsConfig cfg;
    cfg.grad_tol = 1e-10;
    auto r = lbfgs_minimize<double>(f, x0, cfg);
    CHECK((r.x - a).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK(r.trace.iterations <= 5);
    CHECK(r.trace.reason == Termination::converged);
    check_monotone(r.trace);
  }
}

TEST_CASE("Rosenbrock from the classic start") {
  VectorXd x0(2);
  x0 << -1.2, 1.0;
  LbfgsConfig cfg;
  cfg.max_iterations = 1000;
  cfg.grad_tol = 1e-9;
  cfg.max_line_search_steps = 40;
  auto r = lbfgs_minimize<double>(rosenbrock, x0, cfg);
  CHECK(std::abs(r.x[0] - 1.0) <= 1e-5);
  CHECK(std::abs(r.x[1] - 1.0) <= 1e-5);
  check_monotone(r.trace);
}

TEST_CASE("SPD quadratic matches the direct solve") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  const int dim = 20;
  MatrixXd m(dim, dim);
  VectorXd b(dim);
  for (int i = 0; i < dim; ++i) {
    b[i] = n(rng);
    for (int j = 0; j < dim; ++j) m(i, j) = n(rng);
  }
  const MatrixXd hess = m * m.transpose() + dim * MatrixXd::Identity(dim, dim) * 0.1;
  const VectorXd direct = hess.llt().solve(b);
  auto f = [&](const VectorXd& x, VectorXd& g) {
    g = hess * x - b;
    return 0.5 * x.dot(hess * x) - b.dot(x);
  };
  LbfgsConfig cfg;
  cfg.grad_tol = 1e-10;
  cfg.max_iterations = 2000;
  auto r = lbfgs_minimize<double>(f, VectorXd::Zero(dim), cfg);
  CHECK((r.x - direct).lpNorm<Eigen::Infinity>() <= 1e-6);
  check_monotone(r.trace);
}

TEST_CASE("without history the solver is gradient descent and still converges") {
  VectorXd a(4);
  a << 1, -2, 3, 0.5;
  auto f = [&](const VectorXd& x, VectorXd& g) {
    g = 2.0 * (x - a);
    return (x - a).squaredNorm();
  };
  LbfgsConfig cfg;
  cfg.history_size = 0;
  cfg.grad_tol = 1e-9;
  cfg.max_iterations = 500;
  auto r = lbfgs_minimize<double>(f, VectorXd::Zero(4), cfg);
  CHECK(r.trace.reason == Termination::converged);
  CHECK((r.x - a).lpNorm<Eigen::Infinity>() <= 1e-8);
  check_monotone(r.trace);
}

TEST_CASE("identical inputs give identical iterates") {
  VectorXd x0(2);
  x0 << -1.2, 1.0;
  LbfgsConfig cfg;
  cfg.max_iterations = 60;
  auto r1 = lbfgs_minimize<double>(rosenbrock, x0, cfg);
  auto r2 = lbfgs_minimize<double>(rosenbrock, x0, cfg);
  CHECK((r1.x.array() == r2.x.array()).all());
  CHECK(r1.trace.objective == r2.trace.objective);
  CHECK(r1.trace.evaluations == r2.trace.evaluations);
}

TEST_CASE("single precision instantiation") {
  Eigen::VectorXf a(3), x0 = Eigen::VectorXf::Zero(3);
  a << 0.5f, -1.0f, 2.0f;
  auto f = [&](const Eigen::VectorXf& x, Eigen::VectorXf& g) {
    g = 2.0f * (x - a);
    return (x - a).squaredNorm();
  };
  LbfgsConfig cfg;
  cfg.grad_tol = 1e-5;
  auto r = lbfgs_minimize<float>(f, x0, cfg);
  CHECK((r.x - a).lpNorm<Eigen::Infinity>() <= 1e-5f);
}

TEST_CASE("non-finite handling") {
  auto nan_at_start = [](const VectorXd&, VectorXd& g) {
    g.setZero();
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS(lbfgs_minimize<double>(nan_at_start, VectorXd::Ones(2), LbfgsConfig{}), ValueError);

  // A wall of +inf beyond x > 0.5 forces the line search to shrink.
  auto walled = [](const VectorXd& x, VectorXd& g) {
    g = 2.0 * (x.array() - 2.0).matrix();
    if (x[0] > 0.5) return std::numeric_limits<double>::infinity();
    return (x.array() - 2.0).matrix().squaredNorm();
  };
  LbfgsConfig cfg;
  cfg.max_iterations = 50;
  auto r = lbfgs_minimize<double>(walled, VectorXd::Zero(1), cfg);
  CHECK(r.x[0] <= 0.5);
  CHECK(r.x[0] > 0.4);
  check_monotone(r.trace);
  CHECK(r.trace.reason == Termination::line_search_failure);

  VectorXd bad(1);
  bad << std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(lbfgs_minimize<double>(walled, bad, cfg), ValueError);
}

TEST_CASE("config validation") {
  LbfgsConfig cfg;
  cfg.armijo_c = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
  cfg = LbfgsConfig{};
  cfg.backtrack_factor = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
  cfg = LbfgsConfig{};
  cfg.max_line_search_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
  CHECK(std::string(to_string(Termination::max_iterations)) == "max_iters");
}

TEST_CASE("max iterations terminates with its reason") {
  VectorXd x0(2);
  x0 << -1.2, 1.0;
  LbfgsConfig cfg;
  cfg.max_iterations = 3;
  auto r = lbfgs_minimize<double>(rosenbrock, x0, cfg);
  CHECK(r.trace.iterations == 3);
  CHECK(r.trace.reason == Termination::max_iterations);
}
