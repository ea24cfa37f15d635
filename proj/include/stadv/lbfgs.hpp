#ifndef STADV_LBFGS_HPP
#define STADV_LBFGS_HPP

#include "stadv/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>
#include <vector>

namespace stadv {

struct LbfgsConfig {
  int history_size = 10;
  int max_iterations = 300;
  double grad_tol = 1e-6;          // on the max-norm of the gradient
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  int max_line_search_steps = 20;

  void validate() const {
    if (history_size < 0) throw ValueError("lbfgs: history_size must be >= 0");
    if (max_iterations < 0) throw ValueError("lbfgs: max_iterations must be >= 0");
    if (!(grad_tol >= 0.0)) throw ValueError("lbfgs: grad_tol must be >= 0");
    if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw ValueError("lbfgs: armijo_c must lie in (0, 1)");
    if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0)) {
      throw ValueError("lbfgs: backtrack_factor must lie in (0, 1)");
    }
    if (max_line_search_steps < 1) throw ValueError("lbfgs: max_line_search_steps must be >= 1");
  }
};

enum class Termination { converged, max_iterations, line_search_failure };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::converged:
      return "converged";
    case Termination::max_iterations:
      return "max_iters";
    case Termination::line_search_failure:
      return "line_search_failure";
  }
  return "unknown";
}

struct SolveTrace {
  int iterations = 0;
  int evaluations = 0;
  std::vector<double> objective;  // starting value, then one per accepted step
  double final_grad_norm = 0.0;
  Termination reason = Termination::max_iterations;
};

template <typename Scalar>
struct LbfgsResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x;
  SolveTrace trace;
};

// Minimizes objective(x, grad) -> value with limited-memory BFGS and Armijo
// backtracking from a unit step. Curvature pairs with y's <= 1e-10 are
// dropped. With no stored pairs the search direction is the negative
// gradient, shortened to unit length when longer.
template <typename Scalar, typename Objective>
LbfgsResult<Scalar> lbfgs_minimize(Objective&& objective, Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x0,
                                   const LbfgsConfig& cfg) {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  cfg.validate();

  struct Pair {
    Vector s, y;
    Scalar rho;
  };

  LbfgsResult<Scalar> result;
  SolveTrace& trace = result.trace;
  Vector x = std::move(x0);
  if (!x.allFinite()) throw ValueError("lbfgs: starting point is not finite");
  Vector g(x.size());
  Scalar fx = objective(x, g);
  ++trace.evaluations;
  if (!std::isfinite(static_cast<double>(fx)) || !g.allFinite()) {
    throw ValueError("lbfgs: objective is not finite at the starting point");
  }
  trace.objective.push_back(static_cast<double>(fx));

  std::deque<Pair> history;
  std::vector<Scalar> alpha_buf;
  Vector xn(x.size()), gn(x.size()), d(x.size());

  auto steepest = [&](const Vector& grad) {
    const Scalar norm = grad.norm();
    return Vector(-grad * (norm > Scalar(1) ? Scalar(1) / norm : Scalar(1)));
  };

  auto direction = [&](const Vector& grad) -> Vector {
    if (history.empty()) return steepest(grad);
    Vector q = grad;
    alpha_buf.assign(history.size(), Scalar(0));
    for (std::size_t i = history.size(); i-- > 0;) {
      alpha_buf[i] = history[i].rho * history[i].s.dot(q);
      q -= alpha_buf[i] * history[i].y;
    }
    const Pair& last = history.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
    for (std::size_t i = 0; i < history.size(); ++i) {
      const Scalar beta = history[i].rho * history[i].y.dot(q);
      q += (alpha_buf[i] - beta) * history[i].s;
    }
    return -q;
  };

  trace.reason = Termination::max_iterations;
  bool stopped = false;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    if (g.template lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
      trace.reason = Termination::converged;
      stopped = true;
      break;
    }
    d = direction(g);
    Scalar slope = g.dot(d);
    if (!(slope < Scalar(0))) {
      history.clear();
      d = steepest(g);
      slope = g.dot(d);
    }

    Scalar step(1);
    Scalar fn(0);
    bool accepted = false;
    for (int ls = 0; ls < cfg.max_line_search_steps; ++ls) {
      xn = x + step * d;
      fn = objective(xn, gn);
      ++trace.evaluations;
      if (std::isfinite(static_cast<double>(fn)) && gn.allFinite() &&
          fn <= fx + Scalar(cfg.armijo_c) * step * slope) {
        accepted = true;
        break;
      }
      step *= Scalar(cfg.backtrack_factor);
    }
    if (!accepted) {
      trace.reason = Termination::line_search_failure;
      stopped = true;
      break;
    }

    if (cfg.history_size > 0) {
      Vector s = xn - x;
      Vector y = gn - g;
      const Scalar ys = y.dot(s);
      if (ys > Scalar(1e-10)) {
        history.push_back(Pair{std::move(s), std::move(y), Scalar(1) / ys});
        if (static_cast<int>(history.size()) > cfg.history_size) history.pop_front();
      }
    }
    x.swap(xn);
    g.swap(gn);
    fx = fn;
    ++trace.iterations;
    trace.objective.push_back(static_cast<double>(fx));
  }
  if (!stopped && g.template lpNorm<Eigen::Infinity>() <= cfg.grad_tol) trace.reason = Termination::converged;
  trace.final_grad_norm = static_cast<double>(g.template lpNorm<Eigen::Infinity>());
  result.x = std::move(x);
  return result;
}

}  // namespace stadv

#endif  // STADV_LBFGS_HPP
