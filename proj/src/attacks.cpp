#include "stadv/attacks.hpp"

#include "stadv/defenses.hpp"
#include "stadv/error.hpp"
#include "stadv/warp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace stadv {

using Eigen::ArrayXd;
using Eigen::VectorXd;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void check_geometry(const LogitModel& g, const Image& x) {
  const InputGeometry geo = g.input_geometry();
  if (geo.height != x.height || geo.width != x.width || geo.channels != x.channels) {
    throw ShapeError(g.name() + " expects " + geo.to_string() + ", image is " + x.geometry());
  }
}

ArrayXd sign(const ArrayXd& a) { return (a > 0.0).cast<double>() - (a < 0.0).cast<double>(); }

// d(cross-entropy)/d(batch) for the given labels.
ArrayXd ce_input_gradient(const LogitModel& g, const Tensor& batch, std::span<const int> labels) {
  Tape tape;
  Tensor xt(batch.shape(), batch.value(), true);
  tape.backward(cross_entropy(g.logits(xt), labels));
  return xt.has_grad() ? xt.grad() : ArrayXd::Zero(batch.size());
}

// One signed step; ascent on the true class or descent on the target class.
ArrayXd signed_step(const LogitModel& g, const ArrayXd& pixels, const Shape& shape, const AttackGoal& goal) {
  const int label = goal.target ? *goal.target : goal.true_class;
  const ArrayXd grad = ce_input_gradient(g, Tensor(shape, pixels), std::span<const int>(&label, 1));
  return goal.target ? ArrayXd(-sign(grad)) : sign(grad);
}

Image with_pixels(const Image& like, ArrayXd pixels) {
  Image out = like;
  out.pixels = std::move(pixels);
  return out;
}

Shape single_shape(const Image& x) { return Shape{1, x.height, x.width, x.channels}; }

}  // namespace

void finalize_outcome(AttackOutcome& o, const LogitModel& g, const Image& clean) {
  o.model = g.name();
  const std::vector<double> z = logits_of(g, o.adversarial);
  o.predicted = argmax(z);
  o.success = o.goal.achieved(o.predicted);
  o.adv_loss = goal_loss(z, o.goal, 0.0);
  const ArrayXd d = o.adversarial.pixels - clean.pixels;
  o.linf = d.abs().maxCoeff();
  o.l2 = std::sqrt(d.square().sum());
}

int draw_target(int true_class, int num_classes, std::mt19937_64& rng) {
  if (num_classes < 2 || true_class < 0 || true_class >= num_classes) {
    throw ValueError("draw_target: class " + std::to_string(true_class) + " with " + std::to_string(num_classes) +
                     " classes");
  }
  std::uniform_int_distribution<int> pick(0, num_classes - 2);
  const int t = pick(rng);
  return t >= true_class ? t + 1 : t;
}

AttackOutcome stadv_attack(const LogitModel& g, const Image& x, const AttackObjectiveConfig& cfg,
                           const LbfgsConfig& solver) {
  const auto start = Clock::now();
  check_geometry(g, x);
  cfg.validate(g.num_classes());
  solver.validate();

  AttackOutcome out;
  out.method = "stadv";
  out.goal = cfg.goal;
  out.tau = cfg.tau;

  FlowField best(x.height, x.width);
  double best_value = std::numeric_limits<double>::infinity();
  bool found = false;
  auto objective = [&](const VectorXd& v, VectorXd& grad) {
    const FlowField f = flow_from_values(x.height, x.width, v.array());
    const ObjectiveValue o = total_objective(x, f, g, cfg);
    grad = o.gradient.matrix();
    if (cfg.goal.achieved(argmax(o.logits)) && o.value < best_value) {
      best_value = o.value;
      best = f;
      found = true;
    }
    return o.value;
  };

  FlowField chosen(x.height, x.width);
  try {
    auto r = lbfgs_minimize<double>(objective, VectorXd::Zero(chosen.values.size()), solver);
    out.objective_trace = r.trace.objective;
    out.termination = to_string(r.trace.reason);
    chosen = found ? best : flow_from_values(x.height, x.width, r.x.array());
  } catch (const Error& e) {
    out.error = e.what();
    out.termination = "error";
    if (found) chosen = best;
  }
  out.adversarial = bilinear_warp(x, chosen);
  out.flow_tv = flow_tv_metric(chosen);
  out.flow_l2 = flow_l2_metric(chosen);
  out.flow = std::move(chosen);
  finalize_outcome(out, g, x);
  out.wall_ms = elapsed_ms(start);
  return out;
}

std::vector<double> default_tau_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 10; ++i) grid.push_back(0.05 * std::pow(0.01, i / 9.0));
  return grid;
}

AttackOutcome stadv_attack_gridsearch(const LogitModel& g, const Image& x, const AttackObjectiveConfig& cfg,
                                      std::span<const double> tau_grid, const LbfgsConfig& solver,
                                      std::vector<AttackOutcome>* all) {
  if (tau_grid.empty()) throw ValueError("gridsearch: empty tau grid");
  const auto start = Clock::now();
  std::vector<double> taus(tau_grid.begin(), tau_grid.end());
  std::sort(taus.begin(), taus.end(), std::greater<>());
  std::optional<AttackOutcome> best_success, best_failure;
  for (double tau : taus) {
    AttackObjectiveConfig c = cfg;
    c.tau = tau;
    AttackOutcome o = stadv_attack(g, x, c, solver);
    if (o.success) {
      if (!best_success || o.flow_tv < best_success->flow_tv) best_success = o;
    } else if (!best_failure || o.adv_loss < best_failure->adv_loss) {
      best_failure = o;
    }
    if (all) all->push_back(std::move(o));
  }
  AttackOutcome out = best_success ? *best_success : *best_failure;
  out.method = "stadv_grid";
  out.wall_ms = elapsed_ms(start);
  return out;
}

AttackOutcome fgsm_attack(const LogitModel& g, const Image& x, const AttackGoal& goal, double epsilon) {
  const auto start = Clock::now();
  check_geometry(g, x);
  if (!(epsilon >= 0.0)) throw ValueError("fgsm: epsilon must be >= 0");
  AttackOutcome out;
  out.method = "fgsm";
  out.goal = goal;
  const ArrayXd step = signed_step(g, x.pixels, single_shape(x), goal);
  out.adversarial = with_pixels(x, (x.pixels + epsilon * step).cwiseMax(x.lo).cwiseMin(x.hi));
  finalize_outcome(out, g, x);
  out.wall_ms = elapsed_ms(start);
  return out;
}

AttackOutcome pgd_attack(const LogitModel& g, const Image& x, const AttackGoal& goal, const PgdConfig& cfg) {
  const auto start = Clock::now();
  check_geometry(g, x);
  if (!(cfg.epsilon >= 0.0) || cfg.steps < 1 || !(cfg.step_size >= 0.0)) {
    throw ValueError("pgd: need epsilon >= 0, steps >= 1, step_size >= 0");
  }
  AttackOutcome out;
  out.method = "pgd";
  out.goal = goal;
  const ArrayXd lo = (x.pixels - cfg.epsilon).cwiseMax(x.lo);
  const ArrayXd hi = (x.pixels + cfg.epsilon).cwiseMin(x.hi);
  ArrayXd cur = x.pixels;
  if (cfg.random_start) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> d(-cfg.epsilon, cfg.epsilon);
    for (Eigen::Index i = 0; i < cur.size(); ++i) cur[i] += d(rng);
    cur = cur.cwiseMax(lo).cwiseMin(hi);
  }
  for (int s = 0; s < cfg.steps; ++s) {
    cur = (cur + cfg.step_size * signed_step(g, cur, single_shape(x), goal)).cwiseMax(lo).cwiseMin(hi);
  }
  out.adversarial = with_pixels(x, std::move(cur));
  finalize_outcome(out, g, x);
  out.wall_ms = elapsed_ms(start);
  return out;
}

Tensor fgsm_batch(const LogitModel& g, const Tensor& batch, std::span<const int> labels, double epsilon, double lo,
                  double hi) {
  const ArrayXd grad = ce_input_gradient(g, batch, labels);
  return Tensor(batch.shape(), (batch.value() + epsilon * sign(grad)).cwiseMax(lo).cwiseMin(hi));
}

Tensor pgd_batch(const LogitModel& g, const Tensor& batch, std::span<const int> labels, const PgdConfig& cfg,
                 std::mt19937_64& rng, double lo, double hi) {
  const ArrayXd lower = (batch.value() - cfg.epsilon).cwiseMax(lo);
  const ArrayXd upper = (batch.value() + cfg.epsilon).cwiseMin(hi);
  ArrayXd cur = batch.value();
  if (cfg.random_start) {
    std::uniform_real_distribution<double> d(-cfg.epsilon, cfg.epsilon);
    for (Eigen::Index i = 0; i < cur.size(); ++i) cur[i] += d(rng);
    cur = cur.cwiseMax(lower).cwiseMin(upper);
  }
  for (int s = 0; s < cfg.steps; ++s) {
    const ArrayXd grad = ce_input_gradient(g, Tensor(batch.shape(), cur), labels);
    cur = (cur + cfg.step_size * sign(grad)).cwiseMax(lower).cwiseMin(upper);
  }
  return Tensor(batch.shape(), std::move(cur));
}

AttackOutcome cw_attack(const LogitModel& g, const Image& x, const AttackGoal& goal, const CwConfig& cfg) {
  const auto start = Clock::now();
  check_geometry(g, x);
  AttackObjectiveConfig check;
  check.goal = goal;
  check.tau = 0.0;
  check.kappa = cfg.kappa;
  check.validate(g.num_classes());
  if (cfg.search_rounds < 1 || !(cfg.initial_c > 0.0)) throw ValueError("cw: need search_rounds >= 1 and c > 0");
  if (cfg.linf_bound && !(*cfg.linf_bound > 0.0)) throw ValueError("cw: linf bound must be positive");

  // Per-pixel box [a, b]; x' = a + (b - a) * (tanh(w) + 1) / 2.
  ArrayXd a = ArrayXd::Constant(x.pixels.size(), x.lo), b = ArrayXd::Constant(x.pixels.size(), x.hi);
  if (cfg.linf_bound) {
    a = a.cwiseMax(x.pixels - *cfg.linf_bound);
    b = b.cwiseMin(x.pixels + *cfg.linf_bound);
  }
  const ArrayXd half = (b - a) / 2.0;
  const ArrayXd w0 = ((x.pixels - a) / half.cwiseMax(1e-300) - 1.0).cwiseMax(-1.0 + 1e-6).cwiseMin(1.0 - 1e-6).atanh();
  const Shape shape = single_shape(x);

  AttackOutcome out;
  out.method = "cw";
  out.goal = goal;

  std::optional<AttackOutcome> best;
  AttackOutcome last;
  double c = cfg.initial_c, lo_c = 0.0, hi_c = std::numeric_limits<double>::infinity();
  for (int round = 0; round < cfg.search_rounds; ++round) {
    auto objective = [&](const VectorXd& w, VectorXd& grad) {
      Tape tape;
      Tensor wt(Shape{static_cast<int>(w.size())}, w.array(), true);
      Tensor img = add(Tensor({static_cast<int>(w.size())}, a),
                       mul(Tensor({static_cast<int>(w.size())}, half), add(tanh(wt), 1.0)));
      Tensor delta = sub(img, Tensor({static_cast<int>(w.size())}, x.pixels));
      Tensor total = add(sum(square(delta)), mul(goal_loss(g.logits(reshape(img, shape)), goal, cfg.kappa), c));
      tape.backward(total);
      grad = wt.grad().matrix();
      return total.item();
    };
    AttackOutcome trial = out;
    try {
      auto r = lbfgs_minimize<double>(objective, VectorXd(w0.matrix()), cfg.solver);
      trial.objective_trace = r.trace.objective;
      trial.termination = to_string(r.trace.reason);
      trial.adversarial = with_pixels(x, (a + half * (r.x.array().tanh() + 1.0)).cwiseMax(a).cwiseMin(b));
    } catch (const Error& e) {
      trial.error = e.what();
      trial.termination = "error";
      trial.adversarial = x;
    }
    finalize_outcome(trial, g, x);
    if (trial.success) {
      if (!best || trial.l2 < best->l2) best = trial;
      hi_c = c;
      c = (lo_c + hi_c) / 2.0;
    } else {
      lo_c = c;
      c = std::isinf(hi_c) ? c * 10.0 : (lo_c + hi_c) / 2.0;
    }
    last = std::move(trial);
  }
  AttackOutcome result = best ? *best : last;
  result.wall_ms = elapsed_ms(start);
  return result;
}

AttackOutcome adaptive_blur_attack(const LogitModel& g, const Image& x, const AttackObjectiveConfig& cfg,
                                   const LbfgsConfig& solver) {
  const BlurredModel composite(g);
  AttackOutcome out = stadv_attack(composite, x, cfg, solver);
  out.method = "stadv_adaptive_blur";
  return out;
}

}  // namespace stadv
