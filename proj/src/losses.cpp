#include "stadv/losses.hpp"

#include "stadv/warp.hpp"

#include <algorithm>
#include <limits>

namespace stadv {

using Eigen::ArrayXd;

std::string AttackGoal::describe() const {
  return target ? "targeted(" + std::to_string(*target) + ")" : "untargeted";
}

void AttackObjectiveConfig::validate(int num_classes) const {
  if (!(tau >= 0.0)) throw ValueError("tau must be non-negative");
  if (!std::isfinite(kappa)) throw ValueError("kappa must be finite");
  if (goal.true_class < 0 || goal.true_class >= num_classes) {
    throw ValueError("true class " + std::to_string(goal.true_class) + " outside [0, " +
                     std::to_string(num_classes) + ")");
  }
  if (goal.target) {
    if (*goal.target < 0 || *goal.target >= num_classes) {
      throw ValueError("target class " + std::to_string(*goal.target) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    if (*goal.target == goal.true_class) throw ValueError("target class equals the true class");
  }
}

namespace {

void check_class(std::size_t count, int cls, const char* what) {
  if (count < 2) throw ValueError("margin loss needs at least two logits");
  if (cls < 0 || static_cast<std::size_t>(cls) >= count) {
    throw ValueError(std::string(what) + " " + std::to_string(cls) + " outside [0, " + std::to_string(count) + ")");
  }
}

// Highest-scoring index other than `excluded`, lowest index on ties.
int best_other(std::span<const double> logits, int excluded) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(logits.size()); ++i) {
    if (i == excluded) continue;
    if (best < 0 || logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

std::span<const double> values_of(const Tensor& t) { return {t.value().data(), static_cast<std::size_t>(t.size())}; }

}  // namespace

Tensor adv_loss(const Tensor& logits, int target, double kappa) {
  check_class(static_cast<std::size_t>(logits.size()), target, "target class");
  const int other = best_other(values_of(logits), target);
  return maximum(sub(element(logits, other), element(logits, target)), kappa);
}

Tensor adv_loss_untargeted(const Tensor& logits, int true_class, double kappa) {
  check_class(static_cast<std::size_t>(logits.size()), true_class, "true class");
  const int other = best_other(values_of(logits), true_class);
  return maximum(sub(element(logits, true_class), element(logits, other)), kappa);
}

Tensor goal_loss(const Tensor& logits, const AttackGoal& goal, double kappa) {
  return goal.target ? adv_loss(logits, *goal.target, kappa) : adv_loss_untargeted(logits, goal.true_class, kappa);
}

double adv_loss(std::span<const double> logits, int target, double kappa) {
  check_class(logits.size(), target, "target class");
  const int other = best_other(logits, target);
  return std::max(logits[static_cast<std::size_t>(other)] - logits[static_cast<std::size_t>(target)], kappa);
}

double adv_loss_untargeted(std::span<const double> logits, int true_class, double kappa) {
  check_class(logits.size(), true_class, "true class");
  const int other = best_other(logits, true_class);
  return std::max(logits[static_cast<std::size_t>(true_class)] - logits[static_cast<std::size_t>(other)], kappa);
}

double goal_loss(std::span<const double> logits, const AttackGoal& goal, double kappa) {
  return goal.target ? adv_loss(logits, *goal.target, kappa) : adv_loss_untargeted(logits, goal.true_class, kappa);
}

Tensor flow_loss(const Tensor& flow, double eps) {
  if (flow.rank() != 3 || flow.dim(2) != 2) throw ShapeError("flow_loss expects [H,W,2], got " + shape_string(flow.shape()));
  if (!flow.value().allFinite()) throw ValueError("flow_loss: flow field contains non-finite values");
  FlowField f = flow_from_values(flow.dim(0), flow.dim(1), flow.value());
  ArrayXd grad;
  const double value = flow_tv_loss(f, eps, &grad);
  return make_op_result("flow_loss", Shape{}, ArrayXd::Constant(1, value), {&flow},
                        [fn = flow.node(), grad](const ArrayXd& g) { fn->accumulate(grad * g[0]); });
}

double flow_loss(const FlowField& f, double eps) {
  if (!f.all_finite()) throw ValueError("flow_loss: flow field contains non-finite values");
  return flow_tv_loss(f, eps);
}

ObjectiveValue total_objective(const Image& x, const FlowField& f, const LogitModel& g,
                               const AttackObjectiveConfig& cfg) {
  cfg.validate(g.num_classes());
  check_warp_inputs(x, f);
  ObjectiveValue out;
  Tape tape;
  Tensor flow = to_tensor(f, true);
  Tensor warped = bilinear_warp(to_tensor(x), flow);
  Tensor logits = g.logits(reshape(warped, Shape{1, x.height, x.width, x.channels}));
  Tensor adv = goal_loss(logits, cfg.goal, cfg.kappa);
  Tensor smooth = flow_loss(flow);
  Tensor total = add(adv, mul(smooth, cfg.tau));
  tape.backward(total);
  out.value = total.item();
  out.adv = adv.item();
  out.flow = smooth.item();
  out.gradient = flow.has_grad() ? flow.grad() : ArrayXd::Zero(f.values.size());
  out.logits.assign(logits.value().data(), logits.value().data() + logits.size());
  return out;
}

}  // namespace stadv
