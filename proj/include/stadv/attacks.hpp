#ifndef STADV_ATTACKS_HPP
#define STADV_ATTACKS_HPP

#include "stadv/classifier.hpp"
#include "stadv/image.hpp"
#include "stadv/lbfgs.hpp"
#include "stadv/losses.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace stadv {

struct AttackOutcome {
  std::string method;
  std::string model;
  Image adversarial;
  std::optional<FlowField> flow;
  AttackGoal goal;
  bool success = false;
  int predicted = -1;
  std::vector<double> objective_trace;
  double flow_tv = std::numeric_limits<double>::quiet_NaN();
  double flow_l2 = std::numeric_limits<double>::quiet_NaN();
  double tau = std::numeric_limits<double>::quiet_NaN();
  double adv_loss = std::numeric_limits<double>::quiet_NaN();  // margin loss of the stored image, kappa 0
  double linf = 0.0;  // distance to the clean input
  double l2 = 0.0;
  std::string termination;
  std::string error;  // non-empty when the driver caught a failure
  double wall_ms = 0.0;
};

// Fills predicted/success/adv_loss/linf/l2 from a fresh evaluation of the
// stored image.
void finalize_outcome(AttackOutcome& o, const LogitModel& g, const Image& clean);

// Spatial attack: minimise adv loss + tau * flow loss over a flow field
// starting at zero. Among successful evaluations seen during the solve the
// one with the lowest objective is returned; otherwise the final iterate.
AttackOutcome stadv_attack(const LogitModel& g, const Image& x, const AttackObjectiveConfig& cfg,
                           const LbfgsConfig& solver = {});

// 10 log-spaced values from 0.05 down to 0.0005.
std::vector<double> default_tau_grid();

// Runs stadv_attack for every tau (descending). Returns the successful
// outcome with the smallest flow_tv (ties: larger tau), else the failure
// with the lowest adv loss.
AttackOutcome stadv_attack_gridsearch(const LogitModel& g, const Image& x, const AttackObjectiveConfig& cfg,
                                      std::span<const double> tau_grid, const LbfgsConfig& solver = {},
                                      std::vector<AttackOutcome>* all = nullptr);

// Single signed-gradient step on cross-entropy: ascent on the true class
// (untargeted) or descent on the target class, clipped to [lo,hi].
AttackOutcome fgsm_attack(const LogitModel& g, const Image& x, const AttackGoal& goal, double epsilon);

struct PgdConfig {
  double epsilon = 0.3;
  int steps = 10;
  double step_size = 0.075;
  bool random_start = true;
  std::uint64_t seed = 0;
};

AttackOutcome pgd_attack(const LogitModel& g, const Image& x, const AttackGoal& goal, const PgdConfig& cfg);

// Batched FGSM/PGD on cross-entropy for adversarial training. Returns the
// perturbed batch (same shape), clipped to [lo,hi].
Tensor fgsm_batch(const LogitModel& g, const Tensor& batch, std::span<const int> labels, double epsilon,
                  double lo = 0.0, double hi = 1.0);
Tensor pgd_batch(const LogitModel& g, const Tensor& batch, std::span<const int> labels, const PgdConfig& cfg,
                 std::mt19937_64& rng, double lo = 0.0, double hi = 1.0);

struct CwConfig {
  double kappa = 0.0;
  double initial_c = 1.0;
  int search_rounds = 5;
  // Optional per-pixel L-infinity bound folded into the tanh box.
  std::optional<double> linf_bound;
  LbfgsConfig solver = [] {
    LbfgsConfig s;
    s.max_iterations = 100;
    return s;
  }();
};

// min ||delta||^2 + c * margin loss over a tanh-space box, binary search on
// c; keeps the successful result with the smallest ||delta||_2.
AttackOutcome cw_attack(const LogitModel& g, const Image& x, const AttackGoal& goal, const CwConfig& cfg = {});

// stAdv through blur-then-classify; success judged on the composite.
AttackOutcome adaptive_blur_attack(const LogitModel& g, const Image& x, const AttackObjectiveConfig& cfg,
                                   const LbfgsConfig& solver = {});

// Uniform over the classes other than true_class.
int draw_target(int true_class, int num_classes, std::mt19937_64& rng);

}  // namespace stadv

#endif  // STADV_ATTACKS_HPP
