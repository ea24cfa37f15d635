#ifndef STADV_LOSSES_HPP
#define STADV_LOSSES_HPP

#include "stadv/classifier.hpp"
#include "stadv/image.hpp"
#include "stadv/tensor.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>

namespace stadv {

inline constexpr double kFlowLossEpsilon = 1e-8;

// Targeted goal: predict == target. Untargeted goal: predict != true_class.
struct AttackGoal {
  std::optional<int> target;
  int true_class = 0;

  static AttackGoal targeted(int target, int true_class) { return AttackGoal{target, true_class}; }
  static AttackGoal untargeted(int true_class) { return AttackGoal{std::nullopt, true_class}; }

  bool is_targeted() const { return target.has_value(); }
  bool achieved(int predicted) const { return target ? predicted == *target : predicted != true_class; }
  std::string describe() const;
};

struct AttackObjectiveConfig {
  double tau = 0.05;
  double kappa = 0.0;
  AttackGoal goal;

  void validate(int num_classes) const;
};

// max(max_{i != t} g_i - g_t, kappa); gradient flows through the selected branch.
Tensor adv_loss(const Tensor& logits, int target, double kappa);
// max(g_y - max_{i != y} g_i, kappa).
Tensor adv_loss_untargeted(const Tensor& logits, int true_class, double kappa);
Tensor goal_loss(const Tensor& logits, const AttackGoal& goal, double kappa);

double adv_loss(std::span<const double> logits, int target, double kappa);
double adv_loss_untargeted(std::span<const double> logits, int true_class, double kappa);
double goal_loss(std::span<const double> logits, const AttackGoal& goal, double kappa);

// Sum over pixels p and 4-connected neighbours q of
// sqrt(|du_p - du_q|^2 + |dv_p - dv_q|^2 + eps). Every adjacency is visited
// from both ends, so it contributes twice. When `grad` is non-null it
// receives d(loss)/d(values) in the flow's interleaved layout.
template <typename Scalar>
Scalar flow_tv_loss(const BasicFlowField<Scalar>& f, Scalar eps,
                    typename BasicFlowField<Scalar>::Array* grad = nullptr) {
  if (grad) grad->setZero(f.values.size());
  Scalar total(0);
  auto pair = [&](int u, int v, int uq, int vq) {
    const Scalar a = f.du(u, v) - f.du(uq, vq);
    const Scalar b = f.dv(u, v) - f.dv(uq, vq);
    const Scalar d = std::sqrt(a * a + b * b + eps);
    total += Scalar(2) * d;
    if (grad) {
      const Eigen::Index p = (Eigen::Index(u) * f.width + v) * 2;
      const Eigen::Index q = (Eigen::Index(uq) * f.width + vq) * 2;
      const Scalar ga = Scalar(2) * a / d, gb = Scalar(2) * b / d;
      (*grad)[p] += ga;
      (*grad)[p + 1] += gb;
      (*grad)[q] -= ga;
      (*grad)[q + 1] -= gb;
    }
  };
  for (int u = 0; u < f.height; ++u) {
    for (int v = 0; v < f.width; ++v) {
      if (v + 1 < f.width) pair(u, v, u, v + 1);
      if (u + 1 < f.height) pair(u, v, u + 1, v);
    }
  }
  return total;
}

// Value of flow_tv_loss for any constant field.
inline double flow_loss_floor(int height, int width, double eps = kFlowLossEpsilon) {
  const double adjacencies = double(height) * (width - 1) + double(width) * (height - 1);
  return 2.0 * adjacencies * std::sqrt(eps);
}

Tensor flow_loss(const Tensor& flow, double eps = kFlowLossEpsilon);
double flow_loss(const FlowField& f, double eps = kFlowLossEpsilon);

struct ObjectiveValue {
  double value = 0.0;
  double adv = 0.0;
  double flow = 0.0;
  Eigen::ArrayXd gradient;          // d(value)/d(flow values)
  std::vector<double> logits;       // logits of the warped image
};

// L_adv(warp(x, f)) + tau * L_flow(f), with its gradient w.r.t. f.
ObjectiveValue total_objective(const Image& x, const FlowField& f, const LogitModel& g,
                               const AttackObjectiveConfig& cfg);

}  // namespace stadv

#endif  // STADV_LOSSES_HPP
