#ifndef STADV_DEFENSES_HPP
#define STADV_DEFENSES_HPP

#include "stadv/classifier.hpp"
#include "stadv/image.hpp"

#include <cmath>
#include <map>
#include <span>
#include <string>

namespace stadv {

struct AttackOutcome;

// 3x3 stride-1 mean filter with edge replication, per channel.
Image mean_blur_restore(const Image& x);
// Same filter as a differentiable op on an [N,H,W,C] batch.
Tensor mean_blur(const Tensor& batch);

// Blur-then-classify. Holds a reference: `inner` must outlive it.
class BlurredModel : public LogitModel {
 public:
  explicit BlurredModel(const LogitModel& inner) : inner_(inner) {}
  Tensor logits(const Tensor& batch) const override { return inner_.logits(mean_blur(batch)); }
  InputGeometry input_geometry() const override { return inner_.input_geometry(); }
  int num_classes() const override { return inner_.num_classes(); }
  std::string name() const override { return inner_.name() + "+blur"; }

 private:
  const LogitModel& inner_;
};

enum class Defense { none, blur };
const char* to_string(Defense d);
Defense parse_defense(const std::string& name);

struct DefenseStats {
  int count = 0;
  double success_rate = 0.0;        // goal still met after the defense
  double recovered_accuracy = 0.0;  // defended prediction == true label
};

struct DefenseReport {
  std::string defense;
  std::string model;
  std::map<std::string, DefenseStats> per_attack;  // keyed by outcome method
  int sample_count = 0;
  std::uint64_t seed = 0;
};

DefenseReport evaluate_defense(const LogitModel& g, Defense defense, std::span<const AttackOutcome> outcomes,
                               std::span<const int> true_labels, std::uint64_t seed = 0);

// Recovered accuracy on clean inputs under the defense.
double defended_accuracy(const LogitModel& g, Defense defense, std::span<const Image> images,
                         std::span<const int> labels);

// sqrt((1/n) * sum_p sum_{q in N(p)} |f_p - f_q|^2), 4-neighbourhood,
// every adjacency counted from both ends.
template <typename Scalar>
Scalar flow_tv_metric(const BasicFlowField<Scalar>& f) {
  Scalar acc(0);
  for (int u = 0; u < f.height; ++u) {
    for (int v = 0; v < f.width; ++v) {
      auto add = [&](int uq, int vq) {
        const Scalar a = f.du(u, v) - f.du(uq, vq), b = f.dv(u, v) - f.dv(uq, vq);
        acc += Scalar(2) * (a * a + b * b);
      };
      if (v + 1 < f.width) add(u, v + 1);
      if (u + 1 < f.height) add(u + 1, v);
    }
  }
  return std::sqrt(acc / Scalar(f.pixel_count()));
}

// sqrt((1/n) * sum_p |f_p|^2)
template <typename Scalar>
Scalar flow_l2_metric(const BasicFlowField<Scalar>& f) {
  return std::sqrt(f.values.square().sum() / Scalar(f.pixel_count()));
}

struct MeanStd {
  int count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
};
MeanStd mean_std(std::span<const double> values);

struct FlowSummary {
  MeanStd flow_tv;
  MeanStd flow_l2;
};
// Over successful outcomes that carry a flow.
FlowSummary summarize_flows(std::span<const AttackOutcome> outcomes);

}  // namespace stadv

#endif  // STADV_DEFENSES_HPP
