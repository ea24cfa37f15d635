#ifndef STADV_CLASSIFIER_HPP
#define STADV_CLASSIFIER_HPP

#include "stadv/image.hpp"
#include "stadv/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace stadv {

struct InputGeometry {
  int height = 0;
  int width = 0;
  int channels = 0;
  bool operator==(const InputGeometry&) const = default;
  std::string to_string() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
};

// Anything that maps an [N,H,W,C] batch to [N,K] logits differentiably, in
// inference mode. Implementations are immutable during use.
class LogitModel {
 public:
  virtual ~LogitModel() = default;
  virtual Tensor logits(const Tensor& batch) const = 0;
  virtual InputGeometry input_geometry() const = 0;
  virtual int num_classes() const = 0;
  virtual std::string name() const = 0;
};

// Argmax with ties broken towards the lowest index.
inline int argmax(std::span<const double> scores) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

Tensor batch_tensor(std::span<const Image> images);
Tensor batch_tensor(const Image& image);

std::vector<double> logits_of(const LogitModel& g, const Image& x);
int predict(const LogitModel& g, const Image& x);
std::vector<int> predict_batch(const LogitModel& g, std::span<const Image> images, int chunk = 64);

}  // namespace stadv

#endif  // STADV_CLASSIFIER_HPP
