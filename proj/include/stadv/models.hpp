#ifndef STADV_MODELS_HPP
#define STADV_MODELS_HPP

#include "stadv/classifier.hpp"
#include "stadv/tensor.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace stadv {

enum class Mode { train, eval };

enum class LayerKind { conv, dense, relu, dropout, flatten, residual_block, avgpool, global_avgpool };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int units = 0;    // conv filters, dense outputs, residual block channels
  int kernel = 0;   // conv kernel size, pooling window
  int stride = 1;
  int padding = 0;
  double drop = 0.0;
  std::string name;  // parameter prefix
  Shape in_shape;    // per-sample shape entering the layer ([C,H,W] or [D])
  Shape out_shape;
};

// Layer list + named weights. Copies share weight storage; use clone() for
// an independent model.
class Classifier : public LogitModel {
 public:
  Classifier(std::string architecture, InputGeometry geometry, int num_classes, std::vector<LayerSpec> layers,
             std::uint64_t seed);

  Tensor logits(const Tensor& batch) const override { return forward(batch, Mode::eval, nullptr); }
  Tensor forward(const Tensor& batch, Mode mode, std::mt19937_64* rng) const;

  InputGeometry input_geometry() const override { return geometry_; }
  int num_classes() const override { return num_classes_; }
  std::string name() const override { return architecture_; }
  const std::string& architecture() const { return architecture_; }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  // One row per architectural unit, e.g. "Conv(64,5,5) + Relu".
  std::vector<std::string> describe() const;

  std::map<std::string, Tensor>& parameters() { return params_; }
  const std::map<std::string, Tensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  void set_trainable(bool on);

  double pixel_lo = 0.0;
  double pixel_hi = 1.0;

  Classifier clone() const;

 private:
  const Tensor& param(const std::string& key) const;

  std::string architecture_;
  InputGeometry geometry_;
  int num_classes_;
  std::vector<LayerSpec> layers_;
  std::map<std::string, Tensor> params_;
};

// "A", "B", "C" (MNIST, 28x28x1) or "resnet_small" (32x32x3).
Classifier build_model(std::string_view name, std::uint64_t seed = 0);
std::vector<std::string> model_names();

}  // namespace stadv

#endif  // STADV_MODELS_HPP
