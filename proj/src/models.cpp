#include "stadv/models.hpp"

#include "stadv/error.hpp"

#include <cmath>
#include <sstream>

namespace stadv {

namespace {

LayerSpec spec(LayerKind kind) {
  LayerSpec l;
  l.kind = kind;
  return l;
}

LayerSpec conv(int filters, int kernel, int padding = 0) {
  LayerSpec l = spec(LayerKind::conv);
  l.units = filters;
  l.kernel = kernel;
  l.padding = padding;
  return l;
}
LayerSpec dense(int units) {
  LayerSpec l = spec(LayerKind::dense);
  l.units = units;
  return l;
}
LayerSpec relu_layer() { return spec(LayerKind::relu); }
LayerSpec flatten() { return spec(LayerKind::flatten); }
LayerSpec dropout_layer(double p) {
  LayerSpec l = spec(LayerKind::dropout);
  l.drop = p;
  return l;
}
LayerSpec residual(int channels) {
  LayerSpec l = spec(LayerKind::residual_block);
  l.units = channels;
  l.kernel = 3;
  l.padding = 1;
  return l;
}
LayerSpec avgpool(int window) {
  LayerSpec l = spec(LayerKind::avgpool);
  l.kernel = window;
  l.stride = window;
  return l;
}
LayerSpec global_avgpool() { return spec(LayerKind::global_avgpool); }

std::string chain_error(const std::string& arch, std::size_t index, const std::string& what) {
  return arch + ": layer " + std::to_string(index) + ": " + what;
}

bool needs_projection(const LayerSpec& l) { return l.in_shape[0] != l.units; }

Tensor kaiming(Shape shape, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.value_mut()[i] = dist(rng);
  return t;
}

std::string format_real(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

Classifier::Classifier(std::string architecture, InputGeometry geometry, int num_classes,
                       std::vector<LayerSpec> layers, std::uint64_t seed)
    : architecture_(std::move(architecture)), geometry_(geometry), num_classes_(num_classes),
      layers_(std::move(layers)) {
  if (geometry.height <= 0 || geometry.width <= 0 || geometry.channels <= 0 || num_classes < 2) {
    throw ShapeError(architecture_ + ": invalid input geometry or class count");
  }
  std::mt19937_64 rng(seed);
  Shape shape{geometry.channels, geometry.height, geometry.width};
  int conv_index = 0, dense_index = 0, block_index = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerSpec& l = layers_[i];
    l.in_shape = shape;
    const bool spatial = shape.size() == 3;
    switch (l.kind) {
      case LayerKind::conv: {
        if (!spatial) throw ShapeError(chain_error(architecture_, i, "conv needs a [C,H,W] input"));
        const int oh = shape[1] + 2 * l.padding - l.kernel + 1;
        const int ow = shape[2] + 2 * l.padding - l.kernel + 1;
        if (oh <= 0 || ow <= 0) {
          throw ShapeError(chain_error(architecture_, i, "kernel larger than input " + shape_string(shape)));
        }
        l.name = "conv" + std::to_string(++conv_index);
        params_[l.name + ".w"] = kaiming({l.units, shape[0], l.kernel, l.kernel}, shape[0] * l.kernel * l.kernel, rng);
        params_[l.name + ".b"] = Tensor::zeros({l.units});
        shape = {l.units, oh, ow};
        break;
      }
      case LayerKind::dense: {
        if (spatial) throw ShapeError(chain_error(architecture_, i, "dense needs a flat input; add flatten"));
        l.name = "fc" + std::to_string(++dense_index);
        params_[l.name + ".w"] = kaiming({shape[0], l.units}, shape[0], rng);
        params_[l.name + ".b"] = Tensor::zeros({l.units});
        shape = {l.units};
        break;
      }
      case LayerKind::residual_block: {
        if (!spatial) throw ShapeError(chain_error(architecture_, i, "residual block needs a [C,H,W] input"));
        l.name = "block" + std::to_string(++block_index);
        const int in_c = shape[0];
        params_[l.name + ".conv1.w"] = kaiming({l.units, in_c, 3, 3}, in_c * 9, rng);
        params_[l.name + ".conv1.b"] = Tensor::zeros({l.units});
        params_[l.name + ".conv2.w"] = kaiming({l.units, l.units, 3, 3}, l.units * 9, rng);
        // Second conv starts small so each block begins close to its shortcut.
        params_[l.name + ".conv2.w"].value_mut() *= 0.1;
        params_[l.name + ".conv2.b"] = Tensor::zeros({l.units});
        if (needs_projection(l)) {
          params_[l.name + ".proj.w"] = kaiming({l.units, in_c, 1, 1}, in_c, rng);
          params_[l.name + ".proj.b"] = Tensor::zeros({l.units});
        }
        shape = {l.units, shape[1], shape[2]};
        break;
      }
      case LayerKind::avgpool: {
        if (!spatial || l.kernel > shape[1] || l.kernel > shape[2]) {
          throw ShapeError(chain_error(architecture_, i, "pool window does not fit " + shape_string(shape)));
        }
        shape = {shape[0], (shape[1] - l.kernel) / l.stride + 1, (shape[2] - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::global_avgpool:
        if (!spatial) throw ShapeError(chain_error(architecture_, i, "global pool needs a [C,H,W] input"));
        if (shape[1] != shape[2]) throw ShapeError(chain_error(architecture_, i, "global pool needs square maps"));
        l.kernel = shape[1];
        l.stride = shape[1];
        shape = {shape[0]};
        break;
      case LayerKind::flatten:
        shape = {static_cast<int>(numel(shape))};
        break;
      case LayerKind::relu:
        break;
      case LayerKind::dropout:
        if (l.drop < 0.0 || l.drop >= 1.0) throw ValueError(chain_error(architecture_, i, "dropout outside [0,1)"));
        break;
    }
    l.out_shape = shape;
  }
  if (shape != Shape{num_classes}) {
    throw ShapeError(architecture_ + ": final layer produces " + shape_string(shape) + ", expected [" +
                     std::to_string(num_classes) + "]");
  }
}

const Tensor& Classifier::param(const std::string& key) const {
  auto it = params_.find(key);
  if (it == params_.end()) throw Error(architecture_ + ": missing parameter " + key);
  return it->second;
}

Tensor Classifier::forward(const Tensor& batch, Mode mode, std::mt19937_64* rng) const {
  if (batch.rank() != 4 || batch.dim(1) != geometry_.height || batch.dim(2) != geometry_.width ||
      batch.dim(3) != geometry_.channels) {
    throw ShapeError(architecture_ + " expects [N," + std::to_string(geometry_.height) + "," +
                     std::to_string(geometry_.width) + "," + std::to_string(geometry_.channels) + "], got " +
                     shape_string(batch.shape()));
  }
  const bool train = mode == Mode::train;
  if (train && rng == nullptr) throw ValueError("train-mode forward needs a random generator");
  const int n = batch.dim(0);
  Tensor h = nhwc_to_nchw(batch);
  for (const LayerSpec& l : layers_) {
    switch (l.kind) {
      case LayerKind::conv:
        h = add_channel_bias(conv2d(h, param(l.name + ".w"), 1, l.padding), param(l.name + ".b"));
        break;
      case LayerKind::dense:
        h = add_channel_bias(matmul(h, param(l.name + ".w")), param(l.name + ".b"));
        break;
      case LayerKind::relu:
        h = relu(h);
        break;
      case LayerKind::dropout:
        h = dropout(h, l.drop, train, *rng);
        break;
      case LayerKind::flatten:
        h = reshape(h, Shape{n, l.out_shape[0]});
        break;
      case LayerKind::avgpool:
        h = avgpool2d(h, l.kernel, l.stride);
        break;
      case LayerKind::global_avgpool:
        h = reshape(avgpool2d(h, l.kernel, l.stride), Shape{n, l.out_shape[0]});
        break;
      case LayerKind::residual_block: {
        Tensor a = relu(add_channel_bias(conv2d(h, param(l.name + ".conv1.w"), 1, 1), param(l.name + ".conv1.b")));
        Tensor b = add_channel_bias(conv2d(a, param(l.name + ".conv2.w"), 1, 1), param(l.name + ".conv2.b"));
        Tensor shortcut = needs_projection(l)
                              ? add_channel_bias(conv2d(h, param(l.name + ".proj.w")), param(l.name + ".proj.b"))
                              : h;
        h = relu(add(b, shortcut));
        break;
      }
    }
  }
  return h;
}

std::vector<std::string> Classifier::describe() const {
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const bool then_relu = i + 1 < layers_.size() && layers_[i + 1].kind == LayerKind::relu;
    std::string row;
    switch (l.kind) {
      case LayerKind::conv:
        row = "Conv(" + std::to_string(l.units) + "," + std::to_string(l.kernel) + "," + std::to_string(l.kernel) + ")";
        break;
      case LayerKind::dense:
        row = "FC(" + std::to_string(l.units) + ")";
        if (i + 1 == layers_.size()) row += " + Softmax";
        break;
      case LayerKind::dropout:
        row = "Dropout(" + format_real(l.drop) + ")";
        break;
      case LayerKind::residual_block:
        row = "ResBlock(" + std::to_string(l.units) + ")";
        break;
      case LayerKind::avgpool:
        row = "AvgPool(" + std::to_string(l.kernel) + ")";
        break;
      case LayerKind::global_avgpool:
        row = "GlobalAvgPool";
        break;
      case LayerKind::relu:
      case LayerKind::flatten:
        continue;
    }
    if (then_relu) {
      row += " + Relu";
      ++i;
    }
    rows.push_back(row);
  }
  return rows;
}

std::size_t Classifier::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [key, t] : params_) total += static_cast<std::size_t>(t.size());
  return total;
}

void Classifier::set_trainable(bool on) {
  for (auto& [key, t] : params_) {
    t.set_requires_grad(on);
    if (!on) t.zero_grad();
  }
}

Classifier Classifier::clone() const {
  Classifier copy = *this;
  for (auto& [key, t] : copy.params_) t = t.detach();
  return copy;
}

Classifier build_model(std::string_view name, std::uint64_t seed) {
  const InputGeometry mnist{28, 28, 1};
  if (name == "A") {
    return Classifier("A", mnist, 10,
                      {conv(64, 5), relu_layer(), conv(64, 5), relu_layer(), dropout_layer(0.25), flatten(),
                       dense(128), relu_layer(), dropout_layer(0.5), dense(10)},
                      seed);
  }
  if (name == "B") {
    return Classifier("B", mnist, 10,
                      {conv(64, 8), relu_layer(), dropout_layer(0.2), conv(128, 6), relu_layer(), conv(128, 5),
                       relu_layer(), dropout_layer(0.5), flatten(), dense(10)},
                      seed);
  }
  if (name == "C") {
    return Classifier("C", mnist, 10,
                      {conv(128, 3), relu_layer(), conv(64, 3), relu_layer(), dropout_layer(0.25), flatten(),
                       dense(128), relu_layer(), dropout_layer(0.5), dense(10)},
                      seed);
  }
  if (name == "resnet_small") {
    return Classifier("resnet_small", InputGeometry{32, 32, 3}, 10,
                      {conv(16, 3, 1), relu_layer(), residual(16), avgpool(2), residual(32), avgpool(2), residual(64),
                       global_avgpool(), dense(10)},
                      seed);
  }
  throw ValueError("unknown model '" + std::string(name) + "' (expected A, B, C or resnet_small)");
}

std::vector<std::string> model_names() { return {"A", "B", "C", "resnet_small"}; }

}  // namespace stadv
