#include "doctest.h"
#include "gradcheck.hpp"

#include "stadv/models.hpp"

#include <random>

using namespace stadv;
using Eigen::ArrayXd;

namespace {

Tensor random_batch(int n, InputGeometry g, std::mt19937_64& rng) {
  return Tensor({n, g.height, g.width, g.channels},
                stadv::testing::uniform(Eigen::Index(n) * g.height * g.width * g.channels, 0, 1, rng));
}

// Gradient of sum(logits) w.r.t. the input, checked on a sample of coordinates.
double input_gradient_error(const Classifier& m, int coords, unsigned seed) {
  std::mt19937_64 rng(seed);
  Tensor x = random_batch(1, m.input_geometry(), rng);
  Tape tape;
  Tensor xt(x.shape(), x.value(), true);
  tape.backward(sum(m.logits(xt)));
  const ArrayXd analytic = xt.grad();

  std::uniform_int_distribution<Eigen::Index> pick(0, x.size() - 1);
  ArrayXd a(coords), n(coords);
  const double h = 1e-5;
  for (int k = 0; k < coords; ++k) {
    const Eigen::Index i = pick(rng);
    ArrayXd probe = x.value();
    probe[i] += h;
    const double up = m.logits(Tensor(x.shape(), probe)).value().sum();
    probe[i] -= 2 * h;
    const double down = m.logits(Tensor(x.shape(), probe)).value().sum();
    a[k] = analytic[i];
    n[k] = (up - down) / (2 * h);
  }
  return stadv::testing::compare_gradients(a, n).max_rel;
}

}  // namespace

TEST_CASE("Model A layer table") {
  const std::vector<std::string> expected{"Conv(64,5,5) + Relu", "Conv(64,5,5) + Relu", "Dropout(0.25)",
                                          "FC(128) + Relu",      "Dropout(0.5)",        "FC(10) + Softmax"};
  CHECK(build_model("A").describe() == expected);
}

TEST_CASE("Model B and C layer tables") {
  const std::vector<std::string> b{"Conv(64,8,8) + Relu",    "Dropout(0.2)", "Conv(128,6,6) + Relu",
                                   "Conv(128,5,5) + Relu", "Dropout(0.5)", "FC(10) + Softmax"};
  CHECK(build_model("B").describe() == b);
  const std::vector<std::string> c{"Conv(128,3,3) + Relu", "Conv(64,3,3) + Relu", "Dropout(0.25)",
                                   "FC(128) + Relu",       "Dropout(0.5)",        "FC(10) + Softmax"};
  CHECK(build_model("C").describe() == c);

  int dense_layers = 0;
  for (const LayerSpec& l : build_model("B").layers()) dense_layers += l.kind == LayerKind::dense;
  CHECK(dense_layers == 1);
}

TEST_CASE("shape chains are validated at construction") {
  for (const std::string& name : model_names()) {
    Classifier m = build_model(name, 1);
    const auto& layers = m.layers();
    for (std::size_t i = 1; i < layers.size(); ++i) CHECK(layers[i].in_shape == layers[i - 1].out_shape);
    CHECK(layers.back().out_shape == Shape{m.num_classes()});
  }
  LayerSpec wide;
  wide.kind = LayerKind::conv;
  wide.units = 4;
  wide.kernel = 40;
  CHECK_THROWS_AS(Classifier("bad", {28, 28, 1}, 10, {wide}, 0), ShapeError);
  LayerSpec fc;
  fc.kind = LayerKind::dense;
  fc.units = 10;
  CHECK_THROWS_AS(Classifier("noflatten", {28, 28, 1}, 10, {fc}, 0), ShapeError);
  CHECK_THROWS_AS(build_model("D"), ValueError);
}

TEST_CASE("residual network stays small") {
  Classifier r = build_model("resnet_small", 3);
  CHECK(r.parameter_count() <= 500000);
  CHECK(r.input_geometry() == InputGeometry{32, 32, 3});
  std::mt19937_64 rng(4);
  CHECK(r.logits(random_batch(2, r.input_geometry(), rng)).shape() == Shape{2, 10});
}

TEST_CASE("eval mode is deterministic") {
  Classifier m = build_model("C", 5);
  std::mt19937_64 rng(6);
  Tensor one = random_batch(1, m.input_geometry(), rng);
  ArrayXd twice(one.size() * 2);
  twice << one.value(), one.value();
  Tensor z = m.logits(Tensor({2, 28, 28, 1}, twice));
  CHECK((z.value().head(10) == z.value().tail(10)).all());
  CHECK((m.logits(one).value() == m.logits(one).value()).all());
}

TEST_CASE("train mode applies dropout reproducibly") {
  Classifier m = build_model("A", 7);
  std::mt19937_64 data(8);
  Tensor x = random_batch(2, m.input_geometry(), data);
  std::mt19937_64 r1(9), r2(9);
  Tensor a = m.forward(x, Mode::train, &r1);
  Tensor b = m.forward(x, Mode::train, &r2);
  CHECK((a.value() == b.value()).all());
  CHECK((a.value() != m.logits(x).value()).any());
  CHECK_THROWS_AS(m.forward(x, Mode::train, nullptr), ValueError);
}

TEST_CASE("input gradients agree with finite differences") {
  CHECK(input_gradient_error(build_model("A", 10), 24, 11) <= 1e-4);
  CHECK(input_gradient_error(build_model("B", 12), 24, 13) <= 1e-4);
  CHECK(input_gradient_error(build_model("resnet_small", 14), 24, 15) <= 1e-4);
}

TEST_CASE("weight gradients agree with finite differences") {
  Classifier m = build_model("C", 16);
  std::mt19937_64 rng(17);
  Tensor x = random_batch(2, m.input_geometry(), rng);
  const std::vector<int> labels{3, 8};
  m.set_trainable(true);
  {
    Tape tape;
    tape.backward(cross_entropy(m.logits(x), labels));
  }
  for (const char* key : {"conv1.w", "conv2.b", "fc1.w", "fc2.b"}) {
    Tensor& w = m.parameters().at(key);
    std::uniform_int_distribution<Eigen::Index> pick(0, w.size() - 1);
    ArrayXd a(6), n(6);
    for (int k = 0; k < 6; ++k) {
      const Eigen::Index i = pick(rng);
      const double saved = w.value()[i];
      w.value_mut()[i] = saved + 1e-5;
      const double up = cross_entropy(m.logits(x), labels).item();
      w.value_mut()[i] = saved - 1e-5;
      const double down = cross_entropy(m.logits(x), labels).item();
      w.value_mut()[i] = saved;
      a[k] = w.grad()[i];
      n[k] = (up - down) / 2e-5;
    }
    CHECK_MESSAGE(stadv::testing::compare_gradients(a, n).max_rel <= 1e-4, key);
  }
  m.set_trainable(false);
}

TEST_CASE("clone is independent, copies share weights") {
  Classifier m = build_model("A", 18);
  Classifier shared = m;
  Classifier deep = m.clone();
  m.parameters().at("fc2.b").value_mut()[0] = 5.0;
  CHECK(shared.parameters().at("fc2.b").value()[0] == 5.0);
  CHECK(deep.parameters().at("fc2.b").value()[0] == 0.0);
}

TEST_CASE("seeded initialisation") {
  CHECK((build_model("A", 3).parameters().at("conv1.w").value() ==
         build_model("A", 3).parameters().at("conv1.w").value())
            .all());
  CHECK((build_model("A", 3).parameters().at("conv1.w").value() !=
         build_model("A", 4).parameters().at("conv1.w").value())
            .any());
}

TEST_CASE("prediction and tie-break") {
  const std::vector<double> a{1, 9, 3}, tie{5, 5};
  CHECK(argmax(a) == 1);
  CHECK(argmax(tie) == 0);

  Classifier m = build_model("A", 19);
  std::mt19937_64 rng(20);
  std::vector<Image> images;
  for (int i = 0; i < 5; ++i) {
    Image x(28, 28, 1);
    x.pixels = stadv::testing::uniform(784, 0, 1, rng);
    images.push_back(x);
  }
  const std::vector<int> batch = predict_batch(m, images, 2);
  for (int i = 0; i < 5; ++i) {
    const Tensor p = softmax(m.logits(batch_tensor(images[static_cast<std::size_t>(i)])));
    const std::vector<double> probs(p.value().data(), p.value().data() + 10);
    CHECK(batch[static_cast<std::size_t>(i)] == argmax(probs));
    CHECK(predict(m, images[static_cast<std::size_t>(i)]) == batch[static_cast<std::size_t>(i)]);
  }
  CHECK_THROWS_AS(m.logits(Tensor::zeros({1, 32, 32, 3})), ShapeError);
}
