#include "doctest.h"
#include "linear_model.hpp"

#include "stadv/dataset.hpp"
#include "stadv/models.hpp"
#include "stadv/trainer.hpp"

#include <random>

using namespace stadv;

namespace {

// Separable toy digits: class k lights up a k-dependent horizontal bar.
Dataset toy_digits(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.2);
  Dataset d;
  d.split = "toy";
  for (int i = 0; i < n; ++i) {
    const int k = i % 10;
    Image x(28, 28, 1);
    for (auto& p : x.pixels) p = noise(rng);
    for (int v = 4; v < 24; ++v) {
      x(2 + 2 * k, v) = 1.0;
      x(3 + 2 * k, v) = 1.0;
    }
    d.images.push_back(x);
    d.labels.push_back(k);
  }
  return d;
}

bool same_weights(const Classifier& a, const Classifier& b) {
  for (const auto& [k, t] : a.parameters())
    if (!t.value().isApprox(b.parameters().at(k).value(), 0.0)) return false;
  return true;
}

}  // namespace

TEST_CASE("zero epochs leaves the weights untouched") {
  Classifier g = build_model("C", 1);
  const Classifier before = g.clone();
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainReport r = train(g, toy_digits(20, 1), cfg);
  CHECK(r.epoch_loss.empty());
  CHECK(same_weights(g, before));
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
  const Dataset d = toy_digits(40, 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.seed = 9;
  Classifier a = build_model("C", 3), b = build_model("C", 3);
  train(a, d, cfg);
  train(b, d, cfg);
  CHECK(same_weights(a, b));
  cfg.seed = 10;
  Classifier c = build_model("C", 3);
  train(c, d, cfg);
  CHECK_FALSE(same_weights(a, c));
}

TEST_CASE("adversarial modes are reproducible too") {
  const Dataset d = toy_digits(16, 4);
  Classifier src = build_model("C", 8);
  for (AdversarialMode mode : {AdversarialMode::fgsm, AdversarialMode::pgd, AdversarialMode::ensemble}) {
    CAPTURE(to_string(mode));
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.mode = mode;
    cfg.pgd_steps = 2;
    cfg.ensemble_sources = {&src};
    Classifier a = build_model("C", 5), b = build_model("C", 5);
    const TrainReport ra = train(a, d, cfg);
    train(b, d, cfg);
    CHECK(same_weights(a, b));
    CHECK(ra.mode == mode);
    CHECK(std::isfinite(ra.epoch_loss[0]));
  }
}

TEST_CASE("overfitting 50 samples drives the loss down") {
  const Dataset d = load_mnist(STADV_DATA_DIR, "train").head(50);
  Classifier g = build_model("C", 11);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 50;  // full batch keeps the trace free of minibatch noise
  const TrainReport r = train(g, d, cfg, &d);
  for (double l : r.epoch_loss) MESSAGE(l);
  REQUIRE(r.epoch_loss.size() == 8);
  for (std::size_t e = 1; e < r.epoch_loss.size(); ++e) CHECK(r.epoch_loss[e] <= r.epoch_loss[e - 1]);
  CHECK(r.test_accuracy >= 0.9);
  CHECK(r.train_samples == 50);
}

TEST_CASE("SGD with momentum also trains") {
  const Dataset d = toy_digits(50, 7);
  Classifier g = build_model("C", 12);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 10;
  cfg.optimizer = Optimizer::sgd_momentum;
  cfg.learning_rate = 0.01;
  const TrainReport r = train(g, d, cfg);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());
}

TEST_CASE("training rejects bad inputs") {
  Classifier g = build_model("C", 1);
  TrainConfig cfg;
  CHECK_THROWS_AS(train(g, Dataset{}, cfg), ValueError);
  cfg.mode = AdversarialMode::ensemble;
  CHECK_THROWS_AS(train(g, toy_digits(4, 1), cfg), ValueError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(g, toy_digits(4, 1), cfg), ValueError);
  Dataset wrong;
  wrong.images.push_back(Image(8, 8, 1));
  wrong.labels.push_back(0);
  CHECK_THROWS_AS(train(g, wrong, TrainConfig{}), ShapeError);
}

TEST_CASE("mode and optimizer names round trip") {
  for (auto m : {AdversarialMode::none, AdversarialMode::fgsm, AdversarialMode::ensemble, AdversarialMode::pgd})
    CHECK(parse_adversarial_mode(to_string(m)) == m);
  CHECK(parse_optimizer("adam") == Optimizer::adam);
  CHECK(parse_optimizer(to_string(Optimizer::sgd_momentum)) == Optimizer::sgd_momentum);
  CHECK_THROWS_AS(parse_adversarial_mode("cw"), ValueError);
}
