#include "doctest.h"
#include "gradcheck.hpp"
#include "linear_model.hpp"

#include "stadv/attacks.hpp"
#include "stadv/defenses.hpp"
#include "stadv/warp.hpp"

#include <random>
#include <set>

using namespace stadv;
using Eigen::ArrayXd;
using stadv::testing::LinearModel;

namespace {

Image random_image(unsigned seed, int side = 8) {
  std::mt19937_64 rng(seed);
  Image x(side, side, 1);
  x.pixels = testing::uniform(x.pixels.size(), 0.0, 1.0, rng);
  return x;
}

// Smooth blob so that spatial moves change the logits.
Image blob(int side = 8) {
  Image x(side, side, 1);
  for (int u = 0; u < side; ++u)
    for (int v = 0; v < side; ++v) {
      const double du = u - side / 2.0 + 0.5, dv = v - side / 2.0 + 1.5;
      x(u, v) = std::exp(-(du * du + dv * dv) / 6.0);
    }
  return x;
}

}  // namespace

TEST_CASE("FGSM with epsilon 0 returns the input") {
  LinearModel g(1);
  const Image x = random_image(2);
  const AttackOutcome o = fgsm_attack(g, x, AttackGoal::untargeted(predict(g, x)), 0.0);
  CHECK(o.adversarial.pixels.isApprox(x.pixels, 0.0));
  CHECK(o.linf == 0.0);
}

TEST_CASE("FGSM stays inside the L-infinity ball and the pixel range") {
  for (unsigned s = 0; s < 10; ++s) {
    LinearModel g(s);
    const Image x = random_image(100 + s);
    for (double eps : {0.01, 0.1, 0.3}) {
      const AttackOutcome u = fgsm_attack(g, x, AttackGoal::untargeted(predict(g, x)), eps);
      const AttackOutcome t = fgsm_attack(g, x, AttackGoal::targeted(3, predict(g, x)), eps);
      for (const AttackOutcome* o : {&u, &t}) {
        CHECK((o->adversarial.pixels - x.pixels).abs().maxCoeff() <= eps + 1e-15);
        CHECK(o->adversarial.pixels.minCoeff() >= 0.0);
        CHECK(o->adversarial.pixels.maxCoeff() <= 1.0);
      }
    }
  }
}

TEST_CASE("FGSM on a two-class linear model matches the hand-computed sign step") {
  // d CE / dx = p_o (w_o - w_y), so the ascent direction is sign(w_o - w_y).
  std::mt19937_64 rng(5);
  const Tensor w({64, 2}, testing::uniform(128, -1, 1, rng));
  LinearModel g(w);
  Image x(8, 8, 1, 0.5);
  const int y = predict(g, x);
  const int other = 1 - y;
  const double eps = 0.1;
  const AttackOutcome o = fgsm_attack(g, x, AttackGoal::untargeted(y), eps);
  for (int i = 0; i < 64; ++i) {
    const double d = w.value()[i * 2 + other] - w.value()[i * 2 + y];
    const double expect = 0.5 + eps * ((d > 0) - (d < 0));
    CHECK(o.adversarial.pixels[i] == doctest::Approx(expect).epsilon(1e-15));
  }
  // Targeting the other class descends its loss: the same direction.
  const AttackOutcome t = fgsm_attack(g, x, AttackGoal::targeted(other, y), eps);
  CHECK(t.adversarial.pixels.isApprox(o.adversarial.pixels, 0.0));
}

TEST_CASE("PGD with one full step from the clean input equals FGSM") {
  LinearModel g(9);
  const Image x = random_image(10);
  const AttackGoal goal = AttackGoal::untargeted(predict(g, x));
  PgdConfig cfg;
  cfg.epsilon = 0.2;
  cfg.steps = 1;
  cfg.step_size = 0.2;
  cfg.random_start = false;
  const AttackOutcome p = pgd_attack(g, x, goal, cfg);
  const AttackOutcome f = fgsm_attack(g, x, goal, 0.2);
  CHECK(p.adversarial.pixels.isApprox(f.adversarial.pixels, 0.0));
}

TEST_CASE("PGD respects its budget and is seed-deterministic") {
  LinearModel g(11);
  const Image x = random_image(12);
  PgdConfig cfg;
  cfg.epsilon = 0.05;
  cfg.seed = 4;
  const AttackGoal goal = AttackGoal::untargeted(predict(g, x));
  const AttackOutcome a = pgd_attack(g, x, goal, cfg), b = pgd_attack(g, x, goal, cfg);
  CHECK(a.adversarial.pixels.isApprox(b.adversarial.pixels, 0.0));
  CHECK(a.linf <= 0.05 + 1e-15);
}

TEST_CASE("batched FGSM equals per-image FGSM") {
  LinearModel g(13);
  std::vector<Image> imgs{random_image(1), random_image(2), random_image(3)};
  std::vector<int> labels;
  for (const auto& x : imgs) labels.push_back(predict(g, x));
  const Tensor adv = fgsm_batch(g, batch_tensor(imgs), labels, 0.1);
  for (int i = 0; i < 3; ++i) {
    const AttackOutcome o = fgsm_attack(g, imgs[i], AttackGoal::untargeted(labels[i]), 0.1);
    CHECK(adv.value().segment(64 * i, 64).isApprox(o.adversarial.pixels, 0.0));
  }
}

TEST_CASE("stAdv on an already-misclassified input keeps zero flow") {
  LinearModel g(21);
  const Image x = random_image(22);
  const int pred = predict(g, x);
  AttackObjectiveConfig cfg;
  cfg.goal = AttackGoal::untargeted((pred + 1) % 4);
  const AttackOutcome o = stadv_attack(g, x, cfg);
  CHECK(o.success);
  REQUIRE(o.flow);
  CHECK(o.flow->values.abs().maxCoeff() == 0.0);
  // Only the smoothing floor of the flow term remains.
  CHECK(o.objective_trace.front() == doctest::Approx(cfg.tau * flow_loss(FlowField(8, 8))));
  CHECK(o.objective_trace.front() < 2e-3);
  CHECK(o.adversarial.pixels.isApprox(x.pixels, 0.0));
}

TEST_CASE("stAdv with a huge tau returns near-zero flow and fails") {
  LinearModel g(23, 4, 8, 3.0);
  const Image x = blob();
  const int y = predict(g, x);
  const auto z = logits_of(g, x);
  int target = y == 0 ? 1 : 0;
  for (int k = 0; k < 4; ++k)
    if (k != y && z[k] < z[target]) target = k;  // weakest class: confidently not chosen
  AttackObjectiveConfig cfg;
  cfg.tau = 1e6;
  cfg.goal = AttackGoal::targeted(target, y);
  const AttackOutcome o = stadv_attack(g, x, cfg);
  REQUIRE(o.flow);
  CHECK(o.flow->values.abs().maxCoeff() < 1e-3);
  CHECK_FALSE(o.success);
}

TEST_CASE("stAdv reports success consistent with a fresh prediction") {
  for (unsigned s = 0; s < 6; ++s) {
    LinearModel g(30 + s, 4, 8, 2.0);
    const Image x = blob();
    const int y = predict(g, x);
    AttackObjectiveConfig cfg;
    cfg.tau = 0.005;
    cfg.goal = AttackGoal::targeted((y + 1 + s % 3) % 4, y);
    LbfgsConfig solver;
    solver.max_iterations = 100;
    const AttackOutcome o = stadv_attack(g, x, cfg, solver);
    REQUIRE(o.flow);
    CHECK(o.success == cfg.goal.achieved(predict(g, o.adversarial)));
    CHECK(o.adversarial.pixels.isApprox(bilinear_warp(x, *o.flow).pixels, 0.0));
    CHECK(o.flow_tv == flow_tv_metric(*o.flow));
    CHECK(o.tau == 0.005);
    // Convexity: warped pixels stay inside the input's range.
    CHECK(o.adversarial.pixels.minCoeff() >= x.pixels.minCoeff());
    CHECK(o.adversarial.pixels.maxCoeff() <= x.pixels.maxCoeff());
    CHECK(o.error.empty());
  }
}

TEST_CASE("stAdv reports a non-finite model instead of throwing") {
  class NanModel : public LogitModel {
   public:
    Tensor logits(const Tensor& b) const override {
      return Tensor({b.dim(0), 2}, ArrayXd::Constant(2 * b.dim(0), std::nan("")));
    }
    InputGeometry input_geometry() const override { return {8, 8, 1}; }
    int num_classes() const override { return 2; }
    std::string name() const override { return "nan"; }
  } g;
  AttackObjectiveConfig cfg;
  cfg.goal = AttackGoal::targeted(1, 0);
  AttackOutcome o;
  CHECK_NOTHROW(o = stadv_attack(g, random_image(1), cfg));
  CHECK_FALSE(o.success);
  CHECK_FALSE(o.error.empty());
}

TEST_CASE("grid search over {0.05} reduces to a single stAdv run") {
  LinearModel g(41, 4, 8, 2.0);
  const Image x = blob();
  const int y = predict(g, x);
  AttackObjectiveConfig cfg;
  cfg.goal = AttackGoal::targeted((y + 2) % 4, y);
  LbfgsConfig solver;
  solver.max_iterations = 60;
  const std::vector<double> grid{0.05};
  const AttackOutcome a = stadv_attack(g, x, cfg, solver);
  const AttackOutcome b = stadv_attack_gridsearch(g, x, cfg, grid, solver);
  REQUIRE(a.flow);
  REQUIRE(b.flow);
  CHECK(a.flow->values.isApprox(b.flow->values, 0.0));
  CHECK(a.success == b.success);
  CHECK(a.objective_trace == b.objective_trace);
}

TEST_CASE("grid search returns the smoothest success") {
  LinearModel g(43, 4, 8, 2.0);
  const Image x = blob();
  const int y = predict(g, x);
  AttackObjectiveConfig cfg;
  cfg.goal = AttackGoal::targeted((y + 1) % 4, y);
  LbfgsConfig solver;
  solver.max_iterations = 60;
  std::vector<AttackOutcome> all;
  const auto grid = default_tau_grid();
  const AttackOutcome best = stadv_attack_gridsearch(g, x, cfg, grid, solver, &all);
  REQUIRE(all.size() == grid.size());
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i].tau < all[i - 1].tau);
  bool any = false;
  for (const auto& o : all) {
    if (!o.success) continue;
    any = true;
    CHECK(best.flow_tv <= o.flow_tv);
  }
  CHECK(best.success == any);
  if (!any) {
    for (const auto& o : all) CHECK(best.adv_loss <= o.adv_loss);
  }
  CHECK_THROWS_AS(stadv_attack_gridsearch(g, x, cfg, std::vector<double>{}, solver), ValueError);
}

TEST_CASE("default tau grid is 10 log-spaced values from 0.05 to 0.0005") {
  const auto grid = default_tau_grid();
  REQUIRE(grid.size() == 10);
  CHECK(grid.front() == doctest::Approx(0.05));
  CHECK(grid.back() == doctest::Approx(0.0005));
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] / grid[i - 1] == doctest::Approx(std::pow(0.01, 1.0 / 9)));
}

TEST_CASE("C&W on an already-successful input barely moves it") {
  LinearModel g(51);
  const Image x = random_image(52);
  const int pred = predict(g, x);
  const AttackOutcome o = cw_attack(g, x, AttackGoal::untargeted((pred + 1) % 4));
  CHECK(o.success);
  CHECK(o.l2 <= 1e-3);
}

TEST_CASE("C&W finds small targeted perturbations and honours an L-infinity bound") {
  for (unsigned s = 0; s < 4; ++s) {
    LinearModel g(60 + s);
    Image x = random_image(70 + s);
    x.pixels = 0.25 + 0.5 * x.pixels;  // keep away from the box edges
    const int y = predict(g, x);
    const AttackGoal goal = AttackGoal::targeted((y + 1) % 4, y);
    const AttackOutcome free = cw_attack(g, x, goal);
    CHECK(free.success);
    CHECK(free.success == goal.achieved(predict(g, free.adversarial)));
    CwConfig bounded;
    bounded.linf_bound = 0.05;
    const AttackOutcome b = cw_attack(g, x, goal, bounded);
    CHECK(b.linf <= 0.05 + 1e-12);
    CHECK(b.adversarial.pixels.minCoeff() >= 0.0);
    CHECK(b.adversarial.pixels.maxCoeff() <= 1.0);
  }
}

TEST_CASE("blur composite: input gradient matches finite differences") {
  LinearModel inner(81);
  const BlurredModel g(inner);
  CHECK(g.name() == "linear8+blur");
  std::mt19937_64 rng(82);
  for (int trial = 0; trial < 5; ++trial) {
    const ArrayXd x0 = testing::uniform(64, 0, 1, rng);
    const ArrayXd wts = testing::uniform(4, -1, 1, rng);
    auto f = [&](const ArrayXd& x) {
      const Tensor z = g.logits(Tensor({1, 8, 8, 1}, x));
      return (z.value() * wts).sum();
    };
    ArrayXd analytic;
    {
      Tape tape;
      Tensor xt({1, 8, 8, 1}, x0, true);
      tape.backward(sum(mul(g.logits(xt), Tensor({1, 4}, wts))));
      analytic = xt.grad();
    }
    CHECK(testing::compare_gradients(analytic, testing::central_differences(f, x0, 1e-4)).max_rel <= 1e-6);
  }
}

TEST_CASE("objective through the blur composite matches finite differences") {
  LinearModel inner(91, 4, 8, 2.0);
  const BlurredModel g(inner);
  const Image x = random_image(92);
  std::mt19937_64 rng(93);
  AttackObjectiveConfig cfg;
  cfg.kappa = -100.0;  // keep the margin branch smooth
  cfg.goal = AttackGoal::targeted(2, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const ArrayXd f0 = testing::uniform_off_grid(128, -1.5, 1.5, 0.05, rng);
    auto f = [&](const ArrayXd& v) { return total_objective(x, flow_from_values(8, 8, v), g, cfg).value; };
    const ArrayXd analytic = total_objective(x, flow_from_values(8, 8, f0), g, cfg).gradient;
    CHECK(testing::compare_gradients(analytic, testing::central_differences(f, f0, 1e-5)).max_rel <= 1e-4);
  }
}

TEST_CASE("adaptive attack is judged on the composite") {
  LinearModel g(95, 4, 8, 2.0);
  const Image x = blob();
  const BlurredModel composite(g);
  const int y = predict(composite, x);
  AttackObjectiveConfig cfg;
  cfg.tau = 0.005;
  cfg.goal = AttackGoal::targeted((y + 1) % 4, y);
  LbfgsConfig solver;
  solver.max_iterations = 60;
  const AttackOutcome o = adaptive_blur_attack(g, x, cfg, solver);
  CHECK(o.method == "stadv_adaptive_blur");
  CHECK(o.model == "linear8+blur");
  CHECK(o.success == cfg.goal.achieved(predict(composite, o.adversarial)));
}

TEST_CASE("random targets avoid the true class and cover the rest") {
  std::mt19937_64 rng(7);
  std::set<int> seen;
  for (int i = 0; i < 500; ++i) {
    const int t = draw_target(3, 10, rng);
    CHECK(t != 3);
    CHECK(t >= 0);
    CHECK(t < 10);
    seen.insert(t);
  }
  CHECK(seen.size() == 9);
  CHECK_THROWS_AS(draw_target(10, 10, rng), ValueError);
}

TEST_CASE("attacks reject mismatched geometry") {
  LinearModel g(1);
  const Image wrong(9, 9, 1);
  CHECK_THROWS_AS(fgsm_attack(g, wrong, AttackGoal::untargeted(0), 0.1), ShapeError);
  AttackObjectiveConfig cfg;
  cfg.goal = AttackGoal::targeted(1, 0);
  CHECK_THROWS_AS(stadv_attack(g, wrong, cfg), ShapeError);
  CHECK_THROWS_AS(fgsm_attack(g, Image(8, 8, 1), AttackGoal::untargeted(0), -0.1), ValueError);
}
