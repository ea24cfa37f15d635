#include "doctest.h"
#include "gradcheck.hpp"

#include "stadv/warp.hpp"

#include <algorithm>
#include <limits>
#include <random>

using namespace stadv;
using Eigen::ArrayXd;

namespace {

Image random_image(int h, int w, int c, std::mt19937_64& rng) {
  Image x(h, w, c);
  x.pixels = stadv::testing::uniform(x.pixels.size(), 0, 1, rng);
  return x;
}

FlowField random_flow(int h, int w, std::mt19937_64& rng, double margin = 1e-2) {
  FlowField f(h, w);
  f.values = stadv::testing::uniform_off_grid(f.values.size(), -2.0, 2.0, margin, rng);
  return f;
}

}  // namespace

TEST_CASE("zero flow reproduces the image bit for bit") {
  std::mt19937_64 rng(1);
  for (int c : {1, 3}) {
    Image x = random_image(7, 5, c, rng);
    Image y = bilinear_warp(x, FlowField(7, 5));
    CHECK((y.pixels == x.pixels).all());
    Tensor t = bilinear_warp(to_tensor(x), to_tensor(FlowField(7, 5)));
    CHECK((t.value() == x.pixels).all());
  }
}

TEST_CASE("hand-evaluated samples") {
  Image x(2, 2, 1);
  x.pixels << 1, 2, 3, 4;
  FlowField down(2, 2);
  for (int u = 0; u < 2; ++u)
    for (int v = 0; v < 2; ++v) down.du(u, v) = 1.0;
  Image y = bilinear_warp(x, down);
  ArrayXd expected(4);
  expected << 3, 4, 3, 4;
  CHECK((y.pixels == expected).all());

  Image row(1, 2, 1);
  row.pixels << 0, 1;
  FlowField half(1, 2);
  half.dv(0, 0) = 0.5;
  CHECK(bilinear_warp(row, half)(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("taped warp matches the scalar kernel") {
  std::mt19937_64 rng(2);
  Image x = random_image(6, 9, 3, rng);
  FlowField f(6, 9);
  f.values = stadv::testing::uniform(f.values.size(), -4, 4, rng);
  Image ref = bilinear_warp(x, f);
  Tensor t = bilinear_warp(to_tensor(x), to_tensor(f));
  CHECK((t.value() == ref.pixels).all());
}

TEST_CASE("flow gradient agrees with finite differences") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Image x = random_image(8, 8, trial % 2 ? 3 : 1, rng);
    WarpGradientReport r = warp_gradient_check(x, random_flow(8, 8, rng), 1e-3, 1e-4, 10 + trial);
    CHECK(r.passed);
    CHECK(r.max_rel_error <= 1e-4);
    CHECK(r.gradient_scale > 0.0);
  }
}

TEST_CASE("image gradient agrees with finite differences") {
  std::mt19937_64 rng(4);
  Image x = random_image(5, 6, 2, rng);
  FlowField f = random_flow(5, 6, rng);
  const ArrayXd w = stadv::testing::uniform(x.pixels.size(), -1, 1, rng);
  Tape tape;
  Tensor xt = to_tensor(x, true);
  tape.backward(sum(mul(bilinear_warp(xt, to_tensor(f)), Tensor({5, 6, 2}, w))));
  const ArrayXd numeric = stadv::testing::central_differences(
      [&](const ArrayXd& v) {
        Image probe = x;
        probe.pixels = v;
        return (bilinear_warp(probe, f).pixels * w).sum();
      },
      x.pixels);
  CHECK(stadv::testing::compare_gradients(xt.grad(), numeric).max_rel <= 1e-6);
}

TEST_CASE("flat images give zero flow gradients") {
  std::mt19937_64 rng(5);
  FlowField f = random_flow(8, 8, rng);
  for (double level : {0.0, 0.6}) {
    Image x(8, 8, 1, level);
    Tape tape;
    Tensor ft = to_tensor(f, true);
    tape.backward(sum(bilinear_warp(to_tensor(x), ft)));
    CHECK((ft.grad() == 0.0).all());
  }
}

TEST_CASE("convexity: output within the range of its four source neighbours") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Image x = random_image(9, 7, 2, rng);
    FlowField f(9, 7);
    f.values = stadv::testing::uniform(f.values.size(), -3, 3, rng);
    Image y = bilinear_warp(x, f);
    for (int u = 0; u < 9; ++u) {
      for (int v = 0; v < 7; ++v) {
        const auto s = bilinear_stencil(u, v, f.du(u, v), f.dv(u, v), 9, 7);
        for (int c = 0; c < 2; ++c) {
          const double lo = std::min({x(s.u0, s.v0, c), x(s.u0, s.v1, c), x(s.u1, s.v0, c), x(s.u1, s.v1, c)});
          const double hi = std::max({x(s.u0, s.v0, c), x(s.u0, s.v1, c), x(s.u1, s.v0, c), x(s.u1, s.v1, c)});
          CHECK(y(u, v, c) >= lo - 1e-15);
          CHECK(y(u, v, c) <= hi + 1e-15);
        }
      }
    }
    CHECK(y.pixels.minCoeff() >= x.pixels.minCoeff() - 1e-15);
    CHECK(y.pixels.maxCoeff() <= x.pixels.maxCoeff() + 1e-15);
  }
}

TEST_CASE("integer flows equal clamped index shifts on every 3x3 binary image") {
  for (int bits = 0; bits < 512; ++bits) {
    Image x(3, 3, 1);
    for (int i = 0; i < 9; ++i) x.pixels[i] = (bits >> i) & 1;
    for (int du = -3; du <= 3; ++du) {
      for (int dv = -3; dv <= 3; ++dv) {
        FlowField f(3, 3);
        for (int u = 0; u < 3; ++u)
          for (int v = 0; v < 3; ++v) {
            f.du(u, v) = du;
            f.dv(u, v) = dv;
          }
        Image y = bilinear_warp(x, f);
        for (int u = 0; u < 3; ++u)
          for (int v = 0; v < 3; ++v) {
            REQUIRE(y(u, v) == x(std::clamp(u + du, 0, 2), std::clamp(v + dv, 0, 2)));
          }
      }
    }
  }
}

TEST_CASE("warp is linear in the image") {
  std::mt19937_64 rng(8);
  Image a = random_image(6, 6, 3, rng), b = random_image(6, 6, 3, rng);
  FlowField f(6, 6);
  f.values = stadv::testing::uniform(f.values.size(), -2, 2, rng);
  Image mix = a;
  mix.pixels = 0.3 * a.pixels - 1.7 * b.pixels;
  const ArrayXd lhs = bilinear_warp(mix, f).pixels;
  const ArrayXd rhs = 0.3 * bilinear_warp(a, f).pixels - 1.7 * bilinear_warp(b, f).pixels;
  CHECK((lhs - rhs).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("warp input validation") {
  CHECK_THROWS_AS(bilinear_warp(Image(4, 4, 1), FlowField(4, 5)), ShapeError);
  FlowField bad(4, 4);
  bad.du(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bilinear_warp(Image(4, 4, 1), bad), ValueError);
  bad.du(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(bilinear_warp(to_tensor(Image(4, 4, 1)), to_tensor(bad)), ValueError);
}
