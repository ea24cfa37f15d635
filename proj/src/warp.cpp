#include "stadv/warp.hpp"

#include <random>

namespace stadv {

using Eigen::ArrayXd;
using Eigen::Index;

Tensor bilinear_warp(const Tensor& image, const Tensor& flow) {
  if (image.rank() != 3 || flow.rank() != 3 || flow.dim(2) != 2 || image.dim(0) != flow.dim(0) ||
      image.dim(1) != flow.dim(1)) {
    throw ShapeError("bilinear_warp: image " + shape_string(image.shape()) + " vs flow " +
                     shape_string(flow.shape()));
  }
  if (!flow.value().allFinite()) throw ValueError("bilinear_warp: flow field contains non-finite values");

  const int height = image.dim(0), width = image.dim(1), channels = image.dim(2);
  const ArrayXd& x = image.value();
  const ArrayXd& f = flow.value();
  auto at = [width, channels](int u, int v, int c) { return (Index(u) * width + v) * channels + c; };

  ArrayXd out(image.size());
  for (int u = 0; u < height; ++u) {
    for (int v = 0; v < width; ++v) {
      const Index p = Index(u) * width + v;
      const auto s = bilinear_stencil(u, v, f[2 * p], f[2 * p + 1], height, width);
      const double w00 = (1.0 - s.fu) * (1.0 - s.fv), w01 = (1.0 - s.fu) * s.fv;
      const double w10 = s.fu * (1.0 - s.fv), w11 = s.fu * s.fv;
      for (int c = 0; c < channels; ++c) {
        out[at(u, v, c)] = x[at(s.u0, s.v0, c)] * w00 + x[at(s.u0, s.v1, c)] * w01 + x[at(s.u1, s.v0, c)] * w10 +
                           x[at(s.u1, s.v1, c)] * w11;
      }
    }
  }

  return make_op_result(
      "bilinear_warp", image.shape(), std::move(out), {&image, &flow},
      [xn = image.node(), fn = flow.node(), height, width, channels, at](const ArrayXd& g) {
        const ArrayXd& x = xn->value;
        const ArrayXd& f = fn->value;
        ArrayXd gx;
        ArrayXd gf;
        if (xn->requires_grad) gx = ArrayXd::Zero(x.size());
        if (fn->requires_grad) gf = ArrayXd::Zero(f.size());
        for (int u = 0; u < height; ++u) {
          for (int v = 0; v < width; ++v) {
            const Index p = Index(u) * width + v;
            const auto s = bilinear_stencil(u, v, f[2 * p], f[2 * p + 1], height, width);
            const double w00 = (1.0 - s.fu) * (1.0 - s.fv), w01 = (1.0 - s.fu) * s.fv;
            const double w10 = s.fu * (1.0 - s.fv), w11 = s.fu * s.fv;
            double dfu = 0.0, dfv = 0.0;
            for (int c = 0; c < channels; ++c) {
              const double go = g[at(u, v, c)];
              const double x00 = x[at(s.u0, s.v0, c)], x01 = x[at(s.u0, s.v1, c)];
              const double x10 = x[at(s.u1, s.v0, c)], x11 = x[at(s.u1, s.v1, c)];
              if (xn->requires_grad) {
                gx[at(s.u0, s.v0, c)] += go * w00;
                gx[at(s.u0, s.v1, c)] += go * w01;
                gx[at(s.u1, s.v0, c)] += go * w10;
                gx[at(s.u1, s.v1, c)] += go * w11;
              }
              dfu += go * ((x10 - x00) * (1.0 - s.fv) + (x11 - x01) * s.fv);
              dfv += go * ((x01 - x00) * (1.0 - s.fu) + (x11 - x10) * s.fu);
            }
            if (fn->requires_grad) {
              gf[2 * p] = s.u_free ? dfu : 0.0;
              gf[2 * p + 1] = s.v_free ? dfv : 0.0;
            }
          }
        }
        if (xn->requires_grad) xn->accumulate(gx);
        if (fn->requires_grad) fn->accumulate(gf);
      });
}

WarpGradientReport warp_gradient_check(const Image& x, const FlowField& f, double step, double tolerance,
                                       unsigned seed) {
  check_warp_inputs(x, f);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  ArrayXd weights(x.pixels.size());
  for (Index i = 0; i < weights.size(); ++i) weights[i] = dist(rng);

  ArrayXd analytic;
  {
    Tape tape;
    Tensor flow = to_tensor(f, true);
    Tensor loss = sum(mul(bilinear_warp(to_tensor(x), flow), Tensor(Shape{x.height, x.width, x.channels}, weights)));
    tape.backward(loss);
    analytic = flow.grad();
  }

  auto projected = [&](const FlowField& ff) { return (bilinear_warp(x, ff).pixels * weights).sum(); };
  ArrayXd numeric(f.values.size());
  FlowField probe = f;
  for (Index i = 0; i < numeric.size(); ++i) {
    const double saved = probe.values[i];
    probe.values[i] = saved + step;
    const double up = projected(probe);
    probe.values[i] = saved - step;
    const double down = projected(probe);
    probe.values[i] = saved;
    numeric[i] = (up - down) / (2.0 * step);
  }

  WarpGradientReport report;
  report.max_abs_error = (analytic - numeric).abs().maxCoeff();
  report.gradient_scale = numeric.abs().maxCoeff();
  const double scale = std::max(analytic.abs().maxCoeff(), report.gradient_scale);
  report.max_rel_error = scale > 0.0 ? report.max_abs_error / scale : report.max_abs_error;
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace stadv
