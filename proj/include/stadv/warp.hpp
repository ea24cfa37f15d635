#ifndef STADV_WARP_HPP
#define STADV_WARP_HPP

#include "stadv/image.hpp"
#include "stadv/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace stadv {

// Sampling stencil for one output pixel: four source neighbours and the
// fractional offsets inside the cell. The source location is clamped to the
// image rectangle; clamped axes carry no flow gradient.
template <typename Scalar>
struct BilinearStencil {
  int u0, u1, v0, v1;
  Scalar fu, fv;
  bool u_free, v_free;
};

namespace detail {

template <typename Scalar>
inline void locate_axis(Scalar pos, int extent, int& lo, int& hi, Scalar& frac, bool& free_axis) {
  const Scalar max_pos = Scalar(extent - 1);
  free_axis = pos >= Scalar(0) && pos <= max_pos;
  const Scalar p = std::clamp(pos, Scalar(0), max_pos);
  if (extent == 1) {
    lo = hi = 0;
    frac = Scalar(0);
    free_axis = false;
    return;
  }
  lo = std::min(static_cast<int>(std::floor(p)), extent - 2);
  hi = lo + 1;
  frac = p - Scalar(lo);
}

}  // namespace detail

template <typename Scalar>
inline BilinearStencil<Scalar> bilinear_stencil(int u, int v, Scalar du, Scalar dv, int height, int width) {
  BilinearStencil<Scalar> s{};
  detail::locate_axis(Scalar(u) + du, height, s.u0, s.u1, s.fu, s.u_free);
  detail::locate_axis(Scalar(v) + dv, width, s.v0, s.v1, s.fv, s.v_free);
  return s;
}

template <typename Scalar>
void check_warp_inputs(const BasicImage<Scalar>& x, const BasicFlowField<Scalar>& f) {
  if (x.height != f.height || x.width != f.width) {
    throw ShapeError("bilinear_warp: image " + x.geometry() + " vs flow " + std::to_string(f.height) + "x" +
                     std::to_string(f.width));
  }
  if (!f.all_finite()) throw ValueError("bilinear_warp: flow field contains non-finite values");
}

// x_adv(u, v) = sum over the 4 neighbours q of (u + du, v + dv) of
// x(q) * (1 - |u_s - u_q|) * (1 - |v_s - v_q|).
template <typename Scalar>
BasicImage<Scalar> bilinear_warp(const BasicImage<Scalar>& x, const BasicFlowField<Scalar>& f) {
  check_warp_inputs(x, f);
  BasicImage<Scalar> out(x.height, x.width, x.channels);
  out.lo = x.lo;
  out.hi = x.hi;
  for (int u = 0; u < x.height; ++u) {
    for (int v = 0; v < x.width; ++v) {
      const auto s = bilinear_stencil(u, v, f.du(u, v), f.dv(u, v), x.height, x.width);
      const Scalar w00 = (Scalar(1) - s.fu) * (Scalar(1) - s.fv);
      const Scalar w01 = (Scalar(1) - s.fu) * s.fv;
      const Scalar w10 = s.fu * (Scalar(1) - s.fv);
      const Scalar w11 = s.fu * s.fv;
      for (int c = 0; c < x.channels; ++c) {
        out(u, v, c) = x(s.u0, s.v0, c) * w00 + x(s.u0, s.v1, c) * w01 + x(s.u1, s.v0, c) * w10 +
                       x(s.u1, s.v1, c) * w11;
      }
    }
  }
  return out;
}

// Differentiable version on tensors: image [H,W,C], flow [H,W,2] -> [H,W,C].
Tensor bilinear_warp(const Tensor& image, const Tensor& flow);

struct WarpGradientReport {
  double max_rel_error = 0.0;   // max |analytic - numeric| / max(|analytic|, |numeric|)
  double max_abs_error = 0.0;
  double gradient_scale = 0.0;  // max |numeric|
  bool passed = false;
};

// Compares the taped flow gradient of a random projection of the warped
// image with central differences.
WarpGradientReport warp_gradient_check(const Image& x, const FlowField& f, double step = 1e-3,
                                       double tolerance = 1e-4, unsigned seed = 1);

}  // namespace stadv

#endif  // STADV_WARP_HPP
