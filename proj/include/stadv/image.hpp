#ifndef STADV_IMAGE_HPP
#define STADV_IMAGE_HPP

#include "stadv/error.hpp"
#include "stadv/tensor.hpp"

#include <Eigen/Core>

#include <string>

namespace stadv {

// H x W x C pixel grid stored interleaved (channel fastest). Row index u,
// column index v, both zero-based.
template <typename Scalar>
struct BasicImage {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  int height = 0;
  int width = 0;
  int channels = 0;
  Scalar lo = Scalar(0);
  Scalar hi = Scalar(1);
  Array pixels;

  BasicImage() = default;
  BasicImage(int h, int w, int c, Scalar fill = Scalar(0))
      : height(h), width(w), channels(c), pixels(Array::Constant(Eigen::Index(h) * w * c, fill)) {
    if (h <= 0 || w <= 0 || c <= 0) throw ShapeError("image dimensions must be positive");
  }

  Eigen::Index index(int u, int v, int c = 0) const { return (Eigen::Index(u) * width + v) * channels + c; }
  Scalar& operator()(int u, int v, int c = 0) { return pixels[index(u, v, c)]; }
  Scalar operator()(int u, int v, int c = 0) const { return pixels[index(u, v, c)]; }

  Eigen::Index pixel_count() const { return Eigen::Index(height) * width; }
  bool same_geometry(const BasicImage& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  std::string geometry() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
};

// Per-pixel displacement (du along rows, dv along columns), in pixels,
// shared by all channels. Stored interleaved as [H, W, 2].
template <typename Scalar>
struct BasicFlowField {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  int height = 0;
  int width = 0;
  Array values;

  BasicFlowField() = default;
  BasicFlowField(int h, int w) : height(h), width(w), values(Array::Zero(Eigen::Index(h) * w * 2)) {
    if (h <= 0 || w <= 0) throw ShapeError("flow field dimensions must be positive");
  }

  Scalar& du(int u, int v) { return values[(Eigen::Index(u) * width + v) * 2]; }
  Scalar& dv(int u, int v) { return values[(Eigen::Index(u) * width + v) * 2 + 1]; }
  Scalar du(int u, int v) const { return values[(Eigen::Index(u) * width + v) * 2]; }
  Scalar dv(int u, int v) const { return values[(Eigen::Index(u) * width + v) * 2 + 1]; }

  Eigen::Index pixel_count() const { return Eigen::Index(height) * width; }
  bool all_finite() const { return values.allFinite(); }
};

using Image = BasicImage<double>;
using FlowField = BasicFlowField<double>;

// [H, W, C] tensor view of an image (copy).
inline Tensor to_tensor(const Image& x, bool requires_grad = false) {
  return Tensor(Shape{x.height, x.width, x.channels}, x.pixels, requires_grad);
}

inline Tensor to_tensor(const FlowField& f, bool requires_grad = false) {
  return Tensor(Shape{f.height, f.width, 2}, f.values, requires_grad);
}

inline Image image_from_tensor(const Tensor& t, double lo = 0.0, double hi = 1.0) {
  if (t.rank() != 3) throw ShapeError("image tensor must be [H,W,C], got " + shape_string(t.shape()));
  Image img(t.dim(0), t.dim(1), t.dim(2));
  img.lo = lo;
  img.hi = hi;
  img.pixels = t.value();
  return img;
}

inline FlowField flow_from_values(int height, int width, const Eigen::ArrayXd& values) {
  FlowField f(height, width);
  if (values.size() != f.values.size()) {
    throw ShapeError("flow of " + std::to_string(height) + "x" + std::to_string(width) + " needs " +
                     std::to_string(f.values.size()) + " values, got " + std::to_string(values.size()));
  }
  f.values = values;
  return f;
}

}  // namespace stadv

#endif  // STADV_IMAGE_HPP
