#include "stadv/classifier.hpp"

#include <algorithm>

namespace stadv {

Tensor batch_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("empty image batch");
  const Image& first = images.front();
  const Eigen::Index per = first.pixels.size();
  Eigen::ArrayXd data(per * static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_geometry(first)) {
      throw ShapeError("batch mixes geometries " + first.geometry() + " and " + images[i].geometry());
    }
    data.segment(static_cast<Eigen::Index>(i) * per, per) = images[i].pixels;
  }
  return Tensor(Shape{static_cast<int>(images.size()), first.height, first.width, first.channels}, std::move(data));
}

Tensor batch_tensor(const Image& image) { return batch_tensor(std::span<const Image>(&image, 1)); }

std::vector<double> logits_of(const LogitModel& g, const Image& x) {
  Tensor z = g.logits(batch_tensor(x));
  return {z.value().data(), z.value().data() + z.size()};
}

int predict(const LogitModel& g, const Image& x) { return argmax(logits_of(g, x)); }

std::vector<int> predict_batch(const LogitModel& g, std::span<const Image> images, int chunk) {
  std::vector<int> out;
  out.reserve(images.size());
  const int k = g.num_classes();
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t count = std::min(images.size() - start, static_cast<std::size_t>(chunk));
    Tensor z = g.logits(batch_tensor(images.subspan(start, count)));
    for (std::size_t r = 0; r < count; ++r) {
      out.push_back(argmax({z.value().data() + r * static_cast<std::size_t>(k), static_cast<std::size_t>(k)}));
    }
  }
  return out;
}

}  // namespace stadv
