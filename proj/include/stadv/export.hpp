#ifndef STADV_EXPORT_HPP
#define STADV_EXPORT_HPP

#include "stadv/image.hpp"

#include <filesystem>
#include <string>

namespace stadv {

enum class ImageFormat { pgm, ppm };

// Maps [lo,hi] to 0..255 with round-half-up. PGM needs one channel; PPM
// takes three (a single channel is replicated). The comment, if any, is
// written as a '#' line after the magic.
void export_image(const Image& x, const std::filesystem::path& path, ImageFormat format,
                  const std::string& comment = "");
std::string encode_pnm(const Image& x, ImageFormat format, const std::string& comment = "");

// Reads P5/P6 with maxval 255 into [0,1].
Image import_image(const std::filesystem::path& path);

struct QuiverStyle {
  int stride = 2;         // one arrow per stride x stride block
  double cell = 12.0;     // SVG units per pixel
  double arrow_scale = 1.0;  // drawn length = arrow_scale * flow length, in pixels
  double image_opacity = 0.35;
};

// Arrow from each sampled pixel (u,v) toward (u+du, v+dv) over a faded copy
// of x. The scale is recorded in the file's <desc>.
std::string flow_svg(const FlowField& f, const Image& x, const QuiverStyle& style = {},
                     const std::string& comment = "");
void export_flow_svg(const FlowField& f, const Image& x, const std::filesystem::path& path,
                     const QuiverStyle& style = {}, const std::string& comment = "");

}  // namespace stadv

#endif  // STADV_EXPORT_HPP
