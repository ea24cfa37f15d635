#include "stadv/export.hpp"

#include "stadv/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace stadv {

namespace fs = std::filesystem;

namespace {

unsigned char quantize(double v, double lo, double hi) {
  const double q = std::floor((v - lo) / (hi - lo) * 255.0 + 0.5);
  return static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
}

void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string encode_pnm(const Image& x, ImageFormat format, const std::string& comment) {
  if (!(x.hi > x.lo)) throw ValueError("export_image: invalid pixel range");
  const bool gray = format == ImageFormat::pgm;
  if (gray && x.channels != 1) throw ShapeError("PGM export needs 1 channel, image is " + x.geometry());
  if (!gray && x.channels != 3 && x.channels != 1) {
    throw ShapeError("PPM export needs 1 or 3 channels, image is " + x.geometry());
  }
  std::string out = gray ? "P5\n" : "P6\n";
  if (!comment.empty()) out += "# " + one_line(comment) + "\n";
  out += std::to_string(x.width) + " " + std::to_string(x.height) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(x.pixel_count()) * (gray ? 1 : 3));
  for (int u = 0; u < x.height; ++u) {
    for (int v = 0; v < x.width; ++v) {
      for (int c = 0; c < (gray ? 1 : 3); ++c) {
        out += static_cast<char>(quantize(x(u, v, x.channels == 1 ? 0 : c), x.lo, x.hi));
      }
    }
  }
  return out;
}

void export_image(const Image& x, const fs::path& path, ImageFormat format, const std::string& comment) {
  write_file(path, encode_pnm(x, format, comment));
}

Image import_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  const std::string b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::string file = path.string();
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(b[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() {
    skip_space();
    const std::size_t start = pos;
    int v = 0;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) v = v * 10 + (b[pos++] - '0');
    if (pos == start) throw ParseError(file, start, "expected a number in the header");
    return v;
  };
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) throw ParseError(file, 0, "not a P5/P6 file");
  const int channels = b[1] == '5' ? 1 : 3;
  pos = 2;
  const int w = number(), h = number(), maxval = number();
  if (w <= 0 || h <= 0) throw ParseError(file, pos, "zero dimension");
  if (maxval != 255) throw ParseError(file, pos, "only maxval 255 is supported");
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos]))) {
    throw ParseError(file, pos, "missing separator before raster");
  }
  ++pos;
  const std::size_t need = std::size_t(w) * h * channels;
  if (b.size() - pos != need) {
    throw ParseError(file, pos, "raster has " + std::to_string(b.size() - pos) + " bytes, expected " +
                                    std::to_string(need));
  }
  Image x(h, w, channels);
  for (std::size_t i = 0; i < need; ++i) {
    x.pixels[static_cast<Eigen::Index>(i)] = static_cast<unsigned char>(b[pos + i]) / 255.0;
  }
  return x;
}

std::string flow_svg(const FlowField& f, const Image& x, const QuiverStyle& style, const std::string& comment) {
  if (x.height != f.height || x.width != f.width) {
    throw ShapeError("flow_svg: image " + x.geometry() + " vs flow " + std::to_string(f.height) + "x" +
                     std::to_string(f.width));
  }
  if (style.stride < 1 || !(style.cell > 0) || !(style.arrow_scale > 0)) throw ValueError("flow_svg: bad style");
  if (!(x.hi > x.lo)) throw ValueError("flow_svg: invalid pixel range");
  const double s = style.cell;
  std::ostringstream o;
  o.precision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << x.width * s << "\" height=\"" << x.height * s
    << "\" viewBox=\"0 0 " << x.width * s << " " << x.height * s << "\">\n";
  o << "<desc>flow quiver: stride " << style.stride << ", " << s << " svg units per pixel, arrow length = "
    << style.arrow_scale << " x flow magnitude (pixels)";
  if (!comment.empty()) o << "; " << xml_escape(one_line(comment));
  o << "</desc>\n";
  o << "<defs><marker id=\"head\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\">"
       "<path d=\"M0,0 L6,3 L0,6 z\" fill=\"#c00\"/></marker></defs>\n";
  o << "<g id=\"image\" opacity=\"" << style.image_opacity << "\">\n";
  for (int u = 0; u < x.height; ++u) {
    for (int v = 0; v < x.width; ++v) {
      int rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = quantize(x(u, v, x.channels == 3 ? c : 0), x.lo, x.hi);
      o << "<rect x=\"" << v * s << "\" y=\"" << u * s << "\" width=\"" << s << "\" height=\"" << s
        << "\" fill=\"rgb(" << rgb[0] << "," << rgb[1] << "," << rgb[2] << ")\"/>\n";
    }
  }
  o << "</g>\n<g id=\"arrows\" stroke=\"#c00\" stroke-width=\"1\">\n";
  for (int u = 0; u < f.height; u += style.stride) {
    for (int v = 0; v < f.width; v += style.stride) {
      const double x1 = (v + 0.5) * s, y1 = (u + 0.5) * s;
      const double x2 = x1 + style.arrow_scale * f.dv(u, v) * s;
      const double y2 = y1 + style.arrow_scale * f.du(u, v) * s;
      o << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2 << "\"";
      if (x1 != x2 || y1 != y2) o << " marker-end=\"url(#head)\"";
      o << "/>\n";
    }
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

void export_flow_svg(const FlowField& f, const Image& x, const fs::path& path, const QuiverStyle& style,
                     const std::string& comment) {
  write_file(path, flow_svg(f, x, style, comment));
}

}  // namespace stadv
