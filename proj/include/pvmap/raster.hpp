#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pvmap/geometry.hpp"

namespace pvmap {

using Color = std::array<std::uint8_t, 3>;

// 8-bit RGB raster, row-major, origin at the top-left pixel.
struct ImageRaster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height

  ImageRaster() = default;
  ImageRaster(int w, int h, Color fill = {0, 0, 0}) : width(w), height(h) {
    pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (int i = 0; i < w * h; ++i) set_index(i, fill);
  }

  bool contains(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

  Color at(int x, int y) const {
    std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }

  void set(int x, int y, Color c) {
    if (!contains(x, y)) return;
    set_index(y * width + x, c);
  }

  // Mean of the three channels; the shade tests in gap classification work on
  // this.
  double luminance(int x, int y) const {
    Color c = at(x, y);
    return (static_cast<double>(c[0]) + c[1] + c[2]) / 3.0;
  }

 private:
  void set_index(int i, Color c) {
    std::size_t j = static_cast<std::size_t>(i) * 3;
    pixels[j] = c[0];
    pixels[j + 1] = c[1];
    pixels[j + 2] = c[2];
  }
};

// Scanline fill of a convex polygon; pixels whose centers fall inside the
// polygon are painted.
inline void fill_convex(ImageRaster& img, const Polygon2& poly, Color color) {
  if (poly.size() < 3) return;
  double ymin = poly[0].y(), ymax = poly[0].y();
  for (const Vec2& p : poly) {
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  int y0 = std::max(0, static_cast<int>(std::ceil(ymin - 0.5)));
  int y1 = std::min(img.height - 1, static_cast<int>(std::floor(ymax - 0.5)));
  for (int y = y0; y <= y1; ++y) {
    double yc = y + 0.5;
    double xlo = std::numeric_limits<double>::infinity();
    double xhi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2& a = poly[i];
      const Vec2& b = poly[(i + 1) % poly.size()];
      if ((a.y() <= yc && b.y() > yc) || (b.y() <= yc && a.y() > yc)) {
        double t = (yc - a.y()) / (b.y() - a.y());
        double x = a.x() + t * (b.x() - a.x());
        xlo = std::min(xlo, x);
        xhi = std::max(xhi, x);
      }
    }
    if (xlo > xhi) continue;
    int x0 = std::max(0, static_cast<int>(std::ceil(xlo - 0.5)));
    int x1 = std::min(img.width - 1, static_cast<int>(std::floor(xhi - 0.5)));
    for (int x = x0; x <= x1; ++x) img.set(x, y, color);
  }
}

}  // namespace pvmap
