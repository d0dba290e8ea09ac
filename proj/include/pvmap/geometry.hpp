#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "pvmap/errors.hpp"

namespace pvmap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Box orientations are half-turn symmetric; the canonical range is
// (-pi/2, pi/2].
inline double normalize_box_angle(double a) {
  while (a > kPi / 2) a -= kPi;
  while (a <= -kPi / 2) a += kPi;
  return a;
}

// Absolute angular difference under half-turn symmetry, in [0, pi/2].
inline double box_angle_distance(double a, double b) {
  return std::abs(normalize_box_angle(a - b));
}

struct OrientedBox {
  Vec2 center{0.0, 0.0};
  double width = 0.0;   // extent along the rotated x axis
  double height = 0.0;  // extent along the rotated y axis
  double angle = 0.0;   // radians, canonical range (-pi/2, pi/2]

  std::array<Vec2, 4> corners() const {
    const Vec2 u{std::cos(angle), std::sin(angle)};
    const Vec2 v{-std::sin(angle), std::cos(angle)};
    const Vec2 hw = 0.5 * width * u;
    const Vec2 hh = 0.5 * height * v;
    return {center - hw - hh, center + hw - hh, center + hw + hh, center - hw + hh};
  }

  double area() const { return width * height; }
  double diagonal() const { return std::hypot(width, height); }

  // Half extent of the box's footprint along unit direction d.
  double half_extent_along(const Vec2& d) const {
    double c = std::cos(angle) * d.x() + std::sin(angle) * d.y();
    double s = -std::sin(angle) * d.x() + std::cos(angle) * d.y();
    return 0.5 * (std::abs(c) * width + std::abs(s) * height);
  }
};

using Polygon2 = std::vector<Vec2>;

// Shoelace area, positive for counter-clockwise winding.
inline double signed_area(const Polygon2& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    a += cross2(p, q);
  }
  return 0.5 * a;
}

inline double polygon_area(const Polygon2& poly) { return std::abs(signed_area(poly)); }

// Sutherland-Hodgman clip of a convex subject against a convex clip polygon.
// Winding of either polygon may be CW or CCW.
inline Polygon2 clip_convex(const Polygon2& subject, Polygon2 clip) {
  if (subject.size() < 3 || clip.size() < 3) return {};
  if (signed_area(clip) < 0) std::reverse(clip.begin(), clip.end());
  Polygon2 out = subject;
  for (std::size_t i = 0; i < clip.size() && !out.empty(); ++i) {
    const Vec2 a = clip[i];
    const Vec2 b = clip[(i + 1) % clip.size()];
    const Vec2 edge = b - a;
    Polygon2 in;
    in.swap(out);
    for (std::size_t j = 0; j < in.size(); ++j) {
      const Vec2& p = in[j];
      const Vec2& q = in[(j + 1) % in.size()];
      double dp = cross2(edge, p - a);
      double dq = cross2(edge, q - a);
      if (dp >= 0) out.push_back(p);
      if ((dp < 0) != (dq < 0)) {
        double t = dp / (dp - dq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

inline double intersection_area(const OrientedBox& a, const OrientedBox& b) {
  auto ca = a.corners();
  auto cb = b.corners();
  Polygon2 pa(ca.begin(), ca.end());
  Polygon2 pb(cb.begin(), cb.end());
  Polygon2 inter = clip_convex(pa, pb);
  if (inter.size() < 3) return 0.0;
  return polygon_area(inter);
}

// Distance from point q to the infinite line through p with unit direction d.
inline double point_line_distance(const Vec2& q, const Vec2& p, const Vec2& d) {
  return std::abs(cross2(d, q - p));
}

// Liang-Barsky: the two points where an infinite line crosses the border of
// the axis-aligned rectangle [0,w] x [0,h].  Empty when the line misses the
// rectangle or only grazes a corner.
inline std::optional<std::array<Vec2, 2>> line_rect_crossings(const Vec2& p, const Vec2& d,
                                                              double w, double h) {
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  const double lo[2] = {0.0, 0.0};
  const double hi[2] = {w, h};
  for (int a = 0; a < 2; ++a) {
    if (d[a] == 0.0) {
      if (p[a] < lo[a] || p[a] > hi[a]) return std::nullopt;
    } else {
      double t1 = (lo[a] - p[a]) / d[a];
      double t2 = (hi[a] - p[a]) / d[a];
      if (t1 > t2) std::swap(t1, t2);
      tmin = std::max(tmin, t1);
      tmax = std::min(tmax, t2);
    }
  }
  if (!(tmin < tmax)) return std::nullopt;
  return std::array<Vec2, 2>{p + tmin * d, p + tmax * d};
}

// Intersection parameter/point of two 2D lines (p1,d1) x (p2,d2); nullopt when
// parallel.
inline std::optional<Vec2> line_line_intersection(const Vec2& p1, const Vec2& d1, const Vec2& p2,
                                                  const Vec2& d2) {
  double den = cross2(d1, d2);
  if (std::abs(den) < 1e-14) return std::nullopt;
  double t = cross2(p2 - p1, d2) / den;
  return p1 + t * d1;
}

}  // namespace pvmap
