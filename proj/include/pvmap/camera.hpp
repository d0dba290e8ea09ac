#pragma once

#include <optional>
#include <string>

#include "pvmap/errors.hpp"
#include "pvmap/geometry.hpp"

namespace pvmap {

// Anchor of the local east-north-up frame all 3D positions live in.
struct GeoOrigin {
  double latitude = 0.0;   // degrees
  double longitude = 0.0;  // degrees
  double altitude = 0.0;   // meters
};

struct Ray {
  Vec3 origin{0, 0, 0};
  Vec3 direction{0, 0, -1};  // unit
};

// Pinhole camera.  Camera axes: +x right, +y up, viewing along -z, so an
// identity rotation is a nadir view with image up = north (+y of ENU) and the
// viewing direction (0,0,-1).  `rotation` maps world to camera coordinates.
struct CameraFrame {
  std::string frame_id;
  int image_width = 0;
  int image_height = 0;
  double focal = 0.0;  // pixels
  Vec2 principal_point{0, 0};
  Mat3 rotation = Mat3::Identity();
  Vec3 center{0, 0, 0};
  GeoOrigin geo_origin;  // shared anchor; repeated per frame in camera files

  void validate() const {
    if (frame_id.empty()) throw InputError("camera frame with empty frame_id");
    if (image_width <= 0 || image_height <= 0)
      throw InputError("camera " + frame_id + ": non-positive image size");
    if (!(focal > 0.0)) throw InputError("camera " + frame_id + ": focal must be positive");
    if (principal_point.x() < 0 || principal_point.x() > image_width ||
        principal_point.y() < 0 || principal_point.y() > image_height)
      throw InputError("camera " + frame_id + ": principal point outside image");
    Mat3 rtr = rotation.transpose() * rotation;
    if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
      throw InputError("camera " + frame_id + ": rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-6)
      throw InputError("camera " + frame_id + ": rotation determinant is not +1");
  }

  // World direction of the viewing ray through a pixel (unit length).
  Vec3 pixel_direction(const Vec2& px) const {
    Vec3 cam((px.x() - principal_point.x()) / focal,
             -(px.y() - principal_point.y()) / focal, -1.0);
    Vec3 world = rotation.transpose() * cam;
    return world.normalized();
  }

  Ray pixel_ray(const Vec2& px) const { return Ray{center, pixel_direction(px)}; }

  // Pixel of a world point; nullopt when the point is not in front of the
  // camera.
  std::optional<Vec2> project(const Vec3& world) const {
    Vec3 cam = rotation * (world - center);
    double depth = -cam.z();
    if (!(depth > 0.0)) return std::nullopt;
    return Vec2(principal_point.x() + focal * cam.x() / depth,
                principal_point.y() - focal * cam.y() / depth);
  }

  // Depth (distance along the viewing axis) of a world point.
  double depth_of(const Vec3& world) const {
    Vec3 cam = rotation * (world - center);
    return -cam.z();
  }

  bool inside(const Vec2& px, double margin = 0.0) const {
    return px.x() > margin && px.x() < image_width - margin && px.y() > margin &&
           px.y() < image_height - margin;
  }
};

// Equirectangular conversion between the local ENU frame and geodetic
// coordinates; only used when exporting.  Sphere radius 6378137 m.
inline constexpr double kEarthRadius = 6378137.0;

inline void enu_to_geodetic(const Vec3& enu, const GeoOrigin& origin, double& lat, double& lon,
                            double& alt) {
  double lat0 = origin.latitude * kPi / 180.0;
  lat = origin.latitude + (enu.y() / kEarthRadius) * 180.0 / kPi;
  lon = origin.longitude + (enu.x() / (kEarthRadius * std::cos(lat0))) * 180.0 / kPi;
  alt = origin.altitude + enu.z();
}

}  // namespace pvmap
