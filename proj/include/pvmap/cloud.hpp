#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "pvmap/camera.hpp"
#include "pvmap/geometry.hpp"
#include "pvmap/raster.hpp"

namespace pvmap {

struct SurfacePoint {
  Vec3 position{0, 0, 0};
  Vec3 normal{0, 0, 1};
  Color color{0, 0, 0};
};

struct PointCloud {
  std::vector<SurfacePoint> points;
  Vec3 bounds_min{0, 0, 0};
  Vec3 bounds_max{0, 0, 0};

  void recompute_bounds() {
    if (points.empty()) {
      bounds_min = bounds_max = Vec3::Zero();
      return;
    }
    bounds_min = bounds_max = points[0].position;
    for (const SurfacePoint& p : points) {
      bounds_min = bounds_min.cwiseMin(p.position);
      bounds_max = bounds_max.cwiseMax(p.position);
    }
  }
};

struct SurfaceSample {
  Vec3 position{0, 0, 0};
  Vec3 normal{0, 0, 1};
  int support = 0;       // points averaged into the sample
  double residual = 0.0; // ray-to-point distance at the seed point
};

// Uniform-grid spatial index over a point cloud.  Both queries are exact:
// they return the same indices a brute-force scan over all points would,
// including tie-breaking, which the pruning bounds below are careful to
// preserve (cells are only skipped when they provably contain no point that
// could displace the current best under the full comparison tuple).
class VoxelIndex {
 public:
  explicit VoxelIndex(const PointCloud& cloud, double cell_factor = 2.0) : cloud_(&cloud) {
    const std::size_t n = cloud.points.size();
    origin_ = cloud.bounds_min;
    Vec3 extent = cloud.bounds_max - cloud.bounds_min;
    double volume = 1.0;
    for (int a = 0; a < 3; ++a) volume *= std::max(extent[a], 1e-6);
    double spacing = n > 0 ? std::cbrt(volume / static_cast<double>(n)) : 1.0;
    cell_ = std::max(cell_factor * spacing, 1e-6);
    for (;;) {
      std::int64_t total = 1;
      for (int a = 0; a < 3; ++a) {
        dims_[a] = static_cast<int>(std::floor(extent[a] / cell_)) + 1;
        total *= dims_[a];
      }
      if (total <= (std::int64_t{1} << 22)) break;
      cell_ *= 2.0;
    }
    cell_start_.assign(num_cells() + 1, 0);
    std::vector<int> cell_of(n);
    for (std::size_t i = 0; i < n; ++i) {
      cell_of[i] = flat_cell(cell_coords(cloud.points[i].position));
      ++cell_start_[cell_of[i] + 1];
    }
    for (std::size_t c = 1; c < cell_start_.size(); ++c) cell_start_[c] += cell_start_[c - 1];
    cell_points_.resize(n);
    std::vector<int> fill(num_cells(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      int c = cell_of[i];
      cell_points_[cell_start_[c] + fill[c]] = static_cast<int>(i);
      ++fill[c];
    }
  }

  double cell_size() const { return cell_; }

  // Indices of the k nearest points to q, ordered by (distance, index).
  std::vector<int> k_nearest(const Vec3& q, int k) const {
    std::vector<int> result;
    if (k <= 0 || cloud_->points.empty()) return result;
    const std::size_t want = std::min<std::size_t>(k, cloud_->points.size());
    // Max-heap of (squared distance, index); top is the current worst.
    std::vector<std::pair<double, int>> heap;
    heap.reserve(want + 1);
    Eigen::Vector3i c;
    for (int a = 0; a < 3; ++a)
      c[a] = static_cast<int>(std::floor((q[a] - origin_[a]) / cell_));
    int rmax = 0;
    for (int a = 0; a < 3; ++a)
      rmax = std::max({rmax, std::abs(c[a]), std::abs(dims_[a] - 1 - c[a])});
    for (int r = 0; r <= rmax; ++r) {
      scan_ring(q, c, r, heap, want);
      if (heap.size() == want) {
        // Everything outside the swept block is farther than d_out; continue
        // only while a tie at the boundary could still change the result.
        double d_out = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
          double blo = origin_[a] + (static_cast<double>(c[a]) - r) * cell_;
          double bhi = origin_[a] + (static_cast<double>(c[a]) + r + 1) * cell_;
          d_out = std::min({d_out, q[a] - blo, bhi - q[a]});
        }
        if (d_out > 0 && heap.front().first < d_out * d_out) break;
      }
    }
    std::sort(heap.begin(), heap.end());
    result.reserve(heap.size());
    for (const auto& [d2, i] : heap) result.push_back(i);
    return result;
  }

  // First point along the ray: smallest parameter t among points whose
  // perpendicular distance stays within `band` of the ray's closest approach
  // anywhere in the cloud.  A ray that pierces one surface and lands on
  // another behind it (module plane, then ground) then resolves to the near
  // surface instead of whichever surface filed the stray point closest to
  // the line.  Returns -1 when no point qualifies or the closest approach
  // exceeds max_approach (the ray misses every surfaced region).
  int first_along_ray(const Ray& ray, double band, double max_approach) const {
    int nearest = nearest_to_ray(ray);
    if (nearest < 0) return nearest;
    const auto& pts = cloud_->points;
    const Vec3 o = ray.origin;
    const Vec3 d = ray.direction.normalized();
    const Vec3 rel0 = pts[nearest].position - o;
    const double lim = (rel0 - rel0.dot(d) * d).norm() + band;
    const double lim2 = lim * lim;
    double best_t = std::numeric_limits<double>::infinity();
    int best = -1;
    auto consider = [&](int i) {
      const Vec3 rel = pts[i].position - o;
      double t = rel.dot(d);
      if (t < 0) return;
      if ((rel - t * d).squaredNorm() > lim2) return;
      if (t < best_t || (t == best_t && i < best)) {
        best_t = t;
        best = i;
      }
    };
    const double r_cell = std::sqrt(3.0) / 2.0 * cell_ * (1.0 + 1e-12);
    for (int cz = 0; cz < dims_[2]; ++cz)
      for (int cy = 0; cy < dims_[1]; ++cy)
        for (int cx = 0; cx < dims_[0]; ++cx) {
          int flat = flat_cell({cx, cy, cz});
          int lo = cell_start_[flat], hi = cell_start_[flat + 1];
          if (lo == hi) continue;
          Vec3 center = origin_ + cell_ * Vec3(cx + 0.5, cy + 0.5, cz + 0.5);
          Vec3 rel = center - o;
          double lb = std::sqrt((rel - rel.dot(d) * d).squaredNorm()) - r_cell;
          if (lb > lim) continue;
          for (int s = lo; s < hi; ++s) consider(cell_points_[s]);
        }
    return best;
  }

  // Index of the point with minimum perpendicular distance to the ray,
  // considering only points at ray parameter t >= 0.  Ties resolve by smaller
  // t, then smaller index.  Returns -1 when no point qualifies.
  int nearest_to_ray(const Ray& ray) const {
    const auto& pts = cloud_->points;
    if (pts.empty()) return -1;
    const Vec3 o = ray.origin;
    const Vec3 d = ray.direction.normalized();
    double best_d2 = std::numeric_limits<double>::infinity();
    double best_t = std::numeric_limits<double>::infinity();
    int best = -1;
    auto consider = [&](int i) {
      const Vec3 rel = pts[i].position - o;
      double t = rel.dot(d);
      if (t < 0) return;
      double d2 = (rel - t * d).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && (t < best_t || (t == best_t && i < best)))) {
        best_d2 = d2;
        best_t = t;
        best = i;
      }
    };
    // Cheap seed so the cell bound below can prune.
    const int stride = std::max<int>(1, static_cast<int>(pts.size() / 256));
    for (int i = 0; i < static_cast<int>(pts.size()); i += stride) consider(i);
    const double r_cell = std::sqrt(3.0) / 2.0 * cell_ * (1.0 + 1e-12);
    for (int cz = 0; cz < dims_[2]; ++cz)
      for (int cy = 0; cy < dims_[1]; ++cy)
        for (int cx = 0; cx < dims_[0]; ++cx) {
          int flat = flat_cell({cx, cy, cz});
          int lo = cell_start_[flat], hi = cell_start_[flat + 1];
          if (lo == hi) continue;
          if (best >= 0) {
            Vec3 center = origin_ + cell_ * Vec3(cx + 0.5, cy + 0.5, cz + 0.5);
            Vec3 rel = center - o;
            double lb = std::sqrt((rel - rel.dot(d) * d).squaredNorm()) - r_cell;
            if (lb > 0 && lb * lb > best_d2) continue;
          }
          for (int s = lo; s < hi; ++s) consider(cell_points_[s]);
        }
    return best;
  }

 private:
  Eigen::Vector3i cell_coords(const Vec3& p) const {
    Eigen::Vector3i c;
    for (int a = 0; a < 3; ++a) {
      int v = static_cast<int>(std::floor((p[a] - origin_[a]) / cell_));
      c[a] = std::clamp(v, 0, dims_[a] - 1);
    }
    return c;
  }

  int flat_cell(const Eigen::Vector3i& c) const {
    return (c[2] * dims_[1] + c[1]) * dims_[0] + c[0];
  }

  std::size_t num_cells() const {
    return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  }

  void scan_ring(const Vec3& q, const Eigen::Vector3i& c, int r,
                 std::vector<std::pair<double, int>>& heap, std::size_t want) const {
    Eigen::Vector3i lo = (c.array() - r).max(0).matrix();
    Eigen::Vector3i hi = (c.array() + r).min(dims_.array() - 1).matrix();
    for (int cz = lo[2]; cz <= hi[2]; ++cz)
      for (int cy = lo[1]; cy <= hi[1]; ++cy)
        for (int cx = lo[0]; cx <= hi[0]; ++cx) {
          int cheb = std::max({std::abs(cx - c[0]), std::abs(cy - c[1]), std::abs(cz - c[2])});
          if (cheb != r) continue;
          int flat = flat_cell({cx, cy, cz});
          for (int s = cell_start_[flat]; s < cell_start_[flat + 1]; ++s) {
            int i = cell_points_[s];
            double d2 = (cloud_->points[i].position - q).squaredNorm();
            std::pair<double, int> cand{d2, i};
            if (heap.size() < want) {
              heap.push_back(cand);
              std::push_heap(heap.begin(), heap.end());
            } else if (cand < heap.front()) {
              std::pop_heap(heap.begin(), heap.end());
              heap.back() = cand;
              std::push_heap(heap.begin(), heap.end());
            }
          }
        }
  }

  const PointCloud* cloud_;
  double cell_ = 1.0;
  Vec3 origin_{0, 0, 0};
  Eigen::Vector3i dims_{1, 1, 1};
  std::vector<int> cell_start_;
  std::vector<int> cell_points_;
};

// Surface sample where a viewing ray meets the cloud: the first point along
// the ray seeds a k-neighbour average.  Returns nullopt when the nearest
// approach exceeds max_residual (the ray misses the surfaced region) or no
// point lies in front of the ray.
// Depth resolution band: points within this perpendicular margin of the
// ray's closest approach compete by depth.  Wide enough to cover sampling
// jitter on the hit surface, narrow enough not to recruit points of the
// same tilted surface further up-slope.
inline constexpr double kSurfaceBand = 0.1;

inline std::optional<SurfaceSample> raycast_cloud(const Ray& ray, const PointCloud& cloud,
                                                  const VoxelIndex& index, int k,
                                                  double max_residual) {
  int seed = index.nearest_to_ray(ray);
  if (seed < 0) return std::nullopt;
  const Vec3 d = ray.direction.normalized();
  {
    const Vec3 rel = cloud.points[seed].position - ray.origin;
    if ((rel - rel.dot(d) * d).norm() > max_residual) return std::nullopt;
  }
  seed = index.first_along_ray(ray, kSurfaceBand);
  if (seed < 0) return std::nullopt;
  const Vec3 rel = cloud.points[seed].position - ray.origin;
  double residual = (rel - rel.dot(d) * d).norm();
  std::vector<int> nn = index.k_nearest(cloud.points[seed].position, k);
  Vec3 pos = Vec3::Zero();
  Vec3 nrm = Vec3::Zero();
  for (int i : nn) {
    pos += cloud.points[i].position;
    nrm += cloud.points[i].normal;
  }
  pos /= static_cast<double>(nn.size());
  if (nrm.norm() < 1e-9) return std::nullopt;
  SurfaceSample s;
  s.position = pos;
  s.normal = nrm.normalized();
  s.support = static_cast<int>(nn.size());
  s.residual = residual;
  return s;
}

inline std::optional<SurfaceSample> raycast_cloud(const Ray& ray, const PointCloud& cloud, int k,
                                                  double max_residual,
                                                  double cell_factor = 2.0) {
  VoxelIndex index(cloud, cell_factor);
  return raycast_cloud(ray, cloud, index, k, max_residual);
}

}  // namespace pvmap
