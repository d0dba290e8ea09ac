#pragma once

#include <string>
#include <vector>

#include "pvmap/camera.hpp"
#include "pvmap/cloud.hpp"
#include "pvmap/structure.hpp"

namespace pvmap {

struct LiftConfig {
  int knn_k = 5;                  // points averaged per surface sample
  double max_ray_residual = 0.5;  // m, ray-to-cloud acceptance
  double voxel_cell_factor = 2.0;

  void validate() const {
    if (knn_k < 1) throw InputError("lift config: knn_k must be >= 1");
    if (!(max_ray_residual > 0))
      throw InputError("lift config: max_ray_residual must be positive");
    if (!(voxel_cell_factor > 0))
      throw InputError("lift config: voxel_cell_factor must be positive");
  }
};

struct LiftedObservation {
  bool lifted = false;
  SurfaceSample sample;
};

// 3D counterparts of one frame's structure, parallel to the 2D containers:
// detections[i] matches the frame's detection i, keypoints[i] the structure's
// keypoint i, hypotheses[i] the structure's hypothesized module i.  Only
// sector members, bench-gap keypoints and hypotheses carry samples.
struct LiftedStructure {
  std::string frame_id;
  std::vector<LiftedObservation> detections;
  std::vector<Vec2> detection_dims_m;  // metric module size seen by this frame
  std::vector<LiftedObservation> keypoints;
  std::vector<LiftedObservation> hypotheses;
  int failed_rays = 0;  // observations whose ray missed the cloud
};

// Cast the viewing ray of one image point into the cloud.
inline std::optional<SurfaceSample> lift_point(const CameraFrame& cam, const Vec2& px,
                                               const PointCloud& cloud, const VoxelIndex& index,
                                               const LiftConfig& cfg) {
  return raycast_cloud(cam.pixel_ray(px), cloud, index, cfg.knn_k, cfg.max_ray_residual);
}

inline LiftedStructure lift_structure(const ImageStructure& S,
                                      const std::vector<ModuleDetection>& dets,
                                      const CameraFrame& cam, const PointCloud& cloud,
                                      const VoxelIndex& index, const LiftConfig& cfg) {
  LiftedStructure out;
  out.frame_id = S.frame_id;
  out.detections.resize(dets.size());
  out.detection_dims_m.assign(dets.size(), Vec2::Zero());
  out.keypoints.resize(S.keypoints.size());
  out.hypotheses.resize(S.hypothesized.size());
  auto lift_to = [&](const Vec2& px, LiftedObservation& obs) {
    std::optional<SurfaceSample> s = lift_point(cam, px, cloud, index, cfg);
    if (s) {
      obs.lifted = true;
      obs.sample = *s;
    } else {
      ++out.failed_rays;
    }
  };
  for (const Sector& sec : S.sectors) {
    for (const ModuleSlot& slot : sec.slots) {
      if (slot.hypothesized) {
        lift_to(S.hypothesized[slot.index].center, out.hypotheses[slot.index]);
      } else {
        LiftedObservation& obs = out.detections[slot.index];
        lift_to(dets[slot.index].box.center, obs);
        if (obs.lifted) {
          // Pixel extents scale with depth/focal at the module's range.
          double scale = cam.depth_of(obs.sample.position) / cam.focal;
          out.detection_dims_m[slot.index] =
              Vec2(dets[slot.index].box.width * scale, dets[slot.index].box.height * scale);
        }
      }
    }
  }
  for (std::size_t k = 0; k < S.keypoints.size(); ++k) {
    const GapKeypoint& kp = S.keypoints[k];
    if (kp.kind != GapKind::bench_gap) continue;
    // A gap keypoint marks the spot between its flanking modules.  The ray
    // through the image midpoint lands on the ground behind the gap, which
    // shifts with the viewpoint; the midpoint of the lifted flanks does not.
    if (kp.left_module >= 0 && kp.right_module >= 0 &&
        out.detections[kp.left_module].lifted && out.detections[kp.right_module].lifted) {
      const SurfaceSample& a = out.detections[kp.left_module].sample;
      const SurfaceSample& b = out.detections[kp.right_module].sample;
      LiftedObservation& obs = out.keypoints[k];
      obs.lifted = true;
      obs.sample.position = 0.5 * (a.position + b.position);
      obs.sample.normal = (a.normal + b.normal).normalized();
      obs.sample.support = std::min(a.support, b.support);
      obs.sample.residual = std::max(a.residual, b.residual);
    } else {
      lift_to(kp.midpoint, out.keypoints[k]);
    }
  }
  return out;
}

}  // namespace pvmap
