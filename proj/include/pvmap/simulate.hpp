#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "pvmap/camera.hpp"
#include "pvmap/cloud.hpp"
#include "pvmap/detections.hpp"
#include "pvmap/errors.hpp"
#include "pvmap/raster.hpp"
#include "pvmap/rng.hpp"

namespace pvmap {

struct TerrainParams {
  double amplitude = 0.35;     // m
  double wavelength_x = 57.0;  // m
  double wavelength_y = 73.0;
  double grid_step = 0.6;      // m, cloud sampling
  double margin = 6.0;         // m beyond the plant footprint
};

// Regular plant: straight chains of planar benches, exact pitch.  A chain is
// a west-east run of benches; every bench carries rows_per_bench rows of
// modules_per_sector modules.
struct PlantParams {
  int chains = 3;
  int benches_per_chain = 9;
  int rows_per_bench = 2;
  int modules_per_sector = 8;
  double module_width = 1.0;    // m, along the row
  double module_height = 1.65;  // m, across the row (in plane)
  double in_row_gap = 0.08;     // m, edge to edge
  double gap_factor = 1.45;     // bench gap, center-to-center, in pitches
  double row_pitch = 1.70;      // m, in-plane row separation
  double chain_pitch = 6.0;     // m, north-south chain separation
  double tilt_deg = 20.0;       // about the west-east axis
  double mount_height = 0.8;    // m above terrain
  TerrainParams terrain;
  GeoOrigin geo{49.75, 14.10, 352.0};

  double pitch() const { return module_width + in_row_gap; }

  // The bench gap must stay inside the gap detection band for the default
  // tolerance, else the generated scenes contradict their own ground truth.
  void validate() const {
    if (chains < 1 || benches_per_chain < 1 || rows_per_bench < 1 || modules_per_sector < 2)
      throw InputError("plant params: counts out of range");
    if (!(module_width > 0 && module_height > 0 && in_row_gap >= 0))
      throw InputError("plant params: non-positive module size");
    if (!(gap_factor > 1.1 && gap_factor < 1.8))
      throw InputError("plant params: gap_factor must lie in (1.1, 1.8) pitches");
    if (!(row_pitch >= module_height))
      throw InputError("plant params: row_pitch must be at least module_height");
  }
};

struct GroundTruthModule {
  int truth_id = -1;
  int line = -1;    // (chain, row) enumeration
  int bench = -1;   // global bench index
  int sector = -1;  // bench rank along the chain
  int row = -1;     // in-bench row, north to south
  int in_row = -1;
  Vec3 position{0, 0, 0};
  Vec3 normal{0, 0, 1};
  std::array<Vec3, 4> corners;
};

struct GroundTruthPlant {
  PlantParams params;
  std::vector<GroundTruthModule> modules;
  Vec2 bounds_min{0, 0};  // xy footprint
  Vec2 bounds_max{0, 0};
};

namespace sim_detail {

inline double terrain_height(const TerrainParams& t, double x, double y) {
  return t.amplitude * std::sin(2.0 * kPi * x / t.wavelength_x) *
         std::cos(2.0 * kPi * y / t.wavelength_y);
}

inline Vec3 terrain_normal(const TerrainParams& t, double x, double y) {
  double zx = t.amplitude * (2.0 * kPi / t.wavelength_x) *
              std::cos(2.0 * kPi * x / t.wavelength_x) * std::cos(2.0 * kPi * y / t.wavelength_y);
  double zy = -t.amplitude * (2.0 * kPi / t.wavelength_y) *
              std::sin(2.0 * kPi * x / t.wavelength_x) * std::sin(2.0 * kPi * y / t.wavelength_y);
  return Vec3(-zx, -zy, 1.0).normalized();
}

}  // namespace sim_detail

inline GroundTruthPlant make_plant(const PlantParams& params) {
  params.validate();
  GroundTruthPlant plant;
  plant.params = params;
  const double pitch = params.pitch();
  const double bench_span = (params.modules_per_sector - 1) * pitch;
  const double bench_period = bench_span + params.gap_factor * pitch;
  const double tilt = params.tilt_deg * kPi / 180.0;
  const Vec3 u(1, 0, 0);                                  // along the row
  const Vec3 v(0, std::cos(tilt), std::sin(tilt));        // up-slope in plane
  const Vec3 normal(0, -std::sin(tilt), std::cos(tilt));  // tilts south
  int truth_id = 0;
  for (int c = 0; c < params.chains; ++c) {
    double y0 = -c * params.chain_pitch;
    for (int r = 0; r < params.rows_per_bench; ++r) {
      int line = c * params.rows_per_bench + r;
      for (int b = 0; b < params.benches_per_chain; ++b) {
        double bx0 = b * bench_period;
        double bench_cx = bx0 + 0.5 * bench_span;
        double anchor_z =
            sim_detail::terrain_height(params.terrain, bench_cx, y0) + params.mount_height;
        Vec3 row_base = Vec3(0, y0, anchor_z) - r * params.row_pitch * v;
        for (int k = 0; k < params.modules_per_sector; ++k) {
          GroundTruthModule m;
          m.truth_id = truth_id++;
          m.line = line;
          m.bench = c * params.benches_per_chain + b;
          m.sector = b;
          m.row = r;
          m.in_row = k;
          m.position = row_base + Vec3(bx0 + k * pitch, 0, 0);
          m.normal = normal;
          Vec3 hw = 0.5 * params.module_width * u;
          Vec3 hh = 0.5 * params.module_height * v;
          m.corners = {m.position - hw - hh, m.position + hw - hh, m.position + hw + hh,
                       m.position - hw + hh};
          plant.modules.push_back(m);
        }
      }
    }
  }
  plant.bounds_min = Vec2(plant.modules[0].position.x(), plant.modules[0].position.y());
  plant.bounds_max = plant.bounds_min;
  for (const GroundTruthModule& m : plant.modules)
    for (const Vec3& c : m.corners) {
      plant.bounds_min = plant.bounds_min.cwiseMin(Vec2(c.x(), c.y()));
      plant.bounds_max = plant.bounds_max.cwiseMax(Vec2(c.x(), c.y()));
    }
  return plant;
}

struct CaptureParams {
  double altitude = 55.0;  // m above the reference plane
  double focal = 1750.0;   // px
  int image_width = 1280;
  int image_height = 960;
  double overlap = 0.5;  // footprint fraction shared by neighbouring frames
  double pad = 2.0;      // m, survey area beyond the plant bounds

  void validate() const {
    if (!(altitude > 0 && focal > 0 && image_width > 0 && image_height > 0))
      throw InputError("capture params: non-positive geometry");
    if (!(overlap >= 0 && overlap < 0.95))
      throw InputError("capture params: overlap out of [0, 0.95)");
  }
};

// Nadir grid survey.  The grid spans the padded plant bounds entirely, so
// border modules enjoy the same multi-view coverage as interior ones; a
// plant smaller than one footprint gets a single centred frame.
inline std::vector<CameraFrame> plan_cameras(const GroundTruthPlant& plant,
                                             const CaptureParams& cap) {
  cap.validate();
  const double fw = cap.image_width * cap.altitude / cap.focal;
  const double fh = cap.image_height * cap.altitude / cap.focal;
  Vec2 extent = plant.bounds_max - plant.bounds_min + Vec2(2 * cap.pad, 2 * cap.pad);
  Vec2 center = 0.5 * (plant.bounds_min + plant.bounds_max);
  auto grid = [&](double span, double footprint, double step) {
    if (span <= footprint) return 1;
    return static_cast<int>(std::ceil(span / step)) + 1;
  };
  const double step_x = fw * (1.0 - cap.overlap);
  const double step_y = fh * (1.0 - cap.overlap);
  int nx = grid(extent.x(), fw, step_x);
  int ny = grid(extent.y(), fh, step_y);
  std::vector<CameraFrame> frames;
  int id = 0;
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      CameraFrame f;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "frame_%03d", id++);
      f.frame_id = buf;
      f.image_width = cap.image_width;
      f.image_height = cap.image_height;
      f.focal = cap.focal;
      f.principal_point = Vec2(cap.image_width / 2.0, cap.image_height / 2.0);
      f.rotation = Mat3::Identity();  // nadir, image up = north
      f.center = Vec3(center.x() + (ix - (nx - 1) / 2.0) * step_x,
                      center.y() + (iy - (ny - 1) / 2.0) * step_y, cap.altitude);
      f.geo_origin = plant.params.geo;
      frames.push_back(std::move(f));
    }
  }
  return frames;
}

// Frames in which each module is fully visible (all corners inside the image
// shrunk by margin); this is what the detection border filter keeps.
inline std::vector<int> count_observations(const GroundTruthPlant& plant,
                                           const std::vector<CameraFrame>& frames,
                                           double margin = 2.0) {
  std::vector<int> counts(plant.modules.size(), 0);
  for (const CameraFrame& f : frames) {
    for (std::size_t i = 0; i < plant.modules.size(); ++i) {
      bool all_in = true;
      for (const Vec3& c : plant.modules[i].corners) {
        std::optional<Vec2> px = f.project(c);
        if (!px || !f.inside(*px, margin)) {
          all_in = false;
          break;
        }
      }
      if (all_in) ++counts[i];
    }
  }
  return counts;
}

struct NoiseProfile {
  std::uint64_t seed = 0;
  double dropout = 0.0;             // joint detector miss probability
  double center_jitter = 0.0;       // px
  double dim_jitter = 0.0;          // relative
  double secondary_fraction = 0.15; // detections seen only by the second detector
  double secondary_shift = 0.0;     // px, constant per frame
  double duplicate_rate = 0.0;      // secondary duplicates over primary hits
  double cloud_noise = 0.0;         // m
  Vec3 warp_amplitude{0, 0, 0};     // m, reconstruction drift per axis
  double warp_wavelength = 120.0;   // m
};

inline NoiseProfile zero_noise(std::uint64_t seed = 0) {
  NoiseProfile n;
  n.seed = seed;
  n.secondary_fraction = 0.15;
  n.duplicate_rate = 0.25;
  return n;
}

inline NoiseProfile paper_noise(std::uint64_t seed) {
  NoiseProfile n;
  n.seed = seed;
  n.dropout = 0.015;
  n.center_jitter = 2.0;
  n.dim_jitter = 0.03;
  n.secondary_fraction = 0.2;
  n.secondary_shift = 3.0;
  n.duplicate_rate = 0.3;
  n.cloud_noise = 0.02;
  n.warp_amplitude = Vec3(0.2, 0.2, 0.6);
  return n;
}

// Smooth low-frequency displacement standing in for reconstruction drift;
// two sinusoids per axis, each bounded by half the axis amplitude.
class WarpField {
 public:
  WarpField() = default;
  WarpField(const Vec3& amplitude, double wavelength, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "warp"));
    for (int a = 0; a < 3; ++a) {
      for (int s = 0; s < 2; ++s) {
        Component c;
        double angle = rng.uniform(0, 2 * kPi);
        c.dir = Vec2(std::cos(angle), std::sin(angle));
        c.wavelength = wavelength * (s == 0 ? 1.0 : 0.63);
        c.phase = rng.uniform(0, 2 * kPi);
        c.amp = 0.5 * amplitude[a];
        comps_[a][s] = c;
      }
    }
  }

  Vec3 displacement(double x, double y) const {
    Vec3 d = Vec3::Zero();
    for (int a = 0; a < 3; ++a)
      for (int s = 0; s < 2; ++s) {
        const Component& c = comps_[a][s];
        d[a] += c.amp * std::sin(2 * kPi * (x * c.dir.x() + y * c.dir.y()) / c.wavelength +
                                 c.phase);
      }
    return d;
  }

 private:
  struct Component {
    Vec2 dir{1, 0};
    double wavelength = 1.0;
    double phase = 0.0;
    double amp = 0.0;
  };
  Component comps_[3][2];
};

struct SimScene {
  GroundTruthPlant plant;
  std::vector<CameraFrame> frames;
  std::vector<std::vector<ModuleDetection>> detections;  // per frame, raw
  std::vector<std::vector<int>> det_truth;               // truth id per detection
  std::vector<int> times_detected;                       // per truth module
  std::vector<ImageRaster> images;                       // empty unless rendered
  PointCloud cloud;
};

// Flat-shaded nadir rendering: bright ground, dark module quads, darker
// strips in the bench gaps.
inline ImageRaster render_frame(const GroundTruthPlant& plant, const CameraFrame& cam) {
  const Color ground{168, 150, 122};
  const Color gap_strip{52, 50, 48};
  const Color module{30, 32, 48};
  ImageRaster img(cam.image_width, cam.image_height, ground);
  const PlantParams& P = plant.params;
  const double pitch = P.pitch();
  const double bench_span = (P.modules_per_sector - 1) * pitch;
  const double bench_period = bench_span + P.gap_factor * pitch;
  const double tilt = P.tilt_deg * kPi / 180.0;
  const Vec3 v(0, std::cos(tilt), std::sin(tilt));
  auto draw_quad = [&](const std::array<Vec3, 4>& corners, Color color) {
    Polygon2 poly;
    for (const Vec3& c : corners) {
      std::optional<Vec2> px = cam.project(c);
      if (!px) return;
      poly.push_back(*px);
    }
    fill_convex(img, poly, color);
  };
  for (int c = 0; c < P.chains; ++c) {
    double y0 = -c * P.chain_pitch;
    for (int b = 0; b + 1 < P.benches_per_chain; ++b) {
      double x_left = b * bench_period + bench_span + 0.5 * P.module_width;
      double x_right = (b + 1) * bench_period - 0.5 * P.module_width;
      // Each strip edge sits on its flanking bench's anchor plane, so the
      // projected strip meets the module quads with no ground showing through.
      double z_l = sim_detail::terrain_height(P.terrain, b * bench_period + 0.5 * bench_span,
                                              y0) +
                   P.mount_height;
      double z_r = sim_detail::terrain_height(
                       P.terrain, (b + 1) * bench_period + 0.5 * bench_span, y0) +
                   P.mount_height;
      Vec3 up = 0.5 * P.module_height * v;
      Vec3 down = ((P.rows_per_bench - 1) * P.row_pitch + 0.5 * P.module_height) * v;
      draw_quad({Vec3(x_left, y0, z_l) + up, Vec3(x_right, y0, z_r) + up,
                 Vec3(x_right, y0, z_r) - down, Vec3(x_left, y0, z_l) - down},
                gap_strip);
    }
  }
  for (const GroundTruthModule& m : plant.modules) draw_quad(m.corners, module);
  return img;
}

// Point cloud with a deliberate per-module pattern: the exact center, four
// in-plane half-extent points whose k=5 average reproduces the center, and
// the corners; terrain points fill the rest of the site.  Warp and noise are
// applied to positions only.
inline PointCloud make_cloud(const GroundTruthPlant& plant, const NoiseProfile& noise) {
  const Color module_color{30, 32, 48};
  const Color ground_color{168, 150, 122};
  PointCloud cloud;
  const PlantParams& P = plant.params;
  const double tilt = P.tilt_deg * kPi / 180.0;
  const Vec3 u(1, 0, 0);
  const Vec3 v(0, std::cos(tilt), std::sin(tilt));
  for (const GroundTruthModule& m : plant.modules) {
    auto add = [&](const Vec3& p) {
      cloud.points.push_back({p, m.normal, module_color});
    };
    add(m.position);
    add(m.position + 0.25 * P.module_width * u);
    add(m.position - 0.25 * P.module_width * u);
    add(m.position + 0.25 * P.module_height * v);
    add(m.position - 0.25 * P.module_height * v);
    for (const Vec3& c : m.corners) add(c);
  }
  const TerrainParams& T = P.terrain;
  double x0 = plant.bounds_min.x() - T.margin;
  double x1 = plant.bounds_max.x() + T.margin;
  double y0 = plant.bounds_min.y() - T.margin;
  double y1 = plant.bounds_max.y() + T.margin;
  int nx = static_cast<int>((x1 - x0) / T.grid_step) + 1;
  int ny = static_cast<int>((y1 - y0) / T.grid_step) + 1;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      double x = x0 + ix * T.grid_step;
      double y = y0 + iy * T.grid_step;
      Vec3 p(x, y, sim_detail::terrain_height(T, x, y));
      cloud.points.push_back({p, sim_detail::terrain_normal(T, x, y), ground_color});
    }
  WarpField warp(noise.warp_amplitude, noise.warp_wavelength, noise.seed);
  Rng rng(derive_seed(noise.seed, "cloud"));
  for (SurfacePoint& p : cloud.points) {
    p.position += warp.displacement(p.position.x(), p.position.y());
    if (noise.cloud_noise > 0)
      p.position += Vec3(rng.normal(0, noise.cloud_noise), rng.normal(0, noise.cloud_noise),
                         rng.normal(0, noise.cloud_noise));
  }
  cloud.recompute_bounds();
  return cloud;
}

// Detections of one frame.  The box is the exact image of the module quad
// (center from the diagonal intersection, so it is the projected 3D center)
// plus the configured noise; a per-frame RNG stream keeps frames independent
// of processing order.
inline void simulate_frame_detections(const GroundTruthPlant& plant, const CameraFrame& cam,
                                      const NoiseProfile& noise,
                                      std::vector<ModuleDetection>& dets,
                                      std::vector<int>& truth_ids,
                                      std::vector<int>* times_detected) {
  Rng rng(derive_seed(noise.seed, cam.frame_id));
  double shift_angle = rng.uniform(0, 2 * kPi);
  Vec2 frame_shift = noise.secondary_shift * Vec2(std::cos(shift_angle), std::sin(shift_angle));
  for (const GroundTruthModule& m : plant.modules) {
    std::array<Vec2, 4> px;
    bool visible = true;
    for (int i = 0; i < 4; ++i) {
      std::optional<Vec2> p = cam.project(m.corners[i]);
      if (!p || !cam.inside(*p)) {
        visible = false;
        break;
      }
      px[i] = *p;
    }
    if (!visible) continue;
    if (noise.dropout > 0 && rng.bernoulli(noise.dropout)) continue;
    std::optional<Vec2> center = line_line_intersection(px[0], px[2] - px[0], px[1], px[3] - px[1]);
    if (!center) continue;
    Vec2 u_edge = 0.5 * ((px[1] - px[0]) + (px[2] - px[3]));
    Vec2 v_edge = 0.5 * ((px[3] - px[0]) + (px[2] - px[1]));
    OrientedBox box;
    box.center = *center;
    box.width = u_edge.norm();
    box.height = v_edge.norm();
    box.angle = normalize_box_angle(std::atan2(u_edge.y(), u_edge.x()));
    bool secondary_only = rng.bernoulli(noise.secondary_fraction);
    auto emit = [&](DetectorSource source, bool shifted) {
      ModuleDetection d;
      d.box = box;
      if (noise.center_jitter > 0)
        d.box.center += Vec2(rng.normal(0, noise.center_jitter),
                             rng.normal(0, noise.center_jitter));
      if (noise.dim_jitter > 0) {
        d.box.width *= 1.0 + rng.normal(0, noise.dim_jitter);
        d.box.height *= 1.0 + rng.normal(0, noise.dim_jitter);
      }
      if (shifted) d.box.center += frame_shift;
      d.source = source;
      d.frame_id = cam.frame_id;
      d.detection_index = static_cast<int>(dets.size());
      dets.push_back(std::move(d));
      truth_ids.push_back(m.truth_id);
    };
    if (secondary_only) {
      emit(DetectorSource::secondary, true);
    } else {
      emit(DetectorSource::primary, false);
      if (noise.duplicate_rate > 0 && rng.bernoulli(noise.duplicate_rate))
        emit(DetectorSource::secondary, true);
    }
    if (times_detected) ++(*times_detected)[m.truth_id];
  }
}

inline SimScene simulate_scene(const GroundTruthPlant& plant,
                               const std::vector<CameraFrame>& frames,
                               const NoiseProfile& noise, bool render_images) {
  SimScene scene;
  scene.plant = plant;
  scene.frames = frames;
  scene.detections.resize(frames.size());
  scene.det_truth.resize(frames.size());
  scene.times_detected.assign(plant.modules.size(), 0);
  for (std::size_t f = 0; f < frames.size(); ++f)
    simulate_frame_detections(plant, frames[f], noise, scene.detections[f], scene.det_truth[f],
                              &scene.times_detected);
  if (render_images) {
    scene.images.reserve(frames.size());
    for (const CameraFrame& cam : frames) scene.images.push_back(render_frame(plant, cam));
  }
  scene.cloud = make_cloud(plant, noise);
  return scene;
}

// Site presets used throughout the tests: a compact 2-row plant and a wider
// 6-row plant with short landscape modules.
inline PlantParams pp1_desk() {
  PlantParams p;
  p.chains = 3;
  p.benches_per_chain = 9;
  p.rows_per_bench = 2;
  p.modules_per_sector = 8;
  p.module_width = 1.0;
  p.module_height = 1.65;
  p.in_row_gap = 0.08;
  p.gap_factor = 1.45;
  p.row_pitch = 1.70;
  p.chain_pitch = 6.0;
  p.tilt_deg = 20.0;
  // Lowest module point sits (row_pitch + module_height/2)*sin(tilt) below the
  // anchor; the mount must keep it clear of the terrain by more than the
  // in-plane sampling radius or ground points leak into surface averages.
  p.mount_height = 1.6;
  return p;
}

// Survey preset matching the plant presets below.  Step at most half of the
// usable footprint and pad at least half of it, so every plant point sits
// fully inside at least two frames per axis: each module is then seen from
// four or more frames and a per-frame detector miss never erases a module.
inline CaptureParams desk_capture() {
  CaptureParams c;
  c.altitude = 55.0;
  c.focal = 1750.0;
  c.image_width = 1280;
  c.image_height = 960;
  c.overlap = 0.55;
  c.pad = 19.5;
  return c;
}

inline PlantParams pp2_desk() {
  PlantParams p;
  p.chains = 3;
  p.benches_per_chain = 4;
  p.rows_per_bench = 6;
  p.modules_per_sector = 9;
  p.module_width = 1.57;
  p.module_height = 0.79;
  p.in_row_gap = 0.08;
  p.gap_factor = 1.45;
  p.row_pitch = 0.85;
  p.chain_pitch = 7.0;
  p.tilt_deg = 12.0;
  // Six rows drop almost a metre from anchor to southern edge.
  p.mount_height = 1.8;
  return p;
}

}  // namespace pvmap
