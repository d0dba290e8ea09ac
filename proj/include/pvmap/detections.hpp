#pragma once

#include <string>
#include <vector>

#include "pvmap/errors.hpp"
#include "pvmap/geometry.hpp"
#include "pvmap/stats.hpp"

namespace pvmap {

enum class DetectorSource { primary, secondary };

struct ModuleDetection {
  OrientedBox box;
  DetectorSource source = DetectorSource::primary;
  std::string frame_id;
  int detection_index = 0;  // position in the frame's original detection list
  double score = 1.0;       // detector confidence, carried through untouched
};

struct DetectFuseConfig {
  double edge_margin = 2.0;         // px, border strip excluded from analysis
  double overlap_threshold = 0.20;  // of the smaller box's area
  double dim_tolerance = 0.4;       // relative, around the representative box
  double fusion_min_sep = 0.5;      // of the representative diagonal

  void validate() const {
    if (edge_margin < 0) throw InputError("detect config: edge_margin must be >= 0");
    if (!(overlap_threshold > 0))
      throw InputError("detect config: overlap_threshold must be positive");
    if (dim_tolerance < 0 || dim_tolerance >= 1)
      throw InputError("detect config: dim_tolerance must be in [0, 1)");
    if (!(fusion_min_sep > 0)) throw InputError("detect config: fusion_min_sep must be positive");
  }
};

// Keep only boxes whose four corners are strictly inside the image shrunk by
// margin; partially visible modules near the border are unreliable.
inline std::vector<ModuleDetection> discard_edge_detections(
    const std::vector<ModuleDetection>& dets, int width, int height, double margin) {
  std::vector<ModuleDetection> out;
  out.reserve(dets.size());
  for (const ModuleDetection& det : dets) {
    bool ok = true;
    for (const Vec2& c : det.box.corners()) {
      if (!(c.x() > margin && c.x() < width - margin && c.y() > margin &&
            c.y() < height - margin)) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(det);
  }
  return out;
}

// Drop every box that overlaps some other box by more than the threshold
// (ratio of intersection area to the smaller box's area).  Both partners of
// an overlapping pair are dropped; the checks run against the original set so
// the result does not depend on processing order.
inline std::vector<ModuleDetection> discard_overlapping(const std::vector<ModuleDetection>& dets,
                                                        double threshold) {
  std::vector<bool> drop(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      double reach =
          0.5 * (dets[i].box.diagonal() + dets[j].box.diagonal());
      if ((dets[i].box.center - dets[j].box.center).norm() > reach) continue;
      double inter = intersection_area(dets[i].box, dets[j].box);
      if (inter <= 0) continue;
      double smaller = std::min(dets[i].box.area(), dets[j].box.area());
      if (smaller <= 0) continue;
      if (inter / smaller > threshold) {
        drop[i] = true;
        drop[j] = true;
      }
    }
  }
  std::vector<ModuleDetection> out;
  out.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (!drop[i]) out.push_back(dets[i]);
  return out;
}

namespace detail {

// Medoid under the half-turn-periodic angle metric; ties resolve to the
// smaller canonical angle.
inline double circular_median_angle(const std::vector<double>& angles) {
  double best = normalize_box_angle(angles[0]);
  double best_cost = std::numeric_limits<double>::infinity();
  for (double a : angles) {
    double cost = 0.0;
    for (double b : angles) cost += box_angle_distance(a, b);
    double na = normalize_box_angle(a);
    if (cost < best_cost || (cost == best_cost && na < best)) {
      best_cost = cost;
      best = na;
    }
  }
  return best;
}

}  // namespace detail

// Median width/height and the circular median orientation over a frame's
// detections; stands in for the typical module of that frame.
inline OrientedBox representative_box(const std::vector<ModuleDetection>& dets) {
  if (dets.empty()) throw InputError("representative_box: no detections");
  std::vector<double> ws, hs, as;
  ws.reserve(dets.size());
  hs.reserve(dets.size());
  as.reserve(dets.size());
  for (const ModuleDetection& d : dets) {
    ws.push_back(d.box.width);
    hs.push_back(d.box.height);
    as.push_back(d.box.angle);
  }
  OrientedBox rep;
  rep.center = Vec2::Zero();
  rep.width = median(ws);
  rep.height = median(hs);
  rep.angle = detail::circular_median_angle(as);
  return rep;
}

// Keep boxes whose dimensions are within the relative tolerance of the
// representative (bounds inclusive).
inline std::vector<ModuleDetection> filter_by_dimensions(const std::vector<ModuleDetection>& dets,
                                                         const OrientedBox& rep,
                                                         double tolerance) {
  std::vector<ModuleDetection> out;
  out.reserve(dets.size());
  for (const ModuleDetection& d : dets) {
    bool w_ok = d.box.width >= (1.0 - tolerance) * rep.width &&
                d.box.width <= (1.0 + tolerance) * rep.width;
    bool h_ok = d.box.height >= (1.0 - tolerance) * rep.height &&
                d.box.height <= (1.0 + tolerance) * rep.height;
    if (w_ok && h_ok) out.push_back(d);
  }
  return out;
}

// Primary detections win; a secondary detection survives only when its center
// keeps at least min_sep * |rep diagonal| from every primary center.
inline std::vector<ModuleDetection> fuse_detectors(const std::vector<ModuleDetection>& primary,
                                                   const std::vector<ModuleDetection>& secondary,
                                                   const OrientedBox& rep, double min_sep) {
  std::vector<ModuleDetection> out = primary;
  const double sep = min_sep * rep.diagonal();
  for (const ModuleDetection& s : secondary) {
    bool keep = true;
    for (const ModuleDetection& p : primary) {
      if ((s.box.center - p.box.center).norm() < sep) {
        keep = false;
        break;
      }
    }
    if (keep) out.push_back(s);
  }
  return out;
}

struct FusedFrame {
  std::vector<ModuleDetection> detections;
  OrientedBox rep_box;
  int image_width = 0;
  int image_height = 0;
  int raw_count = 0;
  int after_edge = 0;
  int after_overlap = 0;
  int after_dims = 0;
};

// Full per-frame pipeline: border filter and mutual-overlap filter per
// detector (a cross-detector duplicate is legitimate and resolved by the
// fusion step, not the overlap filter), then representative box and
// dimension filter over the union, then primary/secondary fusion.
inline FusedFrame fuse_frame_detections(const std::vector<ModuleDetection>& raw, int width,
                                        int height, const DetectFuseConfig& cfg) {
  FusedFrame result;
  result.image_width = width;
  result.image_height = height;
  result.raw_count = static_cast<int>(raw.size());
  std::vector<ModuleDetection> prim, sec;
  for (const ModuleDetection& d : raw)
    (d.source == DetectorSource::primary ? prim : sec).push_back(d);
  prim = discard_edge_detections(prim, width, height, cfg.edge_margin);
  sec = discard_edge_detections(sec, width, height, cfg.edge_margin);
  result.after_edge = static_cast<int>(prim.size() + sec.size());
  prim = discard_overlapping(prim, cfg.overlap_threshold);
  sec = discard_overlapping(sec, cfg.overlap_threshold);
  result.after_overlap = static_cast<int>(prim.size() + sec.size());
  if (prim.empty() && sec.empty())
    throw InputError("fuse_frame_detections: no detections survive filtering");
  std::vector<ModuleDetection> all = prim;
  all.insert(all.end(), sec.begin(), sec.end());
  result.rep_box = representative_box(all);
  prim = filter_by_dimensions(prim, result.rep_box, cfg.dim_tolerance);
  sec = filter_by_dimensions(sec, result.rep_box, cfg.dim_tolerance);
  result.after_dims = static_cast<int>(prim.size() + sec.size());
  result.detections = fuse_detectors(prim, sec, result.rep_box, cfg.fusion_min_sep);
  return result;
}

}  // namespace pvmap
