#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "pvmap/evaluate.hpp"
#include "pvmap/io.hpp"

namespace pvmap {

// Module footprints as WGS84 polygons (one Feature per module, exterior ring
// counter-clockwise).  Positions are ENU meters around the geo origin.
inline Json model_geojson(const PlantModel& model) {
  Json features = Json::array();
  for (const ModulePose& m : model.modules) {
    Vec3 cross = m.normal.cross(m.axis).normalized();
    Vec3 hw = 0.5 * m.width_m * m.axis;
    Vec3 hh = 0.5 * m.height_m * cross;
    std::array<Vec3, 4> corners = {m.position - hw - hh, m.position + hw - hh,
                                   m.position + hw + hh, m.position - hw + hh};
    Json ring = Json::array();
    for (int i = 0; i <= 4; ++i) {
      double lat, lon, alt;
      enu_to_geodetic(corners[i % 4], model.geo_origin, lat, lon, alt);
      ring.push_back(Json::array({lon, lat}));
    }
    Json geometry{{"coordinates", Json::array({ring})}, {"type", "Polygon"}};
    Json properties{{"bench", m.bench},
                    {"global_id", m.global_id},
                    {"height_m", m.height_m},
                    {"in_row", m.in_row_index},
                    {"line", m.line},
                    {"observations", m.n_observations},
                    {"row", m.row_index},
                    {"sector", m.sector},
                    {"width_m", m.width_m}};
    features.push_back(
        Json{{"geometry", geometry}, {"properties", properties}, {"type", "Feature"}});
  }
  return Json{{"features", features}, {"type", "FeatureCollection"}};
}

// Flat per-module table; one row per module, raw (pre-optimization) position
// included when known.
inline std::string model_csv(const BuildModelResult& result) {
  std::map<int, Vec3> raw_by_id;
  for (const RawPose& r : result.raw) raw_by_id[r.global_id] = r.position;
  std::string out =
      "global_id,line,bench,sector,row,in_row,x,y,z,nx,ny,nz,ax,ay,az,"
      "width_m,height_m,observations,raw_x,raw_y,raw_z\n";
  char line[512];
  for (const ModulePose& m : result.model.modules) {
    auto it = raw_by_id.find(m.global_id);
    Vec3 raw = it == raw_by_id.end() ? m.position : it->second;
    std::snprintf(line, sizeof(line),
                  "%d,%d,%d,%d,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,"
                  "%.9g,%.9g,%d,%.9g,%.9g,%.9g\n",
                  m.global_id, m.line, m.bench, m.sector, m.row_index, m.in_row_index,
                  m.position.x(), m.position.y(), m.position.z(), m.normal.x(), m.normal.y(),
                  m.normal.z(), m.axis.x(), m.axis.y(), m.axis.z(), m.width_m, m.height_m,
                  m.n_observations, raw.x(), raw.y(), raw.z());
    out += line;
  }
  return out;
}

namespace svg_detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace svg_detail

// Diagnostic overlay of one frame in image coordinates: detection boxes,
// fitted rows, gap keypoints, hypothesized modules and sector bounds.
inline std::string structure_svg(const ImageStructure& S,
                                 const std::vector<ModuleDetection>& dets,
                                 const std::string& background_href = "") {
  using svg_detail::fmt;
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(S.image_width) +
         "\" height=\"" + std::to_string(S.image_height) + "\" viewBox=\"0 0 " +
         std::to_string(S.image_width) + " " + std::to_string(S.image_height) + "\">\n";
  if (!background_href.empty())
    svg += "  <image href=\"" + background_href + "\" width=\"" +
           std::to_string(S.image_width) + "\" height=\"" + std::to_string(S.image_height) +
           "\"/>\n";
  auto box_rect = [&](const OrientedBox& b, const char* stroke, const char* dash) {
    std::string r = "  <rect x=\"" + fmt(b.center.x() - 0.5 * b.width) + "\" y=\"" +
                    fmt(b.center.y() - 0.5 * b.height) + "\" width=\"" + fmt(b.width) +
                    "\" height=\"" + fmt(b.height) + "\" transform=\"rotate(" +
                    fmt(b.angle * 180.0 / kPi) + " " + fmt(b.center.x()) + " " +
                    fmt(b.center.y()) + ")\" fill=\"none\" stroke=\"" + stroke + "\"";
    if (dash[0]) r += std::string(" stroke-dasharray=\"") + dash + "\"";
    r += "/>\n";
    return r;
  };
  for (const ModuleDetection& d : dets)
    svg += box_rect(d.box, d.source == DetectorSource::primary ? "#2e7df6" : "#f6a72e", "");
  auto slot_center = [&](const ModuleSlot& slot) {
    return slot.hypothesized ? S.hypothesized[slot.index].center : dets[slot.index].box.center;
  };
  for (const RowLine& r : S.rows) {
    if (r.inliers.empty()) continue;
    Vec2 a = dets[r.inliers.front()].box.center - 0.5 * r.median_spacing * r.direction;
    Vec2 b = dets[r.inliers.back()].box.center + 0.5 * r.median_spacing * r.direction;
    svg += "  <line x1=\"" + fmt(a.x()) + "\" y1=\"" + fmt(a.y()) + "\" x2=\"" + fmt(b.x()) +
           "\" y2=\"" + fmt(b.y()) + "\" stroke=\"#21a179\" stroke-width=\"1.5\"/>\n";
  }
  for (const HypothesizedModule& h : S.hypothesized) {
    OrientedBox b = S.rep_box;
    b.center = h.center;
    svg += box_rect(b, "#c03ae8", "6 4");
  }
  for (const GapKeypoint& k : S.keypoints) {
    bool gap = k.kind == GapKind::bench_gap;
    svg += "  <circle cx=\"" + fmt(k.midpoint.x()) + "\" cy=\"" + fmt(k.midpoint.y()) +
           "\" r=\"5\" fill=\"" + (gap ? "#e03131" : "none") + "\" stroke=\"" +
           (gap ? "#e03131" : "#888888") + "\"";
    if (k.synthetic) svg += " stroke-dasharray=\"2 2\"";
    svg += "/>\n";
  }
  for (const Sector& s : S.sectors) {
    if (s.slots.empty()) continue;
    const RowLine& row = S.rows[s.row];
    auto tick = [&](const SectorBound& bound, const Vec2& outer, double sign) {
      if (bound.kind == BoundKind::keypoint) return;  // the keypoint dot marks it
      Vec2 at = outer + sign * 0.5 * row.median_spacing * row.direction;
      Vec2 n(-row.direction.y(), row.direction.x());
      Vec2 a = at - 8.0 * n, b = at + 8.0 * n;
      const char* stroke = bound.kind == BoundKind::row_end ? "#5f3dc4" : "#e8590c";
      svg += "  <line x1=\"" + fmt(a.x()) + "\" y1=\"" + fmt(a.y()) + "\" x2=\"" + fmt(b.x()) +
             "\" y2=\"" + fmt(b.y()) + "\" stroke=\"" + std::string(stroke) +
             "\" stroke-width=\"2\"/>\n";
    };
    tick(s.left, slot_center(s.slots.front()), -1.0);
    tick(s.right, slot_center(s.slots.back()), 1.0);
  }
  svg += "</svg>\n";
  return svg;
}

// ---- evaluation report pieces ----

inline Json five_point_json(const FivePoint& f) {
  return Json{{"count", f.count}, {"max", f.max},    {"median", f.median},
              {"min", f.min},     {"q1", f.q1},      {"q3", f.q3}};
}

inline Json consistency_json(const ConsistencyReport& c) {
  return Json{{"dnorm", five_point_json(c.dnorm)},
              {"dx", five_point_json(c.dx)},
              {"dy", five_point_json(c.dy)},
              {"dz", five_point_json(c.dz)}};
}

inline Json spacing_json(const SpacingReport& s) {
  return Json{{"column_spacing", five_point_json(s.column_spacing)},
              {"row_spacing", five_point_json(s.row_spacing)}};
}

inline Json reference_json(const ReferenceReport& r) {
  Json rot = Json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rot.push_back(r.rotation(i, j));
  return Json{{"pairs", r.pairs},
              {"residual", five_point_json(r.residual)},
              {"residual_x", five_point_json(r.residual_x)},
              {"residual_y", five_point_json(r.residual_y)},
              {"residual_z", five_point_json(r.residual_z)},
              {"rmse", r.rmse},
              {"rotation", rot},
              {"translation", io_detail::vec_json(r.translation)},
              {"unmatched_model", r.unmatched_model},
              {"unmatched_reference", r.unmatched_reference}};
}

inline Json score_json(const ScoreReport& s) {
  return Json{{"abs_med_x", s.abs_med_x},
              {"abs_med_y", s.abs_med_y},
              {"abs_med_z", s.abs_med_z},
              {"bench_accuracy", s.bench_accuracy},
              {"err_x", five_point_json(s.err_x)},
              {"err_y", five_point_json(s.err_y)},
              {"err_z", five_point_json(s.err_z)},
              {"in_row_accuracy", s.in_row_accuracy},
              {"line_accuracy", s.line_accuracy},
              {"match_radius", s.match_radius},
              {"matched", s.matched},
              {"model_count", s.model_count},
              {"recall", s.recall},
              {"rmse", s.rmse},
              {"row_accuracy", s.row_accuracy},
              {"sector_accuracy", s.sector_accuracy},
              {"spurious", s.spurious},
              {"truth_count", s.truth_count},
              {"tuple_accuracy", s.tuple_accuracy}};
}

inline void save_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
  if (!out) throw InputError("write failed: " + path);
}

}  // namespace pvmap
