#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pvmap/camera.hpp"
#include "pvmap/cloud.hpp"
#include "pvmap/detections.hpp"
#include "pvmap/errors.hpp"
#include "pvmap/optimize.hpp"
#include "pvmap/raster.hpp"
#include "pvmap/simulate.hpp"
#include "pvmap/structure.hpp"

namespace pvmap {

using Json = nlohmann::json;

namespace io_detail {

inline const Json& field(const Json& j, const char* key, const char* what) {
  auto it = j.find(key);
  if (it == j.end())
    throw InputError(std::string(what) + ": missing key \"" + key + "\"");
  return *it;
}

inline double num(const Json& j, const char* what) {
  if (!j.is_number()) throw InputError(std::string(what) + ": expected a number");
  return j.get<double>();
}

inline Vec2 vec2_of(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 2)
    throw InputError(std::string(what) + ": expected [x, y]");
  return Vec2(num(j[0], what), num(j[1], what));
}

inline Vec3 vec3_of(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 3)
    throw InputError(std::string(what) + ": expected [x, y, z]");
  return Vec3(num(j[0], what), num(j[1], what), num(j[2], what));
}

inline Json vec_json(const Vec2& v) { return Json::array({v.x(), v.y()}); }
inline Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

}  // namespace io_detail

inline Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  return j;
}

inline void save_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw InputError("write failed: " + path);
}

// ---- cameras ----

inline Json geo_origin_json(const GeoOrigin& g) {
  return Json{{"alt", g.altitude}, {"lat", g.latitude}, {"lon", g.longitude}};
}

inline GeoOrigin geo_origin_of(const Json& j) {
  using namespace io_detail;
  GeoOrigin g;
  g.latitude = num(field(j, "lat", "geo_origin"), "lat");
  g.longitude = num(field(j, "lon", "geo_origin"), "lon");
  g.altitude = num(field(j, "alt", "geo_origin"), "alt");
  return g;
}

inline Json camera_json(const CameraFrame& f) {
  Json rot = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(f.rotation(r, c));
  return Json{{"R", rot},
              {"center", io_detail::vec_json(f.center)},
              {"cx", f.principal_point.x()},
              {"cy", f.principal_point.y()},
              {"focal_px", f.focal},
              {"frame_id", f.frame_id},
              {"geo_origin", geo_origin_json(f.geo_origin)},
              {"height", f.image_height},
              {"width", f.image_width}};
}

inline void save_camera_frames(const std::string& path, const std::vector<CameraFrame>& frames) {
  Json arr = Json::array();
  for (const CameraFrame& f : frames) arr.push_back(camera_json(f));
  save_json(path, arr);
}

// Frames come back sorted by frame_id; every record is validated.
inline std::vector<CameraFrame> load_camera_frames(const std::string& path) {
  using namespace io_detail;
  Json j = load_json(path);
  if (!j.is_array()) throw InputError(path + ": expected an array of camera frames");
  std::vector<CameraFrame> frames;
  int record = 0;
  for (const Json& fj : j) {
    ++record;
    std::string where = "camera record " + std::to_string(record);
    CameraFrame f;
    const Json& id = field(fj, "frame_id", where.c_str());
    if (!id.is_string()) throw InputError(where + ": frame_id must be a string");
    f.frame_id = id.get<std::string>();
    f.image_width = static_cast<int>(num(field(fj, "width", where.c_str()), "width"));
    f.image_height = static_cast<int>(num(field(fj, "height", where.c_str()), "height"));
    f.focal = num(field(fj, "focal_px", where.c_str()), "focal_px");
    f.principal_point = Vec2(num(field(fj, "cx", where.c_str()), "cx"),
                             num(field(fj, "cy", where.c_str()), "cy"));
    const Json& rot = field(fj, "R", where.c_str());
    if (!rot.is_array() || rot.size() != 9)
      throw InputError("camera " + f.frame_id + ": R must have 9 row-major entries");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) f.rotation(r, c) = num(rot[3 * r + c], "R");
    f.center = vec3_of(field(fj, "center", where.c_str()), "center");
    f.geo_origin = geo_origin_of(field(fj, "geo_origin", where.c_str()));
    f.validate();
    frames.push_back(std::move(f));
  }
  std::sort(frames.begin(), frames.end(),
            [](const CameraFrame& a, const CameraFrame& b) { return a.frame_id < b.frame_id; });
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (frames[i].frame_id == frames[i - 1].frame_id)
      throw InputError("cameras: duplicate frame_id " + frames[i].frame_id);
  return frames;
}

// ---- detections ----

inline const char* source_name(DetectorSource s) {
  return s == DetectorSource::primary ? "primary" : "secondary";
}

inline DetectorSource source_of(const std::string& s) {
  if (s == "primary") return DetectorSource::primary;
  if (s == "secondary") return DetectorSource::secondary;
  throw InputError("detections: unknown source \"" + s + "\"");
}

inline Json detection_json(const ModuleDetection& d) {
  return Json{{"angle_rad", d.box.angle},
              {"cx", d.box.center.x()},
              {"cy", d.box.center.y()},
              {"frame_id", d.frame_id},
              {"h", d.box.height},
              {"score", d.score},
              {"source", source_name(d.source)},
              {"w", d.box.width}};
}

using DetectionMap = std::map<std::string, std::vector<ModuleDetection>>;

// One flat record per detection; frames stay grouped in frame_id order.
inline void save_detections(const std::string& path, const DetectionMap& by_frame) {
  Json arr = Json::array();
  for (const auto& [frame_id, dets] : by_frame)
    for (const ModuleDetection& d : dets) arr.push_back(detection_json(d));
  save_json(path, arr);
}

inline ModuleDetection detection_of(const Json& dj, const std::string& where) {
  using namespace io_detail;
  const Json& id = field(dj, "frame_id", where.c_str());
  if (!id.is_string()) throw InputError(where + ": frame_id must be a string");
  ModuleDetection d;
  d.frame_id = id.get<std::string>();
  d.box.center = Vec2(num(field(dj, "cx", where.c_str()), "cx"),
                      num(field(dj, "cy", where.c_str()), "cy"));
  d.box.width = num(field(dj, "w", where.c_str()), "w");
  d.box.height = num(field(dj, "h", where.c_str()), "h");
  d.box.angle = num(field(dj, "angle_rad", where.c_str()), "angle_rad");
  if (!(d.box.width > 0) || !(d.box.height > 0))
    throw InputError(where + " (frame " + d.frame_id + "): box dimensions must be positive");
  d.score = num(field(dj, "score", where.c_str()), "score");
  const Json& src = field(dj, "source", where.c_str());
  if (!src.is_string()) throw InputError(where + ": source must be a string");
  d.source = source_of(src.get<std::string>());
  return d;
}

inline DetectionMap load_detections(const std::string& path) {
  Json j = load_json(path);
  if (!j.is_array()) throw InputError(path + ": expected an array of detections");
  DetectionMap by_frame;
  int record = 0;
  for (const Json& dj : j) {
    ++record;
    ModuleDetection d = detection_of(dj, "detection record " + std::to_string(record));
    std::vector<ModuleDetection>& dets = by_frame[d.frame_id];
    d.detection_index = static_cast<int>(dets.size());
    dets.push_back(std::move(d));
  }
  return by_frame;
}

// ---- corrections ----

inline const char* correction_name(CorrectionKind k) {
  switch (k) {
    case CorrectionKind::add_keypoint: return "add_keypoint";
    case CorrectionKind::delete_keypoint: return "delete_keypoint";
    case CorrectionKind::add_module: return "add_module";
    case CorrectionKind::delete_module: return "delete_module";
  }
  throw InternalError("correction kind out of range");
}

inline void save_corrections(const std::string& path, const std::vector<Correction>& list) {
  Json arr = Json::array();
  for (const Correction& c : list) {
    Json cj{{"action", correction_name(c.kind)}, {"frame_id", c.frame_id}};
    switch (c.kind) {
      case CorrectionKind::add_keypoint:
        cj["row"] = c.row;
        cj["after"] = c.after;
        break;
      case CorrectionKind::delete_keypoint:
        cj["keypoint"] = c.keypoint;
        break;
      case CorrectionKind::add_module:
        cj["row"] = c.row;
        cj["center"] = io_detail::vec_json(c.position);
        break;
      case CorrectionKind::delete_module:
        cj["detection"] = c.detection;
        break;
    }
    arr.push_back(std::move(cj));
  }
  save_json(path, Json{{"corrections", arr}});
}

inline std::vector<Correction> load_corrections(const std::string& path) {
  using namespace io_detail;
  Json j = load_json(path);
  std::vector<Correction> list;
  const Json& arr = field(j, "corrections", "corrections");
  if (!arr.is_array()) throw InputError("corrections: \"corrections\" must be an array");
  for (const Json& cj : arr) {
    Correction c;
    const Json& action = field(cj, "action", "correction");
    if (!action.is_string()) throw InputError("correction: action must be a string");
    std::string name = action.get<std::string>();
    if (name == "add_keypoint") c.kind = CorrectionKind::add_keypoint;
    else if (name == "delete_keypoint") c.kind = CorrectionKind::delete_keypoint;
    else if (name == "add_module") c.kind = CorrectionKind::add_module;
    else if (name == "delete_module") c.kind = CorrectionKind::delete_module;
    else throw InputError("correction: unknown action \"" + name + "\"");
    const Json& id = field(cj, "frame_id", "correction");
    if (!id.is_string()) throw InputError("correction: frame_id must be a string");
    c.frame_id = id.get<std::string>();
    switch (c.kind) {
      case CorrectionKind::add_keypoint:
        c.row = static_cast<int>(num(field(cj, "row", "correction"), "row"));
        c.after = static_cast<int>(num(field(cj, "after", "correction"), "after"));
        break;
      case CorrectionKind::delete_keypoint:
        c.keypoint = static_cast<int>(num(field(cj, "keypoint", "correction"), "keypoint"));
        break;
      case CorrectionKind::add_module:
        c.row = static_cast<int>(num(field(cj, "row", "correction"), "row"));
        c.position = vec2_of(field(cj, "center", "correction"), "center");
        break;
      case CorrectionKind::delete_module:
        c.detection = static_cast<int>(num(field(cj, "detection", "correction"), "detection"));
        break;
    }
    list.push_back(std::move(c));
  }
  return list;
}

// ---- point cloud ----

inline void save_cloud(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << "# x y z nx ny nz r g b\n";
  char line[256];
  for (const SurfacePoint& p : cloud.points) {
    std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g %.17g %.17g %d %d %d\n",
                  p.position.x(), p.position.y(), p.position.z(), p.normal.x(), p.normal.y(),
                  p.normal.z(), p.color[0], p.color[1], p.color[2]);
    out << line;
  }
  if (!out) throw InputError("write failed: " + path);
}

inline PointCloud load_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  PointCloud cloud;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    SurfacePoint p;
    int r, g, b;
    if (!(ss >> p.position.x() >> p.position.y() >> p.position.z() >> p.normal.x() >>
          p.normal.y() >> p.normal.z() >> r >> g >> b))
      throw InputError(path + ":" + std::to_string(line_no) + ": expected 9 fields");
    std::string where = path + ":" + std::to_string(line_no) + " (point " +
                        std::to_string(cloud.points.size()) + ")";
    if (!p.position.allFinite()) throw InputError(where + ": non-finite coordinate");
    if (!p.normal.allFinite()) throw InputError(where + ": non-finite normal");
    double n = p.normal.norm();
    if (n < 0.99 || n > 1.01) throw InputError(where + ": normal is not unit length");
    p.normal /= n;
    if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255)
      throw InputError(where + ": color out of range");
    p.color = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
               static_cast<std::uint8_t>(b)};
    cloud.points.push_back(p);
  }
  if (cloud.points.empty()) throw InputError(path + ": point cloud is empty");
  cloud.recompute_bounds();
  return cloud;
}

// ---- ground truth ----

inline void save_truth(const std::string& path, const GroundTruthPlant& plant) {
  using io_detail::vec_json;
  Json params{{"benches_per_chain", plant.params.benches_per_chain},
              {"chain_pitch", plant.params.chain_pitch},
              {"chains", plant.params.chains},
              {"gap_factor", plant.params.gap_factor},
              {"in_row_gap", plant.params.in_row_gap},
              {"module_height", plant.params.module_height},
              {"module_width", plant.params.module_width},
              {"modules_per_sector", plant.params.modules_per_sector},
              {"mount_height", plant.params.mount_height},
              {"row_pitch", plant.params.row_pitch},
              {"rows_per_bench", plant.params.rows_per_bench},
              {"tilt_deg", plant.params.tilt_deg}};
  params["terrain"] = Json{{"amplitude", plant.params.terrain.amplitude},
                           {"grid_step", plant.params.terrain.grid_step},
                           {"margin", plant.params.terrain.margin},
                           {"wavelength_x", plant.params.terrain.wavelength_x},
                           {"wavelength_y", plant.params.terrain.wavelength_y}};
  params["geo_origin"] = geo_origin_json(plant.params.geo);
  Json modules = Json::array();
  for (const GroundTruthModule& m : plant.modules) {
    Json corners = Json::array();
    for (const Vec3& c : m.corners) corners.push_back(vec_json(c));
    modules.push_back(Json{{"bench", m.bench},
                           {"corners", corners},
                           {"in_row", m.in_row},
                           {"line", m.line},
                           {"normal", vec_json(m.normal)},
                           {"position", vec_json(m.position)},
                           {"row", m.row},
                           {"sector", m.sector},
                           {"truth_id", m.truth_id}});
  }
  save_json(path, Json{{"modules", modules}, {"params", params}});
}

inline GroundTruthPlant load_truth(const std::string& path) {
  using namespace io_detail;
  Json j = load_json(path);
  GroundTruthPlant plant;
  const Json& pj = field(j, "params", "truth");
  plant.params.chains = static_cast<int>(num(field(pj, "chains", "truth"), "chains"));
  plant.params.benches_per_chain =
      static_cast<int>(num(field(pj, "benches_per_chain", "truth"), "benches_per_chain"));
  plant.params.rows_per_bench =
      static_cast<int>(num(field(pj, "rows_per_bench", "truth"), "rows_per_bench"));
  plant.params.modules_per_sector =
      static_cast<int>(num(field(pj, "modules_per_sector", "truth"), "modules_per_sector"));
  plant.params.module_width = num(field(pj, "module_width", "truth"), "module_width");
  plant.params.module_height = num(field(pj, "module_height", "truth"), "module_height");
  plant.params.in_row_gap = num(field(pj, "in_row_gap", "truth"), "in_row_gap");
  plant.params.gap_factor = num(field(pj, "gap_factor", "truth"), "gap_factor");
  plant.params.row_pitch = num(field(pj, "row_pitch", "truth"), "row_pitch");
  plant.params.chain_pitch = num(field(pj, "chain_pitch", "truth"), "chain_pitch");
  plant.params.tilt_deg = num(field(pj, "tilt_deg", "truth"), "tilt_deg");
  plant.params.mount_height = num(field(pj, "mount_height", "truth"), "mount_height");
  const Json& tj = field(pj, "terrain", "truth");
  plant.params.terrain.amplitude = num(field(tj, "amplitude", "terrain"), "amplitude");
  plant.params.terrain.wavelength_x = num(field(tj, "wavelength_x", "terrain"), "wavelength_x");
  plant.params.terrain.wavelength_y = num(field(tj, "wavelength_y", "terrain"), "wavelength_y");
  plant.params.terrain.grid_step = num(field(tj, "grid_step", "terrain"), "grid_step");
  plant.params.terrain.margin = num(field(tj, "margin", "terrain"), "margin");
  plant.params.geo = geo_origin_of(field(pj, "geo_origin", "truth"));
  for (const Json& mj : field(j, "modules", "truth")) {
    GroundTruthModule m;
    m.truth_id = static_cast<int>(num(field(mj, "truth_id", "truth module"), "truth_id"));
    m.line = static_cast<int>(num(field(mj, "line", "truth module"), "line"));
    m.bench = static_cast<int>(num(field(mj, "bench", "truth module"), "bench"));
    m.sector = static_cast<int>(num(field(mj, "sector", "truth module"), "sector"));
    m.row = static_cast<int>(num(field(mj, "row", "truth module"), "row"));
    m.in_row = static_cast<int>(num(field(mj, "in_row", "truth module"), "in_row"));
    m.position = vec3_of(field(mj, "position", "truth module"), "position");
    m.normal = vec3_of(field(mj, "normal", "truth module"), "normal");
    const Json& corners = field(mj, "corners", "truth module");
    if (!corners.is_array() || corners.size() != 4)
      throw InputError("truth module: corners must have 4 entries");
    for (int i = 0; i < 4; ++i) m.corners[i] = vec3_of(corners[i], "corner");
    plant.modules.push_back(std::move(m));
  }
  if (plant.modules.empty()) throw InputError("truth: no modules");
  plant.bounds_min = Vec2(plant.modules[0].position.x(), plant.modules[0].position.y());
  plant.bounds_max = plant.bounds_min;
  for (const GroundTruthModule& m : plant.modules)
    for (const Vec3& c : m.corners) {
      plant.bounds_min = plant.bounds_min.cwiseMin(Vec2(c.x(), c.y()));
      plant.bounds_max = plant.bounds_max.cwiseMax(Vec2(c.x(), c.y()));
    }
  return plant;
}

// ---- plant model ----

inline void save_model(const std::string& path, const BuildModelResult& result) {
  using io_detail::vec_json;
  std::map<int, Vec3> raw_by_id;
  for (const RawPose& r : result.raw) raw_by_id[r.global_id] = r.position;
  Json modules = Json::array();
  for (const ModulePose& m : result.model.modules) {
    Json mj{{"axis", vec_json(m.axis)},
            {"bench_id", m.bench},
            {"global_id", m.global_id},
            {"height_m", m.height_m},
            {"in_row_index", m.in_row_index},
            {"line_id", m.line},
            {"n_detections", m.n_observations},
            {"normal", vec_json(m.normal)},
            {"position", vec_json(m.position)},
            {"row_index", m.row_index},
            {"sector_id", m.sector},
            {"width_m", m.width_m}};
    auto it = raw_by_id.find(m.global_id);
    if (it != raw_by_id.end()) mj["raw_position"] = vec_json(it->second);
    modules.push_back(std::move(mj));
  }
  Json benches = Json::array();
  for (const BenchInfo& b : result.model.benches)
    benches.push_back(Json{{"bench_id", b.bench_id},
                           {"direction", vec_json(b.axis.direction)},
                           {"optimized", b.optimized},
                           {"origin", vec_json(b.axis.origin)}});
  Json j{{"benches", benches},
         {"flagged_benches", result.flagged_benches},
         {"geo_origin", geo_origin_json(result.model.geo_origin)},
         {"modules", modules},
         {"notes", result.notes}};
  save_json(path, j);
}

inline BuildModelResult load_model(const std::string& path) {
  using namespace io_detail;
  Json j = load_json(path);
  BuildModelResult result;
  result.model.geo_origin = geo_origin_of(field(j, "geo_origin", "model"));
  for (const Json& bj : field(j, "benches", "model")) {
    BenchInfo b;
    b.bench_id = static_cast<int>(num(field(bj, "bench_id", "model bench"), "bench_id"));
    b.axis.origin = vec3_of(field(bj, "origin", "model bench"), "origin");
    b.axis.direction = vec3_of(field(bj, "direction", "model bench"), "direction");
    b.optimized = field(bj, "optimized", "model bench").get<bool>();
    result.model.benches.push_back(std::move(b));
  }
  for (const Json& mj : field(j, "modules", "model")) {
    ModulePose m;
    m.global_id = static_cast<int>(num(field(mj, "global_id", "model module"), "global_id"));
    m.position = vec3_of(field(mj, "position", "model module"), "position");
    m.normal = vec3_of(field(mj, "normal", "model module"), "normal");
    m.axis = vec3_of(field(mj, "axis", "model module"), "axis");
    m.width_m = num(field(mj, "width_m", "model module"), "width_m");
    m.height_m = num(field(mj, "height_m", "model module"), "height_m");
    m.line = static_cast<int>(num(field(mj, "line_id", "model module"), "line_id"));
    m.bench = static_cast<int>(num(field(mj, "bench_id", "model module"), "bench_id"));
    m.sector = static_cast<int>(num(field(mj, "sector_id", "model module"), "sector_id"));
    m.row_index = static_cast<int>(num(field(mj, "row_index", "model module"), "row_index"));
    m.in_row_index =
        static_cast<int>(num(field(mj, "in_row_index", "model module"), "in_row_index"));
    m.n_observations =
        static_cast<int>(num(field(mj, "n_detections", "model module"), "n_detections"));
    if (mj.contains("raw_position"))
      result.raw.push_back({m.global_id, vec3_of(mj["raw_position"], "raw_position")});
    result.model.modules.push_back(std::move(m));
  }
  if (j.contains("flagged_benches")) result.flagged_benches = j["flagged_benches"].get<int>();
  if (j.contains("notes")) result.notes = j["notes"].get<std::vector<std::string>>();
  return result;
}

// ---- images ----

inline void save_ppm(const std::string& path, const ImageRaster& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw InputError("write failed: " + path);
}

inline ImageRaster load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    throw InputError(path + ": not a P6 ppm with maxval 255");
  in.get();  // single whitespace after the header
  ImageRaster img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw InputError(path + ": truncated pixel data");
  return img;
}

// ---- flat config ----

// "key = value" lines with '#' comments; dotted keys pick the section,
// e.g. "infer.rows_per_bench = 2".
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw InputError(path + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw InputError(path + ":" + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second)
      throw InputError(path + ":" + std::to_string(line_no) + ": duplicate key " + key);
  }
  return out;
}

}  // namespace pvmap
