#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pvmap/evaluate.hpp"
#include "pvmap/export.hpp"
#include "pvmap/io.hpp"
#include "pvmap/serialize.hpp"

namespace pvmap {

struct PipelinePaths {
  std::string cameras;
  std::string detections;
  std::string cloud;
  std::string images_dir;   // optional; <dir>/<frame_id>.ppm
  std::string corrections;  // optional
  std::string reference;    // optional, a model file
  std::string truth;        // optional, simulator ground truth
  std::string out_dir = "out";
};

struct PipelineConfig {
  PipelinePaths io;
  DetectFuseConfig detect;
  StructureConfig infer;
  LiftConfig lift;
  MatchConfig match;
  OptimizeConfig optimize;
  std::vector<int> eval_anchors;  // global ids anchoring the reference alignment
  std::uint64_t seed = 0;
  bool strict = false;
  bool keep_intermediates = false;
};

namespace cfg_detail {

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (...) {
    pos = std::string::npos;
  }
  if (pos != v.size() || v.empty())
    throw InputError("config " + key + ": expected a number, got \"" + v + "\"");
  return d;
}

inline int to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long n = 0;
  try {
    n = std::stoll(v, &pos);
  } catch (...) {
    pos = std::string::npos;
  }
  if (pos != v.size() || v.empty())
    throw InputError("config " + key + ": expected an integer, got \"" + v + "\"");
  return static_cast<int>(n);
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (...) {
    pos = std::string::npos;
  }
  if (pos != v.size() || v.empty())
    throw InputError("config " + key + ": expected an unsigned integer, got \"" + v + "\"");
  return n;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InputError("config " + key + ": expected a boolean, got \"" + v + "\"");
}

inline std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    std::size_t b = item.find_first_not_of(" \t");
    std::size_t e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw InputError("config " + key + ": empty list entry");
    out.push_back(to_int(key, item.substr(b, e - b + 1)));
  }
  return out;
}

}  // namespace cfg_detail

// Applies "section.key" entries onto the defaults; unknown keys are errors so
// typos never silently fall back to a default.
inline void apply_config(PipelineConfig& cfg, const std::map<std::string, std::string>& kv) {
  using namespace cfg_detail;
  for (const auto& [key, value] : kv) {
    if (key == "io.cameras") cfg.io.cameras = value;
    else if (key == "io.detections") cfg.io.detections = value;
    else if (key == "io.cloud") cfg.io.cloud = value;
    else if (key == "io.images_dir") cfg.io.images_dir = value;
    else if (key == "io.corrections") cfg.io.corrections = value;
    else if (key == "io.reference") cfg.io.reference = value;
    else if (key == "io.truth") cfg.io.truth = value;
    else if (key == "io.out_dir") cfg.io.out_dir = value;
    else if (key == "detect.edge_margin") cfg.detect.edge_margin = to_double(key, value);
    else if (key == "detect.overlap_threshold") cfg.detect.overlap_threshold = to_double(key, value);
    else if (key == "detect.dim_tolerance") cfg.detect.dim_tolerance = to_double(key, value);
    else if (key == "detect.fusion_min_sep") cfg.detect.fusion_min_sep = to_double(key, value);
    else if (key == "infer.rows_per_bench") cfg.infer.rows_per_bench = to_int(key, value);
    else if (key == "infer.th") cfg.infer.th = to_double(key, value);
    else if (key == "infer.n_max") cfg.infer.n_max = to_int(key, value);
    else if (key == "infer.min_inliers") cfg.infer.min_inliers = to_int(key, value);
    else if (key == "infer.ransac_trials") cfg.infer.ransac_trials = to_int(key, value);
    else if (key == "infer.residual_factor") cfg.infer.residual_factor = to_double(key, value);
    else if (key == "infer.coincide_factor") cfg.infer.coincide_factor = to_double(key, value);
    else if (key == "infer.darkness_ratio") cfg.infer.darkness_ratio = to_double(key, value);
    else if (key == "infer.end_clearance") cfg.infer.end_clearance = to_double(key, value);
    else if (key == "infer.edge_margin") cfg.infer.edge_margin = to_double(key, value);
    else if (key == "infer.north_up") cfg.infer.north_up = to_bool(key, value);
    else if (key == "lift.knn_k") cfg.lift.knn_k = to_int(key, value);
    else if (key == "lift.max_ray_residual") cfg.lift.max_ray_residual = to_double(key, value);
    else if (key == "lift.voxel_cell_factor") cfg.lift.voxel_cell_factor = to_double(key, value);
    else if (key == "match.dist_threshold") cfg.match.dist_threshold = to_double(key, value);
    else if (key == "match.max_repairs") cfg.match.max_repairs = to_int(key, value);
    else if (key == "optimize.ransac3d_threshold")
      cfg.optimize.ransac_threshold = to_double(key, value);
    else if (key == "optimize.ransac3d_trials") cfg.optimize.ransac_trials = to_int(key, value);
    else if (key == "optimize.angle_limit_deg") cfg.optimize.angle_limit_deg = to_double(key, value);
    else if (key == "optimize.enforce_pitch") cfg.optimize.enforce_pitch = to_double(key, value);
    else if (key == "evaluate.anchors") cfg.eval_anchors = to_int_list(key, value);
    else if (key == "seed") cfg.seed = to_u64(key, value);
    else if (key == "strict") cfg.strict = to_bool(key, value);
    else if (key == "keep_intermediates") cfg.keep_intermediates = to_bool(key, value);
    else throw InputError("unknown config key \"" + key + "\"");
  }
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  PipelineConfig cfg;
  apply_config(cfg, parse_config_file(path));
  return cfg;
}

// Warnings describe data inconsistencies (fatal under --strict); notes are
// informational (skipped frames, applied corrections, repairs).
struct StageLog {
  std::vector<std::string> warnings;
  std::vector<std::string> notes;
};

// ---- stages ------------------------------------------------------------

inline std::map<std::string, FusedFrame> run_fuse_stage(
    const std::vector<CameraFrame>& cameras, const DetectionMap& dets,
    const DetectFuseConfig& cfg, StageLog& log) {
  cfg.validate();
  std::map<std::string, const CameraFrame*> cam_by_id;
  for (const CameraFrame& c : cameras) cam_by_id[c.frame_id] = &c;
  for (const auto& [frame_id, list] : dets)
    if (!cam_by_id.count(frame_id))
      log.warnings.push_back("detections reference unknown frame_id " + frame_id +
                             "; no camera, frame skipped");
  std::map<std::string, FusedFrame> fused;
  for (const CameraFrame& cam : cameras) {
    auto it = dets.find(cam.frame_id);
    if (it == dets.end() || it->second.empty()) {
      log.notes.push_back(cam.frame_id + ": no detections, frame skipped");
      continue;
    }
    try {
      fused.emplace(cam.frame_id,
                    fuse_frame_detections(it->second, cam.image_width, cam.image_height, cfg));
    } catch (const InputError& e) {
      log.warnings.push_back(cam.frame_id + ": " + e.what() + "; frame skipped");
    }
  }
  if (fused.empty()) throw InputError("no frame has usable detections");
  return fused;
}

inline std::map<std::string, StructureFrame> run_infer_stage(
    const std::map<std::string, FusedFrame>& fused, const std::string& images_dir,
    const std::vector<Correction>& corrections, const StructureConfig& cfg, std::uint64_t seed,
    StageLog& log) {
  cfg.validate();
  for (const Correction& c : corrections)
    if (!fused.count(c.frame_id))
      throw InputError("correction references frame " + c.frame_id +
                       " which has no fused detections");
  std::map<std::string, StructureFrame> out;
  for (const auto& [frame_id, f] : fused) {
    std::optional<ImageRaster> img;
    if (!images_dir.empty()) {
      std::string path = images_dir + "/" + frame_id + ".ppm";
      if (std::filesystem::exists(path)) {
        img = load_ppm(path);
      } else {
        log.warnings.push_back(frame_id + ": image " + path +
                               " not found, classifying without it");
      }
    }
    StructureFrame sf;
    sf.detections = f.detections;
    sf.structure =
        build_image_structure(frame_id, sf.detections, f.rep_box, f.image_width, f.image_height,
                              img ? &*img : nullptr, cfg, seed, &log.warnings);
    apply_corrections(sf.structure, sf.detections, corrections, cfg, &log.notes);
    out.emplace(frame_id, std::move(sf));
  }
  return out;
}

inline std::map<std::string, LiftedStructure> run_lift_stage(
    const std::map<std::string, StructureFrame>& structures,
    const std::vector<CameraFrame>& cameras, const PointCloud& cloud, const LiftConfig& cfg,
    StageLog& log) {
  cfg.validate();
  std::map<std::string, const CameraFrame*> cam_by_id;
  for (const CameraFrame& c : cameras) cam_by_id[c.frame_id] = &c;
  VoxelIndex index(cloud, cfg.voxel_cell_factor);
  std::map<std::string, LiftedStructure> out;
  for (const auto& [frame_id, sf] : structures) {
    auto cit = cam_by_id.find(frame_id);
    if (cit == cam_by_id.end()) throw InputError("no camera for frame " + frame_id);
    LiftedStructure L =
        lift_structure(sf.structure, sf.detections, *cit->second, cloud, index, cfg);
    if (L.failed_rays > 0)
      log.warnings.push_back(frame_id + ": " + std::to_string(L.failed_rays) +
                             " rays missed the cloud");
    out.emplace(frame_id, std::move(L));
  }
  return out;
}

inline std::vector<FrameData> assemble_frames(
    const std::map<std::string, StructureFrame>& structures,
    const std::map<std::string, LiftedStructure>& lifted,
    const std::vector<CameraFrame>& cameras) {
  std::map<std::string, const CameraFrame*> cam_by_id;
  for (const CameraFrame& c : cameras) cam_by_id[c.frame_id] = &c;
  std::vector<FrameData> frames;
  for (const auto& [frame_id, sf] : structures) {
    auto lit = lifted.find(frame_id);
    if (lit == lifted.end()) throw InputError("no lifted data for frame " + frame_id);
    auto cit = cam_by_id.find(frame_id);
    if (cit == cam_by_id.end()) throw InputError("no camera for frame " + frame_id);
    FrameData fd;
    fd.camera = *cit->second;
    fd.detections = sf.detections;
    fd.structure = sf.structure;
    fd.lifted = lit->second;
    frames.push_back(std::move(fd));
  }
  if (frames.empty()) throw InputError("no frames to match");
  return frames;
}

inline GlobalStructure run_match_stage(std::vector<FrameData>& frames, const MatchConfig& mcfg,
                                       const StructureConfig& scfg, StageLog& log) {
  GlobalStructure G = fuse_structures(frames, mcfg, scfg);
  for (const std::string& n : G.report.notes) log.notes.push_back(n);
  for (const SectorGroup& g : G.sector_groups)
    if (g.flagged)
      log.warnings.push_back("sector group (line " + std::to_string(g.line) + ", rank " +
                             std::to_string(g.rank) + ") flagged: " + g.flag_reason);
  return G;
}

inline BuildModelResult run_optimize_stage(const GlobalStructure& G, const OptimizeConfig& cfg,
                                           const GeoOrigin& geo, std::uint64_t seed,
                                           StageLog& log) {
  BuildModelResult result = build_plant_model(G, cfg, geo, seed);
  for (const std::string& n : result.notes) log.notes.push_back(n);
  if (result.flagged_benches > 0)
    log.warnings.push_back(std::to_string(result.flagged_benches) +
                           " benches kept averaged poses (no usable axis)");
  return result;
}

inline Json build_evaluation(const BuildModelResult& result, const PlantModel* reference,
                             const std::vector<int>& anchors, const GroundTruthPlant* truth) {
  Json ev;
  ev["consistency"] = consistency_json(internal_consistency(result.model, result.raw));
  ev["spacing"] = spacing_json(spacing_stats(result.model));
  if (reference)
    ev["reference"] = reference_json(compare_to_reference(result.model, *reference, anchors));
  if (truth) {
    ev["score"] = score_json(score_against_truth(scored_from_model(result.model), *truth));
    ev["score_raw"] =
        score_json(score_against_truth(scored_from_raw(result.model, result.raw), *truth));
  }
  return ev;
}

// One "statistic,value" row per scalar, dotted paths for nesting; arrays index
// numerically.  Key order is the (sorted) JSON object order, so the file is
// deterministic.
inline std::string stats_csv(const Json& evaluation) {
  std::string out = "statistic,value\n";
  std::function<void(const Json&, const std::string&)> walk = [&](const Json& j,
                                                                  const std::string& prefix) {
    if (j.is_object()) {
      for (auto it = j.begin(); it != j.end(); ++it)
        walk(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key());
    } else if (j.is_array()) {
      int i = 0;
      for (const Json& v : j) walk(v, prefix + "." + std::to_string(i++));
    } else {
      out += prefix + "," + j.dump() + "\n";
    }
  };
  walk(evaluation, "");
  return out;
}

struct PipelineOutcome {
  std::map<std::string, FusedFrame> fused;
  std::map<std::string, StructureFrame> structures;
  std::map<std::string, LiftedStructure> lifted;
  GlobalStructure global;
  BuildModelResult result;
  Json evaluation;
  StageLog log;
};

// Full run over input files.  Nothing is written until every stage succeeded
// and (under --strict) no warnings accumulated, so failures leave no partial
// output directory.
inline PipelineOutcome run_pipeline(const PipelineConfig& cfg) {
  if (cfg.io.cameras.empty()) throw InputError("config: io.cameras is required");
  if (cfg.io.detections.empty()) throw InputError("config: io.detections is required");
  if (cfg.io.cloud.empty()) throw InputError("config: io.cloud is required");

  std::vector<CameraFrame> cameras = load_camera_frames(cfg.io.cameras);
  if (cameras.empty()) throw InputError(cfg.io.cameras + ": no camera frames");
  DetectionMap detections = load_detections(cfg.io.detections);
  PointCloud cloud = load_cloud(cfg.io.cloud);
  std::vector<Correction> corrections;
  if (!cfg.io.corrections.empty()) corrections = load_corrections(cfg.io.corrections);
  std::optional<BuildModelResult> reference;
  if (!cfg.io.reference.empty()) reference = load_model(cfg.io.reference);
  std::optional<GroundTruthPlant> truth;
  if (!cfg.io.truth.empty()) truth = load_truth(cfg.io.truth);

  PipelineOutcome out;
  out.fused = run_fuse_stage(cameras, detections, cfg.detect, out.log);
  out.structures = run_infer_stage(out.fused, cfg.io.images_dir, corrections, cfg.infer,
                                   cfg.seed, out.log);
  out.lifted = run_lift_stage(out.structures, cameras, cloud, cfg.lift, out.log);
  std::vector<FrameData> frames = assemble_frames(out.structures, out.lifted, cameras);
  out.global = run_match_stage(frames, cfg.match, cfg.infer, out.log);
  out.result = run_optimize_stage(out.global, cfg.optimize, cameras.front().geo_origin,
                                  cfg.seed, out.log);
  out.evaluation = build_evaluation(out.result, reference ? &reference->model : nullptr,
                                    cfg.eval_anchors, truth ? &*truth : nullptr);

  if (cfg.strict && !out.log.warnings.empty())
    throw ConflictError("strict mode: " + std::to_string(out.log.warnings.size()) +
                        " warnings, first: " + out.log.warnings.front());

  namespace fs = std::filesystem;
  fs::create_directories(cfg.io.out_dir);
  fs::create_directories(cfg.io.out_dir + "/overlays");
  save_model(cfg.io.out_dir + "/model.json", out.result);
  save_json(cfg.io.out_dir + "/modules.geojson", model_geojson(out.result.model));
  save_text(cfg.io.out_dir + "/model.csv", model_csv(out.result));
  save_json(cfg.io.out_dir + "/evaluation.json", out.evaluation);
  save_text(cfg.io.out_dir + "/stats.csv", stats_csv(out.evaluation));
  for (const auto& [frame_id, sf] : out.structures) {
    std::string href =
        cfg.io.images_dir.empty() ? "" : cfg.io.images_dir + "/" + frame_id + ".ppm";
    save_text(cfg.io.out_dir + "/overlays/" + frame_id + ".svg",
              structure_svg(sf.structure, sf.detections, href));
  }
  if (cfg.keep_intermediates) {
    save_fused(cfg.io.out_dir + "/fused.json", out.fused);
    save_structures(cfg.io.out_dir + "/structure.json", out.structures);
    save_lifted(cfg.io.out_dir + "/lifted.json", out.lifted);
    save_global(cfg.io.out_dir + "/global.json", out.global);
  }
  return out;
}

}  // namespace pvmap
