#pragma once

#include <string>
#include <vector>

#include "pvmap/io.hpp"
#include "pvmap/lift.hpp"
#include "pvmap/match.hpp"

namespace pvmap {

// JSON forms of the stage intermediates.  Loading what was saved rebuilds the
// structs exactly (numbers round-trip bit for bit), so a pipeline split into
// stage invocations reproduces a single-process run byte for byte.

namespace io_detail {

inline Json box_json(const OrientedBox& b) {
  return Json{{"angle", b.angle},
              {"center", vec_json(b.center)},
              {"height", b.height},
              {"width", b.width}};
}

inline OrientedBox box_of(const Json& j, const char* what) {
  OrientedBox b;
  b.center = vec2_of(field(j, "center", what), what);
  b.width = num(field(j, "width", what), what);
  b.height = num(field(j, "height", what), what);
  b.angle = num(field(j, "angle", what), what);
  return b;
}

inline Json sample_json(const SurfaceSample& s) {
  return Json{{"normal", vec_json(s.normal)},
              {"position", vec_json(s.position)},
              {"residual", s.residual},
              {"support", s.support}};
}

inline SurfaceSample sample_of(const Json& j) {
  SurfaceSample s;
  s.position = vec3_of(field(j, "position", "sample"), "sample");
  s.normal = vec3_of(field(j, "normal", "sample"), "sample");
  s.support = static_cast<int>(num(field(j, "support", "sample"), "sample"));
  s.residual = num(field(j, "residual", "sample"), "sample");
  return s;
}

inline Json lifted_json(const LiftedObservation& o) {
  if (!o.lifted) return Json{{"lifted", false}};
  return Json{{"lifted", true}, {"sample", sample_json(o.sample)}};
}

inline LiftedObservation lifted_of(const Json& j) {
  LiftedObservation o;
  o.lifted = field(j, "lifted", "lifted observation").get<bool>();
  if (o.lifted) o.sample = sample_of(field(j, "sample", "lifted observation"));
  return o;
}

inline std::vector<int> int_list(const Json& j, const char* what) {
  if (!j.is_array()) throw InputError(std::string(what) + ": expected an array");
  std::vector<int> out;
  for (const Json& e : j) out.push_back(static_cast<int>(num(e, what)));
  return out;
}

}  // namespace io_detail

// ---- fused detections ----

inline void save_fused(const std::string& path,
                       const std::map<std::string, FusedFrame>& by_frame) {
  Json arr = Json::array();
  for (const auto& [frame_id, f] : by_frame) {
    Json dets = Json::array();
    for (const ModuleDetection& d : f.detections) dets.push_back(detection_json(d));
    arr.push_back(Json{{"after_dims", f.after_dims},
                       {"after_edge", f.after_edge},
                       {"after_overlap", f.after_overlap},
                       {"detections", dets},
                       {"frame_id", frame_id},
                       {"image_height", f.image_height},
                       {"image_width", f.image_width},
                       {"raw_count", f.raw_count},
                       {"rep_box", io_detail::box_json(f.rep_box)}});
  }
  save_json(path, Json{{"frames", arr}});
}

inline std::map<std::string, FusedFrame> load_fused(const std::string& path) {
  using namespace io_detail;
  Json j = load_json(path);
  std::map<std::string, FusedFrame> by_frame;
  for (const Json& fj : field(j, "frames", "fused")) {
    std::string frame_id = field(fj, "frame_id", "fused").get<std::string>();
    if (by_frame.count(frame_id)) throw InputError("fused: duplicate frame_id " + frame_id);
    FusedFrame f;
    for (const Json& dj : field(fj, "detections", "fused")) {
      ModuleDetection d = detection_of(dj, "fused " + frame_id);
      if (d.frame_id != frame_id)
        throw InputError("fused " + frame_id + ": detection carries frame_id " + d.frame_id);
      d.detection_index = static_cast<int>(f.detections.size());
      f.detections.push_back(std::move(d));
    }
    f.rep_box = box_of(field(fj, "rep_box", "fused"), "rep_box");
    f.image_width = static_cast<int>(num(field(fj, "image_width", "fused"), "image_width"));
    f.image_height = static_cast<int>(num(field(fj, "image_height", "fused"), "image_height"));
    f.raw_count = static_cast<int>(num(field(fj, "raw_count", "fused"), "raw_count"));
    f.after_edge = static_cast<int>(num(field(fj, "after_edge", "fused"), "after_edge"));
    f.after_overlap =
        static_cast<int>(num(field(fj, "after_overlap", "fused"), "after_overlap"));
    f.after_dims = static_cast<int>(num(field(fj, "after_dims", "fused"), "after_dims"));
    by_frame.emplace(frame_id, std::move(f));
  }
  return by_frame;
}

// ---- per-image structure ----

inline Json structure_json(const ImageStructure& S) {
  using namespace io_detail;
  Json rows = Json::array();
  for (const RowLine& r : S.rows)
    rows.push_back(Json{{"direction", vec_json(r.direction)},
                        {"inliers", r.inliers},
                        {"median_spacing", r.median_spacing},
                        {"point", vec_json(r.point)}});
  Json benches = Json::array();
  for (const Bench2D& b : S.benches)
    benches.push_back(Json{{"rows", b.rows}, {"valid", b.valid}});
  Json keypoints = Json::array();
  for (const GapKeypoint& k : S.keypoints)
    keypoints.push_back(Json{{"kind", k.kind == GapKind::bench_gap ? "bench_gap" : "rejected"},
                             {"left_module", k.left_module},
                             {"midpoint", vec_json(k.midpoint)},
                             {"right_module", k.right_module},
                             {"row", k.row},
                             {"synthetic", k.synthetic}});
  Json hypothesized = Json::array();
  for (const HypothesizedModule& h : S.hypothesized)
    hypothesized.push_back(Json{{"center", vec_json(h.center)}, {"row", h.row}});
  auto bound_json = [](const SectorBound& b) {
    const char* kind = b.kind == BoundKind::keypoint ? "keypoint"
                       : b.kind == BoundKind::row_end ? "row_end"
                                                      : "image_edge";
    return Json{{"keypoint", b.keypoint}, {"kind", kind}};
  };
  Json sectors = Json::array();
  for (const Sector& s : S.sectors) {
    Json slots = Json::array();
    for (const ModuleSlot& slot : s.slots)
      slots.push_back(Json{{"hypothesized", slot.hypothesized}, {"index", slot.index}});
    sectors.push_back(Json{{"left", bound_json(s.left)},
                           {"right", bound_json(s.right)},
                           {"row", s.row},
                           {"slots", slots}});
  }
  return Json{{"benches", benches},
              {"frame_id", S.frame_id},
              {"hypothesized", hypothesized},
              {"image_height", S.image_height},
              {"image_width", S.image_width},
              {"keypoints", keypoints},
              {"median_spacing", S.median_spacing},
              {"rep_box", io_detail::box_json(S.rep_box)},
              {"row_bench", S.row_bench},
              {"row_in_bench", S.row_in_bench},
              {"rows", rows},
              {"sectors", sectors}};
}

inline ImageStructure structure_of(const Json& j) {
  using namespace io_detail;
  ImageStructure S;
  S.frame_id = field(j, "frame_id", "structure").get<std::string>();
  S.image_width = static_cast<int>(num(field(j, "image_width", "structure"), "image_width"));
  S.image_height = static_cast<int>(num(field(j, "image_height", "structure"), "image_height"));
  S.rep_box = box_of(field(j, "rep_box", "structure"), "rep_box");
  S.median_spacing = num(field(j, "median_spacing", "structure"), "median_spacing");
  for (const Json& rj : field(j, "rows", "structure")) {
    RowLine r;
    r.point = vec2_of(field(rj, "point", "row"), "row");
    r.direction = vec2_of(field(rj, "direction", "row"), "row");
    r.inliers = int_list(field(rj, "inliers", "row"), "inliers");
    r.median_spacing = num(field(rj, "median_spacing", "row"), "row");
    S.rows.push_back(std::move(r));
  }
  for (const Json& bj : field(j, "benches", "structure")) {
    Bench2D b;
    b.rows = int_list(field(bj, "rows", "bench"), "rows");
    b.valid = field(bj, "valid", "bench").get<bool>();
    S.benches.push_back(std::move(b));
  }
  S.row_bench = int_list(field(j, "row_bench", "structure"), "row_bench");
  S.row_in_bench = int_list(field(j, "row_in_bench", "structure"), "row_in_bench");
  for (const Json& kj : field(j, "keypoints", "structure")) {
    GapKeypoint k;
    k.row = static_cast<int>(num(field(kj, "row", "keypoint"), "keypoint"));
    k.left_module = static_cast<int>(num(field(kj, "left_module", "keypoint"), "keypoint"));
    k.right_module = static_cast<int>(num(field(kj, "right_module", "keypoint"), "keypoint"));
    k.midpoint = vec2_of(field(kj, "midpoint", "keypoint"), "keypoint");
    std::string kind = field(kj, "kind", "keypoint").get<std::string>();
    if (kind == "bench_gap") k.kind = GapKind::bench_gap;
    else if (kind == "rejected") k.kind = GapKind::rejected;
    else throw InputError("keypoint: unknown kind \"" + kind + "\"");
    k.synthetic = field(kj, "synthetic", "keypoint").get<bool>();
    S.keypoints.push_back(std::move(k));
  }
  for (const Json& hj : field(j, "hypothesized", "structure")) {
    HypothesizedModule h;
    h.row = static_cast<int>(num(field(hj, "row", "hypothesized"), "hypothesized"));
    h.center = vec2_of(field(hj, "center", "hypothesized"), "hypothesized");
    S.hypothesized.push_back(std::move(h));
  }
  auto bound_of = [](const Json& bj) {
    SectorBound b;
    std::string kind = field(bj, "kind", "bound").get<std::string>();
    if (kind == "keypoint") b.kind = BoundKind::keypoint;
    else if (kind == "row_end") b.kind = BoundKind::row_end;
    else if (kind == "image_edge") b.kind = BoundKind::image_edge;
    else throw InputError("sector bound: unknown kind \"" + kind + "\"");
    b.keypoint = static_cast<int>(num(field(bj, "keypoint", "bound"), "bound"));
    return b;
  };
  for (const Json& sj : field(j, "sectors", "structure")) {
    Sector s;
    s.row = static_cast<int>(num(field(sj, "row", "sector"), "sector"));
    for (const Json& slot : field(sj, "slots", "sector")) {
      ModuleSlot m;
      m.hypothesized = field(slot, "hypothesized", "slot").get<bool>();
      m.index = static_cast<int>(num(field(slot, "index", "slot"), "slot"));
      s.slots.push_back(m);
    }
    s.left = bound_of(field(sj, "left", "sector"));
    s.right = bound_of(field(sj, "right", "sector"));
    S.sectors.push_back(std::move(s));
  }
  return S;
}

struct StructureFrame {
  std::vector<ModuleDetection> detections;  // after fusion and corrections
  ImageStructure structure;
};

inline void save_structures(const std::string& path,
                            const std::map<std::string, StructureFrame>& by_frame) {
  Json arr = Json::array();
  for (const auto& [frame_id, f] : by_frame) {
    Json dets = Json::array();
    for (const ModuleDetection& d : f.detections) dets.push_back(detection_json(d));
    arr.push_back(
        Json{{"detections", dets}, {"frame_id", frame_id}, {"structure", structure_json(f.structure)}});
  }
  save_json(path, Json{{"frames", arr}});
}

inline std::map<std::string, StructureFrame> load_structures(const std::string& path) {
  using namespace io_detail;
  Json j = load_json(path);
  std::map<std::string, StructureFrame> by_frame;
  for (const Json& fj : field(j, "frames", "structures")) {
    std::string frame_id = field(fj, "frame_id", "structures").get<std::string>();
    if (by_frame.count(frame_id))
      throw InputError("structures: duplicate frame_id " + frame_id);
    StructureFrame f;
    for (const Json& dj : field(fj, "detections", "structures")) {
      ModuleDetection d = detection_of(dj, "structures " + frame_id);
      if (d.frame_id != frame_id)
        throw InputError("structures " + frame_id + ": detection carries frame_id " + d.frame_id);
      d.detection_index = static_cast<int>(f.detections.size());
      f.detections.push_back(std::move(d));
    }
    f.structure = structure_of(field(fj, "structure", "structures"));
    if (f.structure.frame_id != frame_id)
      throw InputError("structures: frame_id mismatch in " + frame_id);
    by_frame.emplace(frame_id, std::move(f));
  }
  return by_frame;
}

// ---- lifted structure ----

inline void save_lifted(const std::string& path,
                        const std::map<std::string, LiftedStructure>& by_frame) {
  using namespace io_detail;
  Json arr = Json::array();
  for (const auto& [frame_id, L] : by_frame) {
    auto obs_array = [](const std::vector<LiftedObservation>& v) {
      Json a = Json::array();
      for (const LiftedObservation& o : v) a.push_back(lifted_json(o));
      return a;
    };
    Json dims = Json::array();
    for (const Vec2& d : L.detection_dims_m) dims.push_back(vec_json(d));
    arr.push_back(Json{{"detection_dims_m", dims},
                       {"detections", obs_array(L.detections)},
                       {"failed_rays", L.failed_rays},
                       {"frame_id", frame_id},
                       {"hypotheses", obs_array(L.hypotheses)},
                       {"keypoints", obs_array(L.keypoints)}});
  }
  save_json(path, Json{{"frames", arr}});
}

inline std::map<std::string, LiftedStructure> load_lifted(const std::string& path) {
  using namespace io_detail;
  Json j = load_json(path);
  std::map<std::string, LiftedStructure> by_frame;
  for (const Json& fj : field(j, "frames", "lifted")) {
    std::string frame_id = field(fj, "frame_id", "lifted").get<std::string>();
    if (by_frame.count(frame_id)) throw InputError("lifted: duplicate frame_id " + frame_id);
    LiftedStructure L;
    L.frame_id = frame_id;
    auto obs_vector = [](const Json& a) {
      std::vector<LiftedObservation> v;
      for (const Json& oj : a) v.push_back(lifted_of(oj));
      return v;
    };
    L.detections = obs_vector(field(fj, "detections", "lifted"));
    for (const Json& dj : field(fj, "detection_dims_m", "lifted"))
      L.detection_dims_m.push_back(vec2_of(dj, "detection_dims_m"));
    L.keypoints = obs_vector(field(fj, "keypoints", "lifted"));
    L.hypotheses = obs_vector(field(fj, "hypotheses", "lifted"));
    L.failed_rays = static_cast<int>(num(field(fj, "failed_rays", "lifted"), "failed_rays"));
    if (L.detection_dims_m.size() != L.detections.size())
      throw InputError("lifted " + frame_id + ": dims and detections disagree");
    by_frame.emplace(frame_id, std::move(L));
  }
  return by_frame;
}

// ---- global structure ----

inline void save_global(const std::string& path, const GlobalStructure& G) {
  using namespace io_detail;
  Json kp_groups = Json::array();
  for (const KeypointGroup& g : G.keypoint_groups) {
    Json members = Json::array();
    for (const KeypointRef& m : g.members) members.push_back(Json::array({m.frame, m.keypoint}));
    kp_groups.push_back(Json{{"centroid", vec_json(g.centroid)},
                             {"members", members},
                             {"row_position", g.row_position}});
  }
  Json lines = Json::array();
  for (const GlobalLine& l : G.lines) {
    Json rows = Json::array();
    for (const RowRef& r : l.rows) rows.push_back(Json::array({r.frame, r.row}));
    lines.push_back(Json{{"bundle", l.bundle},
                         {"chain", l.chain},
                         {"direction", vec_json(l.direction)},
                         {"keypoint_groups", l.keypoint_groups},
                         {"origin", vec_json(l.origin)},
                         {"row_position", l.row_position},
                         {"rows", rows}});
  }
  Json groups = Json::array();
  for (const SectorGroup& s : G.sector_groups) {
    Json members = Json::array();
    for (const SectorRef& m : s.members) members.push_back(Json::array({m.frame, m.sector}));
    groups.push_back(Json{{"flag_reason", s.flag_reason},
                          {"flagged", s.flagged},
                          {"left_anchor", s.left_anchor},
                          {"line", s.line},
                          {"members", members},
                          {"module_count", s.module_count},
                          {"rank", s.rank},
                          {"right_anchor", s.right_anchor}});
  }
  Json benches = Json::array();
  for (const GlobalBench& b : G.benches)
    benches.push_back(Json{{"bench_id", b.bench_id},
                           {"bundle", b.bundle},
                           {"rank", b.rank},
                           {"sector_groups", b.sector_groups}});
  Json modules = Json::array();
  for (const GlobalModule& m : G.modules) {
    Json obs = Json::array();
    for (const Observation& o : m.observations)
      obs.push_back(Json{{"detection", o.detection},
                         {"dims_m", vec_json(o.dims_m)},
                         {"frame", o.frame},
                         {"has_pose", o.has_pose},
                         {"sample", sample_json(o.sample)}});
    modules.push_back(Json{{"bench", m.bench},
                           {"global_id", m.global_id},
                           {"hypothesis_confirmations", m.hypothesis_confirmations},
                           {"in_row", m.in_row_index},
                           {"line", m.line},
                           {"observations", obs},
                           {"row_position", m.row_position},
                           {"sector_rank", m.sector_rank}});
  }
  Json report{{"benches", G.report.benches},
              {"bundles", G.report.bundles},
              {"flagged_groups", G.report.flagged_groups},
              {"frames", G.report.frames},
              {"keypoint_groups", G.report.keypoint_groups},
              {"lines", G.report.lines},
              {"modules", G.report.modules},
              {"notes", G.report.notes},
              {"repairs", G.report.repairs},
              {"sector_groups", G.report.sector_groups}};
  save_json(path, Json{{"benches", benches},
                       {"keypoint_groups", kp_groups},
                       {"lines", lines},
                       {"modules", modules},
                       {"report", report},
                       {"sector_groups", groups}});
}

inline GlobalStructure load_global(const std::string& path) {
  using namespace io_detail;
  Json j = load_json(path);
  GlobalStructure G;
  auto pair_of = [](const Json& e, const char* what) {
    if (!e.is_array() || e.size() != 2)
      throw InputError(std::string(what) + ": expected [a, b]");
    return std::pair<int, int>{static_cast<int>(num(e[0], what)),
                               static_cast<int>(num(e[1], what))};
  };
  for (const Json& gj : field(j, "keypoint_groups", "global")) {
    KeypointGroup g;
    for (const Json& mj : field(gj, "members", "keypoint group")) {
      auto [f, k] = pair_of(mj, "keypoint member");
      g.members.push_back({f, k});
    }
    g.centroid = vec3_of(field(gj, "centroid", "keypoint group"), "centroid");
    g.row_position =
        static_cast<int>(num(field(gj, "row_position", "keypoint group"), "row_position"));
    G.keypoint_groups.push_back(std::move(g));
  }
  for (const Json& lj : field(j, "lines", "global")) {
    GlobalLine l;
    for (const Json& rj : field(lj, "rows", "line")) {
      auto [f, r] = pair_of(rj, "line row");
      l.rows.push_back({f, r});
    }
    l.keypoint_groups = int_list(field(lj, "keypoint_groups", "line"), "keypoint_groups");
    l.row_position = static_cast<int>(num(field(lj, "row_position", "line"), "row_position"));
    l.bundle = static_cast<int>(num(field(lj, "bundle", "line"), "bundle"));
    l.origin = vec3_of(field(lj, "origin", "line"), "origin");
    l.direction = vec3_of(field(lj, "direction", "line"), "direction");
    l.chain = int_list(field(lj, "chain", "line"), "chain");
    G.lines.push_back(std::move(l));
  }
  for (const Json& sj : field(j, "sector_groups", "global")) {
    SectorGroup s;
    s.line = static_cast<int>(num(field(sj, "line", "sector group"), "line"));
    for (const Json& mj : field(sj, "members", "sector group")) {
      auto [f, sec] = pair_of(mj, "sector member");
      s.members.push_back({f, sec});
    }
    s.left_anchor = static_cast<int>(num(field(sj, "left_anchor", "sector group"), "left"));
    s.right_anchor = static_cast<int>(num(field(sj, "right_anchor", "sector group"), "right"));
    s.module_count =
        static_cast<int>(num(field(sj, "module_count", "sector group"), "module_count"));
    s.rank = static_cast<int>(num(field(sj, "rank", "sector group"), "rank"));
    s.flagged = field(sj, "flagged", "sector group").get<bool>();
    s.flag_reason = field(sj, "flag_reason", "sector group").get<std::string>();
    G.sector_groups.push_back(std::move(s));
  }
  for (const Json& bj : field(j, "benches", "global")) {
    GlobalBench b;
    b.bench_id = static_cast<int>(num(field(bj, "bench_id", "bench"), "bench_id"));
    b.bundle = static_cast<int>(num(field(bj, "bundle", "bench"), "bundle"));
    b.rank = static_cast<int>(num(field(bj, "rank", "bench"), "rank"));
    b.sector_groups = int_list(field(bj, "sector_groups", "bench"), "sector_groups");
    G.benches.push_back(std::move(b));
  }
  for (const Json& mj : field(j, "modules", "global")) {
    GlobalModule m;
    m.global_id = static_cast<int>(num(field(mj, "global_id", "module"), "global_id"));
    m.line = static_cast<int>(num(field(mj, "line", "module"), "line"));
    m.bench = static_cast<int>(num(field(mj, "bench", "module"), "bench"));
    m.sector_rank = static_cast<int>(num(field(mj, "sector_rank", "module"), "sector_rank"));
    m.row_position = static_cast<int>(num(field(mj, "row_position", "module"), "row_position"));
    m.in_row_index = static_cast<int>(num(field(mj, "in_row", "module"), "in_row"));
    for (const Json& oj : field(mj, "observations", "module")) {
      Observation o;
      o.frame = static_cast<int>(num(field(oj, "frame", "observation"), "frame"));
      o.detection = static_cast<int>(num(field(oj, "detection", "observation"), "detection"));
      o.has_pose = field(oj, "has_pose", "observation").get<bool>();
      o.sample = sample_of(field(oj, "sample", "observation"));
      o.dims_m = vec2_of(field(oj, "dims_m", "observation"), "dims_m");
      m.observations.push_back(std::move(o));
    }
    m.hypothesis_confirmations = static_cast<int>(
        num(field(mj, "hypothesis_confirmations", "module"), "hypothesis_confirmations"));
    G.modules.push_back(std::move(m));
  }
  const Json& rj = field(j, "report", "global");
  G.report.frames = static_cast<int>(num(field(rj, "frames", "report"), "frames"));
  G.report.keypoint_groups =
      static_cast<int>(num(field(rj, "keypoint_groups", "report"), "keypoint_groups"));
  G.report.lines = static_cast<int>(num(field(rj, "lines", "report"), "lines"));
  G.report.bundles = static_cast<int>(num(field(rj, "bundles", "report"), "bundles"));
  G.report.sector_groups =
      static_cast<int>(num(field(rj, "sector_groups", "report"), "sector_groups"));
  G.report.benches = static_cast<int>(num(field(rj, "benches", "report"), "benches"));
  G.report.modules = static_cast<int>(num(field(rj, "modules", "report"), "modules"));
  G.report.repairs = static_cast<int>(num(field(rj, "repairs", "report"), "repairs"));
  G.report.flagged_groups =
      static_cast<int>(num(field(rj, "flagged_groups", "report"), "flagged_groups"));
  G.report.notes = field(rj, "notes", "report").get<std::vector<std::string>>();
  return G;
}

}  // namespace pvmap
