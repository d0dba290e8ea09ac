#pragma once

#include <map>
#include <vector>

#include "pvmap/errors.hpp"
#include "pvmap/match.hpp"
#include "pvmap/rng.hpp"

namespace pvmap {

struct Line3D {
  Vec3 origin{0, 0, 0};
  Vec3 direction{1, 0, 0};  // unit, canonical sign
};

struct OptimizeConfig {
  double ransac_threshold = 0.15;  // m
  int ransac_trials = 500;
  double angle_limit_deg = 30.0;   // row direction spread within a bench
  double enforce_pitch = 0.0;      // 0 keeps the per-row estimated pitch

  void validate() const {
    if (!(ransac_threshold > 0))
      throw InputError("optimize config: ransac_threshold must be positive");
    if (ransac_trials < 1) throw InputError("optimize config: ransac_trials must be >= 1");
  }
};

struct ModulePose {
  int global_id = -1;
  Vec3 position{0, 0, 0};
  Vec3 normal{0, 0, 1};
  Vec3 axis{1, 0, 0};  // in-row direction
  double width_m = 0.0;
  double height_m = 0.0;
  int line = -1;
  int bench = -1;
  int sector = -1;     // rank of the sector group along its line
  int row_index = -1;  // row inside the bench, north to south
  int in_row_index = -1;
  int n_observations = 0;
};

struct BenchInfo {
  int bench_id = -1;
  Line3D axis;
  bool optimized = false;
};

struct PlantModel {
  std::vector<ModulePose> modules;
  std::vector<BenchInfo> benches;
  GeoOrigin geo_origin;
};

struct RawPose {
  int global_id = -1;
  Vec3 position{0, 0, 0};
  Vec3 normal{0, 0, 1};
};

struct BuildModelResult {
  PlantModel model;
  std::vector<RawPose> raw;  // averaged poses before optimization
  int flagged_benches = 0;
  std::vector<std::string> notes;
};

// Mean of the lifted observations.  Existence-only entries (detections whose
// ray missed the cloud) contribute nothing.
inline std::pair<Vec3, Vec3> average_module_pose(const GlobalModule& mod) {
  Vec3 pos = Vec3::Zero();
  Vec3 nrm = Vec3::Zero();
  int n = 0;
  for (const Observation& o : mod.observations) {
    if (!o.has_pose) continue;
    pos += o.sample.position;
    nrm += o.sample.normal;
    ++n;
  }
  if (n == 0) throw InternalError("average_module_pose: module has no lifted observation");
  pos /= static_cast<double>(n);
  if (nrm.norm() < 1e-9)
    throw InternalError("average_module_pose: observation normals cancel out");
  return {pos, nrm.normalized()};
}

// RANSAC line through 3D positions, PCA-refined over the inliers.  With two
// points the line is direct; coincident points are an error.
inline Line3D fit_row_line_3d(const std::vector<Vec3>& pts, double threshold, int trials,
                              Rng& rng) {
  if (pts.size() < 2) throw InternalError("fit_row_line_3d: need at least 2 points");
  auto pca = [](const std::vector<Vec3>& sel) {
    Line3D line;
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : sel) centroid += p;
    centroid /= static_cast<double>(sel.size());
    Mat3 cov = Mat3::Zero();
    for (const Vec3& p : sel) {
      Vec3 d = p - centroid;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    line.origin = centroid;
    line.direction = detail::canonical_sign(es.eigenvectors().col(2));
    return line;
  };
  auto dist = [](const Vec3& p, const Line3D& line) {
    Vec3 rel = p - line.origin;
    return (rel - rel.dot(line.direction) * line.direction).norm();
  };
  if (pts.size() == 2) {
    Vec3 d = pts[1] - pts[0];
    if (d.norm() < 1e-12) throw InternalError("fit_row_line_3d: coincident points");
    Line3D line;
    line.origin = 0.5 * (pts[0] + pts[1]);
    line.direction = detail::canonical_sign(d.normalized());
    return line;
  }
  int best_count = 0;
  Line3D best;
  for (int t = 0; t < trials; ++t) {
    std::size_t i = rng.index(pts.size());
    std::size_t j = rng.index(pts.size() - 1);
    if (j >= i) ++j;
    Vec3 d = pts[j] - pts[i];
    if (d.norm() < 1e-12) continue;
    Line3D cand{pts[i], d.normalized()};
    int count = 0;
    for (const Vec3& p : pts)
      if (dist(p, cand) <= threshold) ++count;
    if (count > best_count) {
      best_count = count;
      best = cand;
    }
  }
  if (best_count < 2) throw InternalError("fit_row_line_3d: no line supports 2 points");
  std::vector<Vec3> inliers;
  for (const Vec3& p : pts)
    if (dist(p, best) <= threshold) inliers.push_back(p);
  Line3D refined = pca(inliers);
  std::vector<Vec3> recollected;
  for (const Vec3& p : pts)
    if (dist(p, refined) <= threshold) recollected.push_back(p);
  if (recollected.size() >= 2) inliers = std::move(recollected);
  return pca(inliers);
}

struct BenchAxis {
  Line3D axis;
  std::vector<Vec3> row_offsets;  // per input row, perpendicular to the axis
};

// Common direction of a bench: rows sign-aligned to the first, averaged.
// Rows more than the angle limit apart do not describe one bench.  Each
// row keeps its perpendicular offset from the shared axis origin.
inline BenchAxis bench_axis(const std::vector<Line3D>& rows, double angle_limit_deg) {
  if (rows.empty()) throw InternalError("bench_axis: no row lines");
  const double cos_limit = std::cos(angle_limit_deg * kPi / 180.0);
  Vec3 dir_sum = Vec3::Zero();
  Vec3 origin_sum = Vec3::Zero();
  for (const Line3D& row : rows) {
    Vec3 d = row.direction;
    double c = d.dot(rows.front().direction);
    if (c < 0) {
      d = -d;
      c = -c;
    }
    if (c < cos_limit)
      throw InternalError("bench_axis: row directions disagree beyond the angle limit");
    dir_sum += d;
    origin_sum += row.origin;
  }
  BenchAxis result;
  result.axis.direction = detail::canonical_sign(dir_sum.normalized());
  result.axis.origin = origin_sum / static_cast<double>(rows.size());
  result.row_offsets.reserve(rows.size());
  for (const Line3D& row : rows) {
    Vec3 rel = row.origin - result.axis.origin;
    result.row_offsets.push_back(rel - rel.dot(result.axis.direction) * result.axis.direction);
  }
  return result;
}

inline Vec3 project_onto_axis(const Vec3& p, const Line3D& axis) {
  return axis.origin + (p - axis.origin).dot(axis.direction) * axis.direction;
}

// Uniform respacing along the bench axis.  Slots are the in-row indices
// (holes allowed); the end modules stay anchored unless a pitch is enforced,
// in which case the row is re-centred on its midpoint.
inline std::vector<Vec3> respace_row(const std::vector<Vec3>& positions,
                                     const std::vector<int>& slots, const Line3D& axis,
                                     double enforce_pitch = 0.0) {
  if (positions.size() != slots.size() || positions.empty())
    throw InternalError("respace_row: positions and slots must match and be non-empty");
  Vec3 offset = Vec3::Zero();
  for (const Vec3& p : positions) offset += p - project_onto_axis(p, axis);
  offset /= static_cast<double>(positions.size());
  std::vector<double> t(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i)
    t[i] = (positions[i] - axis.origin).dot(axis.direction);
  std::vector<Vec3> out(positions.size());
  if (positions.size() == 1) {
    out[0] = axis.origin + t[0] * axis.direction + offset;
    return out;
  }
  double t_first = t.front(), t_last = t.back();
  int s_first = slots.front(), s_last = slots.back();
  if (s_first == s_last) throw InternalError("respace_row: duplicate slot indices");
  double pitch = (t_last - t_first) / static_cast<double>(s_last - s_first);
  double anchor_t = t_first;
  double anchor_s = s_first;
  if (enforce_pitch > 0.0) {
    pitch = enforce_pitch;
    anchor_t = 0.5 * (t_first + t_last);
    anchor_s = 0.5 * (s_first + s_last);
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    double ti = anchor_t + (static_cast<double>(slots[i]) - anchor_s) * pitch;
    out[i] = axis.origin + ti * axis.direction + offset;
  }
  return out;
}

// Per-bench optimization over the whole structure: averaged poses, row lines,
// bench axes, respaced positions, shared row normals.  Benches that defeat
// axis estimation keep their averaged poses and are flagged.
inline BuildModelResult build_plant_model(const GlobalStructure& G, const OptimizeConfig& cfg,
                                          const GeoOrigin& geo, std::uint64_t seed) {
  cfg.validate();
  BuildModelResult result;
  result.model.geo_origin = geo;
  Rng rng(derive_seed(seed, "optimize"));
  result.raw.reserve(G.modules.size());
  std::vector<Vec3> raw_pos(G.modules.size()), raw_nrm(G.modules.size());
  for (std::size_t i = 0; i < G.modules.size(); ++i) {
    auto [pos, nrm] = average_module_pose(G.modules[i]);
    raw_pos[i] = pos;
    raw_nrm[i] = nrm;
    result.raw.push_back({G.modules[i].global_id, pos, nrm});
  }
  // bench -> row position -> module indices (slot order, as emitted).
  std::map<int, std::map<int, std::vector<std::size_t>>> bench_rows;
  for (std::size_t i = 0; i < G.modules.size(); ++i)
    bench_rows[G.modules[i].bench][G.modules[i].row_position].push_back(i);

  std::vector<Vec3> final_pos = raw_pos;
  std::vector<Vec3> final_nrm = raw_nrm;
  std::vector<Vec3> final_axis(G.modules.size());
  for (std::size_t i = 0; i < G.modules.size(); ++i)
    final_axis[i] = G.modules[i].line >= 0 ? G.lines[G.modules[i].line].direction : Vec3(1, 0, 0);

  for (auto& [bench_id, rows] : bench_rows) {
    BenchInfo info;
    info.bench_id = bench_id;
    bool flagged = bench_id < 0;
    std::vector<Line3D> row_lines;
    if (!flagged) {
      for (auto& [row_pos, members] : rows) {
        if (members.size() < 2) continue;
        std::vector<Vec3> pts;
        for (std::size_t i : members) pts.push_back(raw_pos[i]);
        try {
          row_lines.push_back(fit_row_line_3d(pts, cfg.ransac_threshold, cfg.ransac_trials, rng));
        } catch (const InternalError&) {
          // Degenerate row; the bench axis can still come from the others.
        }
      }
      if (row_lines.empty()) {
        flagged = true;
        result.notes.push_back("bench " + std::to_string(bench_id) +
                               ": no row supports a 3D line; kept averaged poses");
      }
    }
    if (!flagged) {
      try {
        info.axis = bench_axis(row_lines, cfg.angle_limit_deg).axis;
      } catch (const InternalError& e) {
        flagged = true;
        result.notes.push_back("bench " + std::to_string(bench_id) + ": " + e.what() +
                               "; kept averaged poses");
      }
    }
    if (flagged) {
      ++result.flagged_benches;
      info.optimized = false;
      if (bench_id >= 0) result.model.benches.push_back(info);
      continue;
    }
    info.optimized = true;
    for (auto& [row_pos, members] : rows) {
      std::vector<Vec3> pts;
      std::vector<int> slots;
      for (std::size_t i : members) {
        pts.push_back(raw_pos[i]);
        slots.push_back(G.modules[i].in_row_index);
      }
      std::vector<Vec3> respaced = respace_row(pts, slots, info.axis, cfg.enforce_pitch);
      Vec3 nrm_sum = Vec3::Zero();
      for (std::size_t i : members) nrm_sum += raw_nrm[i];
      Vec3 shared = nrm_sum.norm() > 1e-9 ? Vec3(nrm_sum.normalized()) : Vec3(0, 0, 1);
      for (std::size_t k = 0; k < members.size(); ++k) {
        final_pos[members[k]] = respaced[k];
        final_nrm[members[k]] = shared;
        final_axis[members[k]] = info.axis.direction;
      }
    }
    result.model.benches.push_back(info);
  }

  result.model.modules.reserve(G.modules.size());
  for (std::size_t i = 0; i < G.modules.size(); ++i) {
    const GlobalModule& gm = G.modules[i];
    ModulePose pose;
    pose.global_id = gm.global_id;
    pose.position = final_pos[i];
    pose.normal = final_nrm[i];
    pose.axis = final_axis[i];
    Vec2 dims = Vec2::Zero();
    int n = 0;
    for (const Observation& o : gm.observations) {
      if (!o.has_pose) continue;
      dims += o.dims_m;
      ++n;
    }
    if (n > 0) dims /= static_cast<double>(n);
    pose.width_m = dims.x();
    pose.height_m = dims.y();
    pose.line = gm.line;
    pose.bench = gm.bench;
    pose.sector = gm.sector_rank;
    pose.row_index = gm.row_position;
    pose.in_row_index = gm.in_row_index;
    pose.n_observations = static_cast<int>(gm.observations.size());
    result.model.modules.push_back(pose);
  }
  return result;
}

}  // namespace pvmap
