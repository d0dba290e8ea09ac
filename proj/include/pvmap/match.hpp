#pragma once

#include <Eigen/Eigenvalues>
#include <array>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pvmap/errors.hpp"
#include "pvmap/lift.hpp"
#include "pvmap/stats.hpp"
#include "pvmap/structure.hpp"
#include "pvmap/union_find.hpp"

namespace pvmap {

// Everything the pipeline knows about one frame once lifting is done.
struct FrameData {
  CameraFrame camera;
  std::vector<ModuleDetection> detections;
  ImageStructure structure;
  LiftedStructure lifted;
};

struct MatchConfig {
  double dist_threshold = 1.5;  // m, keypoint grouping radius
  int max_repairs = 64;

  void validate() const {
    if (!(dist_threshold > 0)) throw InputError("match config: dist_threshold must be positive");
  }
};

struct KeypointRef {
  int frame = -1;
  int keypoint = -1;
};

struct KeypointGroup {
  std::vector<KeypointRef> members;
  Vec3 centroid{0, 0, 0};
  int row_position = -1;
};

struct RowRef {
  int frame = -1;
  int row = -1;
};

// All image rows tracing one physical row of benches across the plant.
struct GlobalLine {
  std::vector<RowRef> rows;
  std::vector<int> keypoint_groups;
  int row_position = -1;
  int bundle = -1;
  Vec3 origin{0, 0, 0};
  Vec3 direction{1, 0, 0};  // canonical sign: +x (ties +y, then +z)
  std::vector<int> chain;   // sector-group ids ordered along direction
};

struct SectorRef {
  int frame = -1;
  int sector = -1;
};

// Anchor ids in resolved sector bounds: >= 0 is a keypoint group,
// kAnchorStart / kAnchorEnd are the ends of the line, kAnchorOpen means the
// bound tells nothing (image edge or unresolvable).
inline constexpr int kAnchorOpen = -1;
inline constexpr int kAnchorStart = -2;
inline constexpr int kAnchorEnd = -3;

struct SectorGroup {
  int line = -1;
  std::vector<SectorRef> members;
  int left_anchor = kAnchorOpen;
  int right_anchor = kAnchorOpen;
  int module_count = 0;
  int rank = -1;
  bool flagged = false;
  std::string flag_reason;
};

struct Observation {
  int frame = -1;
  int detection = -1;
  bool has_pose = false;
  SurfaceSample sample;
  Vec2 dims_m{0, 0};
};

struct GlobalModule {
  int global_id = -1;
  int line = -1;
  int bench = -1;
  int sector_rank = -1;
  int row_position = -1;
  int in_row_index = -1;  // slot inside the sector; gaps stay unoccupied
  std::vector<Observation> observations;
  int hypothesis_confirmations = 0;
};

struct GlobalBench {
  int bench_id = -1;
  int bundle = -1;
  int rank = -1;                   // along the chain
  std::vector<int> sector_groups;  // by row position, -1 when unobserved
};

struct FusionReport {
  int frames = 0;
  int keypoint_groups = 0;
  int lines = 0;
  int bundles = 0;
  int sector_groups = 0;
  int benches = 0;
  int modules = 0;
  int repairs = 0;
  int flagged_groups = 0;
  std::vector<std::string> notes;
};

struct GlobalStructure {
  std::vector<KeypointGroup> keypoint_groups;
  std::vector<GlobalLine> lines;
  std::vector<SectorGroup> sector_groups;
  std::vector<GlobalBench> benches;
  std::vector<GlobalModule> modules;
  FusionReport report;
};

// Single-linkage grouping of the lifted bench-gap keypoints: any pair closer
// than the threshold joins.  Groups come out ordered by their first member
// in (frame, keypoint) order.
inline std::vector<KeypointGroup> group_keypoints(const std::vector<FrameData>& frames,
                                                  double dist_threshold) {
  struct Entry {
    int frame, keypoint;
    Vec3 pos;
    int row_position;
  };
  std::vector<Entry> entries;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const ImageStructure& S = frames[f].structure;
    for (std::size_t k = 0; k < S.keypoints.size(); ++k) {
      if (S.keypoints[k].kind != GapKind::bench_gap) continue;
      if (k >= frames[f].lifted.keypoints.size() || !frames[f].lifted.keypoints[k].lifted)
        continue;
      entries.push_back({static_cast<int>(f), static_cast<int>(k),
                         frames[f].lifted.keypoints[k].sample.position,
                         S.row_in_bench[S.keypoints[k].row]});
    }
  }
  UnionFind uf(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i)
    for (std::size_t j = i + 1; j < entries.size(); ++j)
      if ((entries[i].pos - entries[j].pos).norm() <= dist_threshold) uf.unite(i, j);
  std::map<std::size_t, std::vector<std::size_t>> comps;
  for (std::size_t i = 0; i < entries.size(); ++i) comps[uf.find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> ordered;
  for (auto& [root, idxs] : comps) ordered.push_back(idxs);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  std::vector<KeypointGroup> groups;
  for (const auto& idxs : ordered) {
    KeypointGroup g;
    for (std::size_t i : idxs) {
      g.members.push_back({entries[i].frame, entries[i].keypoint});
      g.centroid += entries[i].pos;
      g.row_position = entries[i].row_position;  // refined below
    }
    g.centroid /= static_cast<double>(idxs.size());
    groups.push_back(std::move(g));
  }
  return groups;
}

// Keypoints of different rows of the same bench sit closer than the grouping
// radius; split every group by the in-bench row position of its members.
inline std::vector<KeypointGroup> refine_by_row_position(const std::vector<KeypointGroup>& raw,
                                                         const std::vector<FrameData>& frames) {
  std::vector<KeypointGroup> out;
  for (const KeypointGroup& g : raw) {
    std::map<int, KeypointGroup> buckets;
    for (const KeypointRef& m : g.members) {
      const ImageStructure& S = frames[m.frame].structure;
      int pos = S.row_in_bench[S.keypoints[m.keypoint].row];
      KeypointGroup& b = buckets[pos];
      b.row_position = pos;
      b.members.push_back(m);
      b.centroid += frames[m.frame].lifted.keypoints[m.keypoint].sample.position;
    }
    for (auto& [pos, b] : buckets) {
      b.centroid /= static_cast<double>(b.members.size());
      out.push_back(std::move(b));
    }
  }
  return out;
}

namespace detail {

// Two lifted detections closer than a quarter of the median 3D in-row
// spacing are observations of one physical module; anything else in a
// regular plant is at least a full pitch away.
inline double module_identity_radius(const std::vector<FrameData>& frames) {
  std::vector<double> spacings;
  for (const FrameData& fd : frames) {
    const ImageStructure& S = fd.structure;
    for (std::size_t r = 0; r < S.rows.size(); ++r) {
      int bench = S.row_bench[r];
      if (bench < 0 || !S.benches[bench].valid) continue;
      const std::vector<int>& in = S.rows[r].inliers;
      for (std::size_t k = 0; k + 1 < in.size(); ++k) {
        if (in[k] >= static_cast<int>(fd.lifted.detections.size()) ||
            in[k + 1] >= static_cast<int>(fd.lifted.detections.size()))
          continue;
        const LiftedObservation& a = fd.lifted.detections[in[k]];
        const LiftedObservation& b = fd.lifted.detections[in[k + 1]];
        if (a.lifted && b.lifted)
          spacings.push_back((a.sample.position - b.sample.position).norm());
      }
    }
  }
  return spacings.empty() ? 0.0 : 0.25 * median(spacings);
}

// Union of payload ids whose points fall within radius of each other,
// via a uniform grid (27-cell neighbourhoods cover every such pair).
inline void unite_by_proximity(const std::vector<std::pair<Vec3, std::size_t>>& pts,
                               double radius, UnionFind& uf) {
  if (!(radius > 0)) return;
  std::map<std::array<long long, 3>, std::vector<std::size_t>> grid;
  auto cell_of = [&](const Vec3& p) {
    return std::array<long long, 3>{static_cast<long long>(std::floor(p.x() / radius)),
                                    static_cast<long long>(std::floor(p.y() / radius)),
                                    static_cast<long long>(std::floor(p.z() / radius))};
  };
  for (std::size_t i = 0; i < pts.size(); ++i) grid[cell_of(pts[i].first)].push_back(i);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::array<long long, 3> c = cell_of(pts[i].first);
    for (long long dx = -1; dx <= 1; ++dx)
      for (long long dy = -1; dy <= 1; ++dy)
        for (long long dz = -1; dz <= 1; ++dz) {
          auto it = grid.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it == grid.end()) continue;
          for (std::size_t j : it->second)
            if (pts[j].second != pts[i].second &&
                (pts[j].first - pts[i].first).norm() <= radius)
              uf.unite(pts[i].second, pts[j].second);
        }
  }
}

}  // namespace detail

// Rows sharing a keypoint group trace the same physical line.  Two rows of
// one frame ending up together means the grouping radius swallowed distinct
// structures; that needs manual review, not silent repair.
inline std::vector<GlobalLine> assign_global_lines(const std::vector<KeypointGroup>& groups,
                                                   const std::vector<FrameData>& frames) {
  std::vector<RowRef> nodes;
  std::map<std::pair<int, int>, int> node_of;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const ImageStructure& S = frames[f].structure;
    for (std::size_t r = 0; r < S.rows.size(); ++r) {
      int bench = S.row_bench[r];
      if (bench < 0 || !S.benches[bench].valid) continue;
      node_of[{static_cast<int>(f), static_cast<int>(r)}] = static_cast<int>(nodes.size());
      nodes.push_back({static_cast<int>(f), static_cast<int>(r)});
    }
  }
  UnionFind uf(nodes.size());
  for (const KeypointGroup& g : groups) {
    int first = -1;
    for (const KeypointRef& m : g.members) {
      const ImageStructure& S = frames[m.frame].structure;
      auto it = node_of.find({m.frame, S.keypoints[m.keypoint].row});
      if (it == node_of.end()) continue;
      if (first < 0)
        first = it->second;
      else
        uf.unite(first, it->second);
    }
  }
  // Rows observing the same physical module trace the same line.  Keypoint
  // groups alone cannot link a view that contains no bench boundary (a
  // narrow strip at the survey edge).
  std::vector<std::pair<Vec3, std::size_t>> pts;
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const FrameData& fd = frames[nodes[n].frame];
    for (int det : fd.structure.rows[nodes[n].row].inliers) {
      if (det >= static_cast<int>(fd.lifted.detections.size())) continue;
      if (!fd.lifted.detections[det].lifted) continue;
      pts.emplace_back(fd.lifted.detections[det].sample.position, n);
    }
  }
  detail::unite_by_proximity(pts, detail::module_identity_radius(frames), uf);
  std::map<std::size_t, std::vector<int>> comps;
  for (std::size_t i = 0; i < nodes.size(); ++i) comps[uf.find(i)].push_back(static_cast<int>(i));
  std::vector<std::vector<int>> ordered;
  for (auto& [root, idxs] : comps) ordered.push_back(idxs);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  std::vector<GlobalLine> lines;
  for (const auto& idxs : ordered) {
    GlobalLine line;
    std::set<int> seen_frames;
    for (int i : idxs) {
      const RowRef& rr = nodes[i];
      if (!seen_frames.insert(rr.frame).second)
        throw ConflictError("global line would contain two rows of frame " +
                            frames[rr.frame].structure.frame_id);
      line.rows.push_back(rr);
      line.row_position = frames[rr.frame].structure.row_in_bench[rr.row];
    }
    lines.push_back(std::move(line));
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].members.empty()) continue;
    const KeypointRef& m = groups[g].members.front();
    int row = frames[m.frame].structure.keypoints[m.keypoint].row;
    for (std::size_t l = 0; l < lines.size(); ++l)
      for (const RowRef& rr : lines[l].rows)
        if (rr.frame == m.frame && rr.row == row) lines[l].keypoint_groups.push_back(g);
  }
  return lines;
}

namespace detail {

inline Vec3 canonical_sign(Vec3 d) {
  if (d.x() < 0 || (d.x() == 0 && (d.y() < 0 || (d.y() == 0 && d.z() < 0)))) d = -d;
  return d;
}

// Principal 3D direction of a point set.
inline Vec3 principal_direction(const std::vector<Vec3>& pts) {
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : pts) {
    Vec3 d = p - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  return canonical_sign(es.eigenvectors().col(2));
}

}  // namespace detail

namespace match_detail {

// +1 when the row's image direction runs along the line direction, -1 when
// against it, 0 when the row has too few lifted detections to tell.
inline int row_orientation(const FrameData& fd, int row, const Vec3& line_dir) {
  const RowLine& rl = fd.structure.rows[row];
  const Vec3* first = nullptr;
  const Vec3* last = nullptr;
  for (int det : rl.inliers) {
    if (det >= static_cast<int>(fd.lifted.detections.size())) continue;
    if (!fd.lifted.detections[det].lifted) continue;
    const Vec3& p = fd.lifted.detections[det].sample.position;
    if (!first) first = &p;
    last = &p;
  }
  if (!first || first == last) return 0;
  double dot = (*last - *first).dot(line_dir);
  if (dot > 0) return 1;
  if (dot < 0) return -1;
  return 0;
}

}  // namespace match_detail

// Cross-image fusion: groups keypoints, assigns global lines, groups aligned
// sectors between anchors, verifies module counts (repairing lost keypoints
// where a split explains the counts), confirms hypotheses and hands out
// global ids.  Frames are taken by reference because a repair inserts
// synthetic keypoints and hypotheses into the owning frame's structure.
inline GlobalStructure fuse_structures(std::vector<FrameData>& frames, const MatchConfig& mcfg,
                                       const StructureConfig& scfg) {
  mcfg.validate();
  GlobalStructure G;
  G.report.frames = static_cast<int>(frames.size());
  auto note = [&](const std::string& s) { G.report.notes.push_back(s); };

  G.keypoint_groups = refine_by_row_position(group_keypoints(frames, mcfg.dist_threshold), frames);
  G.lines = assign_global_lines(G.keypoint_groups, frames);
  const double identity_radius = detail::module_identity_radius(frames);

  // (frame, keypoint) -> group id; repairs extend this map directly.
  std::vector<std::vector<int>> kp_group(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f)
    kp_group[f].assign(frames[f].structure.keypoints.size(), -1);
  for (std::size_t g = 0; g < G.keypoint_groups.size(); ++g)
    for (const KeypointRef& m : G.keypoint_groups[g].members)
      kp_group[m.frame][m.keypoint] = static_cast<int>(g);

  // Line geometry from the lifted module positions of its rows.
  std::map<std::pair<int, int>, int> line_of_row;
  for (std::size_t l = 0; l < G.lines.size(); ++l) {
    GlobalLine& line = G.lines[l];
    std::vector<Vec3> pts;
    for (const RowRef& rr : line.rows) {
      const FrameData& fd = frames[rr.frame];
      line_of_row[{rr.frame, rr.row}] = static_cast<int>(l);
      for (int det : fd.structure.rows[rr.row].inliers)
        if (det < static_cast<int>(fd.lifted.detections.size()) &&
            fd.lifted.detections[det].lifted)
          pts.push_back(fd.lifted.detections[det].sample.position);
    }
    if (pts.size() >= 2) {
      line.direction = detail::principal_direction(pts);
      Vec3 centroid = Vec3::Zero();
      for (const Vec3& p : pts) centroid += p;
      line.origin = centroid / static_cast<double>(pts.size());
    } else if (pts.size() == 1) {
      line.origin = pts[0];
    }
  }

  struct MemberView {
    SectorRef ref;
    int left = kAnchorOpen;   // canonical (line-direction) resolved anchors
    int right = kAnchorOpen;
    bool left_synth = false;  // bound keypoint was inserted by a repair
    bool right_synth = false;
    std::vector<ModuleSlot> slots;  // canonical order
    std::vector<Vec2> px;           // image centers, canonical order
    int orientation = 0;
  };

  struct LineGroups {
    std::vector<std::vector<MemberView>> groups;  // rank order
    std::vector<std::pair<int, int>> anchors;     // per group: left, right
  };

  auto collect_line_groups = [&](int l) {
    const GlobalLine& line = G.lines[l];
    std::vector<MemberView> views;
    for (const RowRef& rr : line.rows) {
      const FrameData& fd = frames[rr.frame];
      int orient = match_detail::row_orientation(fd, rr.row, line.direction);
      for (std::size_t s = 0; s < fd.structure.sectors.size(); ++s) {
        const Sector& sec = fd.structure.sectors[s];
        if (sec.row != rr.row) continue;
        MemberView v;
        v.ref = {rr.frame, static_cast<int>(s)};
        v.orientation = orient;
        auto resolve = [&](const SectorBound& b, bool toward_start, bool& synth) {
          synth = false;
          if (b.kind == BoundKind::keypoint) {
            int g = kp_group[rr.frame][b.keypoint];
            synth = fd.structure.keypoints[b.keypoint].synthetic;
            return g >= 0 ? g : kAnchorOpen;
          }
          if (b.kind == BoundKind::row_end && orient != 0)
            return toward_start ? kAnchorStart : kAnchorEnd;
          return kAnchorOpen;
        };
        bool ls = false, rs = false;
        int img_left = resolve(sec.left, orient > 0, ls);
        int img_right = resolve(sec.right, orient < 0, rs);
        v.slots = sec.slots;
        for (const ModuleSlot& slot : sec.slots)
          v.px.push_back(slot.hypothesized
                             ? fd.structure.hypothesized[slot.index].center
                             : fd.detections[slot.index].box.center);
        if (orient >= 0) {
          v.left = img_left;
          v.right = img_right;
          v.left_synth = ls;
          v.right_synth = rs;
        } else {
          v.left = img_right;
          v.right = img_left;
          v.left_synth = rs;
          v.right_synth = ls;
          std::reverse(v.slots.begin(), v.slots.end());
          std::reverse(v.px.begin(), v.px.end());
        }
        views.push_back(std::move(v));
      }
    }
    // Proto-groups: sectors sharing an anchor on the same side describe the
    // same stretch of the line; merge to a fixpoint.  Views catching opposite
    // ends of a long sector share no anchor, so a shared physical module
    // (3D coincidence) bridges them too.
    UnionFind uf(views.size());
    std::map<std::pair<int, int>, std::size_t> first_with;  // (anchor, side)
    for (std::size_t i = 0; i < views.size(); ++i) {
      for (int side = 0; side < 2; ++side) {
        int a = side == 0 ? views[i].left : views[i].right;
        if (a == kAnchorOpen) continue;
        auto key = std::make_pair(a, side);
        auto [it, inserted] = first_with.try_emplace(key, i);
        if (!inserted) uf.unite(it->second, i);
      }
    }
    std::vector<std::pair<Vec3, std::size_t>> view_pts;
    for (std::size_t i = 0; i < views.size(); ++i) {
      const FrameData& fd = frames[views[i].ref.frame];
      for (const ModuleSlot& slot : views[i].slots) {
        if (slot.hypothesized) continue;
        if (slot.index < static_cast<int>(fd.lifted.detections.size()) &&
            fd.lifted.detections[slot.index].lifted)
          view_pts.emplace_back(fd.lifted.detections[slot.index].sample.position, i);
      }
    }
    detail::unite_by_proximity(view_pts, identity_radius, uf);
    std::map<std::size_t, std::vector<std::size_t>> comps;
    for (std::size_t i = 0; i < views.size(); ++i) comps[uf.find(i)].push_back(i);
    std::vector<std::vector<std::size_t>> ordered;
    for (auto& [root, idxs] : comps) ordered.push_back(idxs);
    std::sort(ordered.begin(), ordered.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    LineGroups out;
    std::vector<double> proj;
    for (const auto& idxs : ordered) {
      std::vector<MemberView> group;
      Vec3 sum = Vec3::Zero();
      int n = 0;
      for (std::size_t i : idxs) {
        const FrameData& fd = frames[views[i].ref.frame];
        for (const ModuleSlot& slot : views[i].slots) {
          if (slot.hypothesized) continue;
          if (slot.index < static_cast<int>(fd.lifted.detections.size()) &&
              fd.lifted.detections[slot.index].lifted) {
            sum += fd.lifted.detections[slot.index].sample.position;
            ++n;
          }
        }
        group.push_back(views[i]);
      }
      Vec3 centroid = n > 0 ? Vec3(sum / n) : G.lines[l].origin;
      proj.push_back((centroid - G.lines[l].origin).dot(G.lines[l].direction));
      out.groups.push_back(std::move(group));
    }
    std::vector<std::size_t> order(out.groups.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (proj[a] != proj[b]) return proj[a] < proj[b];
      return a < b;
    });
    std::vector<std::vector<MemberView>> sorted;
    for (std::size_t i : order) sorted.push_back(std::move(out.groups[i]));
    out.groups = std::move(sorted);
    return out;
  };

  // A verified group has one left and one right anchor.  Three anchors with
  // matching sub-counts mean one frame lost the middle keypoint: repair by
  // splitting that member at its widest spacing and filling the deficit with
  // hypotheses.
  struct RepairPlan {
    int frame = -1;
    int sector = -1;
    int row = -1;
    int split_after = -1;  // canonical slot index
    int middle_group = -1;
    int deficit_left = 0;
    int deficit_right = 0;
  };

  auto try_middle = [&](const std::vector<MemberView>& group, int l, int mid,
                        std::optional<RepairPlan>& plan) {
    // Count witnesses carry their outer anchor: the count only describes the
    // stretch between that anchor and mid, so a straddler may use it solely
    // when its own anchor matches.  Members bounded by a synthetic keypoint
    // are repair products; their counts are not independent evidence.
    int count_left = -1, count_right = -1;
    int wa = kAnchorOpen, wb = kAnchorOpen;
    for (const MemberView& v : group) {
      if (v.left_synth || v.right_synth) continue;
      int m = static_cast<int>(v.slots.size());
      if (v.right == mid && v.left != kAnchorOpen) {
        if (count_left >= 0 && (count_left != m || wa != v.left)) return;
        count_left = m;
        wa = v.left;
      }
      if (v.left == mid && v.right != kAnchorOpen) {
        if (count_right >= 0 && (count_right != m || wb != v.right)) return;
        count_right = m;
        wb = v.right;
      }
    }
    double kp_proj = (G.keypoint_groups[mid].centroid - G.lines[l].origin)
                         .dot(G.lines[l].direction);
    for (const MemberView& v : group) {
      if (v.left == mid || v.right == mid) continue;
      int m = static_cast<int>(v.slots.size());
      if (m < 2) continue;
      const FrameData& fd = frames[v.ref.frame];
      auto lifted_pos = [&](int slot_idx) -> const Vec3* {
        const ModuleSlot& s = v.slots[slot_idx];
        if (s.hypothesized) return nullptr;
        if (s.index < static_cast<int>(fd.lifted.detections.size()) &&
            fd.lifted.detections[s.index].lifted)
          return &fd.lifted.detections[s.index].sample.position;
        return nullptr;
      };
      // Split boundary i sits between canonical slots i and i+1.  With both
      // flank counts witnessed the deficit is exact; with one side witnessed
      // (the other flank open or never closed by a keypoint) the anchored
      // side still pins the boundary and the open side gets no fill.  A view
      // with no anchors at all splits where the keypoint group's own lifted
      // position falls between two of its slots.
      int lo = -1, hi = -1;
      bool matches_left = count_left >= 0 && v.left == wa && m > count_left;
      bool matches_right = count_right >= 0 && v.right == wb && m > count_right;
      if (matches_left && matches_right) {
        int deficit = count_left + count_right - m;
        if (deficit < 0 || deficit > scfg.n_max) continue;
        lo = std::max(0, count_left - 1 - deficit);
        hi = std::min(count_left - 1, m - 2);
      } else if (matches_left) {
        lo = std::max(0, count_left - 1 - scfg.n_max);
        hi = std::min(count_left - 1, m - 2);
      } else if (matches_right) {
        lo = m - 1 - count_right;
        hi = std::min(lo + scfg.n_max, m - 2);
      } else if (v.left == kAnchorOpen && v.right == kAnchorOpen) {
        double best_d = 2.0 * identity_radius;
        int best = -1;
        for (int i = 0; i + 1 < m; ++i) {
          const Vec3* a = lifted_pos(i);
          const Vec3* b = lifted_pos(i + 1);
          if (!a || !b) continue;
          double pa = (*a - G.lines[l].origin).dot(G.lines[l].direction);
          double pb = (*b - G.lines[l].origin).dot(G.lines[l].direction);
          double d = std::abs(0.5 * (pa + pb) - kp_proj);
          if (d < best_d) {
            best_d = d;
            best = i;
          }
        }
        if (best < 0) continue;
        lo = hi = best;
      } else {
        continue;
      }
      if (lo > hi) continue;
      // 3D spacings when every candidate boundary has them, image spacings
      // otherwise; the two scales must not be compared against each other.
      bool all_3d = true;
      for (int i = lo; i <= hi + 1 && all_3d; ++i)
        if (!lifted_pos(i)) all_3d = false;
      double best_spacing = -1.0;
      int best_i = -1;
      for (int i = lo; i <= hi; ++i) {
        double spacing = all_3d ? (*lifted_pos(i + 1) - *lifted_pos(i)).norm()
                                : (v.px[i + 1] - v.px[i]).norm();
        if (spacing > best_spacing) {
          best_spacing = spacing;
          best_i = i;
        }
      }
      if (best_i < 0) continue;
      RepairPlan p;
      p.frame = v.ref.frame;
      p.sector = v.ref.sector;
      p.row = frames[v.ref.frame].structure.sectors[v.ref.sector].row;
      p.split_after = best_i;
      p.middle_group = mid;
      p.deficit_left = matches_left ? count_left - 1 - best_i : 0;
      p.deficit_right = matches_right ? best_i - (m - 1 - count_right) : 0;
      // Canonical slot indexing and image order differ for reversed rows.
      if (v.orientation < 0) {
        p.split_after = m - 2 - best_i;
        std::swap(p.deficit_left, p.deficit_right);
      }
      plan = p;
      return;
    }
  };

  // A group may hide several lost keypoints; each pass fixes one boundary
  // (any anchor seen on both sides with consistent flank counts), and the
  // grouping rerun exposes the next.
  auto find_repair = [&](const std::vector<MemberView>& group, int l,
                         std::optional<RepairPlan>& plan) {
    std::set<int> lefts, rights;
    for (const MemberView& v : group) {
      if (v.left != kAnchorOpen) lefts.insert(v.left);
      if (v.right != kAnchorOpen) rights.insert(v.right);
    }
    if (lefts.size() <= 1 && rights.size() <= 1) return;
    // Any keypoint anchor of the span may be the lost middle; try_middle
    // rejects the ones without a matching witness.
    std::set<int> middles;
    for (int a : lefts)
      if (a >= 0) middles.insert(a);
    for (int a : rights)
      if (a >= 0) middles.insert(a);
    for (int mid : middles) {
      try_middle(group, l, mid, plan);
      if (plan) return;
    }
  };

  auto apply_repair = [&](const RepairPlan& p) {
    FrameData& fd = frames[p.frame];
    ImageStructure& S = fd.structure;
    const Sector& sec = S.sectors[p.sector];
    // Image-order flanking entries of the split.
    auto center_of = [&](const ModuleSlot& s) {
      return s.hypothesized ? S.hypothesized[s.index].center : fd.detections[s.index].box.center;
    };
    const ModuleSlot& sa = sec.slots[p.split_after];
    const ModuleSlot& sb = sec.slots[p.split_after + 1];
    Vec2 ca = center_of(sa);
    Vec2 cb = center_of(sb);
    GapKeypoint kp;
    kp.row = p.row;
    kp.left_module = sa.hypothesized ? -1 : sa.index;
    kp.right_module = sb.hypothesized ? -1 : sb.index;
    kp.midpoint = 0.5 * (ca + cb);
    kp.kind = GapKind::bench_gap;
    kp.synthetic = true;
    int kp_index = static_cast<int>(S.keypoints.size());
    S.keypoints.push_back(kp);
    kp_group[p.frame].push_back(p.middle_group);
    G.keypoint_groups[p.middle_group].members.push_back({p.frame, kp_index});
    fd.lifted.keypoints.resize(S.keypoints.size());
    // Deficit hypotheses keep strict ordering against the new keypoint: left
    // ones in (ca, mid), right ones in (mid, cb).
    int dl = p.deficit_left, dr = p.deficit_right;
    for (int j = 1; j <= dl; ++j) {
      HypothesizedModule h;
      h.row = p.row;
      h.center = ca + (cb - ca) * (static_cast<double>(j) / (2.0 * (dl + 1)));
      S.hypothesized.push_back(h);
    }
    for (int j = 1; j <= dr; ++j) {
      HypothesizedModule h;
      h.row = p.row;
      h.center = ca + (cb - ca) * (0.5 + static_cast<double>(j) / (2.0 * (dr + 1)));
      S.hypothesized.push_back(h);
    }
    fd.lifted.hypotheses.resize(S.hypothesized.size());
    build_sectors(S, fd.detections, scfg);
    ++G.report.repairs;
    note("repair: frame " + S.frame_id + " row " + std::to_string(p.row) +
         " split with deficit " + std::to_string(dl + dr));
  };

  std::vector<LineGroups> per_line(G.lines.size());
  for (int round = 0;; ++round) {
    for (std::size_t l = 0; l < G.lines.size(); ++l) per_line[l] = collect_line_groups(l);
    if (G.report.repairs >= mcfg.max_repairs) break;
    std::optional<RepairPlan> plan;
    for (std::size_t l = 0; l < G.lines.size() && !plan; ++l)
      for (const auto& group : per_line[l].groups) {
        find_repair(group, static_cast<int>(l), plan);
        if (plan) break;
      }
    if (!plan) break;
    apply_repair(*plan);
  }

  // Verification: agree on the module count, align each member's slots from
  // its anchored side, emit one module per slot that some frame really saw.
  for (std::size_t l = 0; l < G.lines.size(); ++l) {
    GlobalLine& line = G.lines[l];
    for (auto& group : per_line[l].groups) {
      SectorGroup sg;
      sg.line = static_cast<int>(l);
      for (const MemberView& v : group) sg.members.push_back(v.ref);
      std::set<int> lefts, rights;
      for (const MemberView& v : group) {
        if (v.left != kAnchorOpen) lefts.insert(v.left);
        if (v.right != kAnchorOpen) rights.insert(v.right);
      }
      std::vector<int> strong, weak, partial;
      for (const MemberView& v : group) {
        int m = static_cast<int>(v.slots.size());
        if (v.left != kAnchorOpen && v.right != kAnchorOpen) {
          // A side closed by a synthetic (repair-inserted) keypoint carries
          // the repair's assumption, not an independent observation.
          if (v.left >= 0 && v.right >= 0 && !v.left_synth && !v.right_synth)
            strong.push_back(m);
          else
            weak.push_back(m);
        } else if (v.left != kAnchorOpen || v.right != kAnchorOpen) {
          partial.push_back(m);
        }
      }
      int N = -1;
      if (lefts.size() > 1 || rights.size() > 1) {
        sg.flagged = true;
        sg.flag_reason = "inconsistent anchors (unrepairable span)";
      } else if (!strong.empty()) {
        bool unanimous = std::all_of(strong.begin(), strong.end(),
                                     [&](int m) { return m == strong.front(); });
        if (!unanimous) {
          sg.flagged = true;
          sg.flag_reason = "closed members disagree on module count";
        } else {
          N = strong.front();
        }
      } else if (!weak.empty() || !partial.empty()) {
        // Without a keypoint-closed witness the best estimate is the longest
        // anchored view; shorter views nest inside it from their anchor.
        N = 0;
        for (int m : weak) N = std::max(N, m);
        for (int m : partial) N = std::max(N, m);
      } else {
        sg.flagged = true;
        sg.flag_reason = "no anchored member";
      }
      sg.module_count = std::max(N, 0);
      if (sg.flagged) {
        ++G.report.flagged_groups;
        note("flagged sector group on line " + std::to_string(l) + ": " + sg.flag_reason);
        sg.rank = static_cast<int>(line.chain.size());
        line.chain.push_back(static_cast<int>(G.sector_groups.size()));
        G.sector_groups.push_back(sg);
        continue;
      }
      // Canonical slot geometry: projections of the lifted slots along the
      // line collapse into per-module clusters (same-module spread is a few
      // centimetres against a ~1 m pitch).  The cluster spread floors the
      // module count when an unfillable hole shortens every count witness,
      // and the cluster index places each slot independently of where its
      // own member believes it sits.
      auto slot_pos = [&](const MemberView& v, int j) -> const Vec3* {
        const ModuleSlot& s = v.slots[j];
        if (s.hypothesized) return nullptr;
        const LiftedStructure& L = frames[v.ref.frame].lifted;
        if (s.index < static_cast<int>(L.detections.size()) && L.detections[s.index].lifted)
          return &L.detections[s.index].sample.position;
        return nullptr;
      };
      std::vector<double> projs;
      for (const MemberView& v : group)
        for (int j = 0; j < static_cast<int>(v.slots.size()); ++j)
          if (const Vec3* p = slot_pos(v, j))
            projs.push_back((*p - line.origin).dot(line.direction));
      std::sort(projs.begin(), projs.end());
      std::vector<double> centers;
      for (std::size_t i = 0; i < projs.size();) {
        std::size_t k = i + 1;
        double sum = projs[i];
        while (k < projs.size() && projs[k] - projs[k - 1] < 2.0 * identity_radius)
          sum += projs[k++];
        centers.push_back(sum / static_cast<double>(k - i));
        i = k;
      }
      std::vector<int> rel(centers.size(), 0);
      if (centers.size() >= 2) {
        double dmin = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < centers.size(); ++i)
          dmin = std::min(dmin, centers[i] - centers[i - 1]);
        // Pitch from single-step gaps only; gaps spanning a hole are
        // near-integer multiples of it.
        double sum = 0;
        int cnt = 0;
        for (std::size_t i = 1; i < centers.size(); ++i)
          if (centers[i] - centers[i - 1] < 1.5 * dmin) {
            sum += centers[i] - centers[i - 1];
            ++cnt;
          }
        double pitch = sum / cnt;
        for (std::size_t i = 1; i < centers.size(); ++i) {
          rel[i] = static_cast<int>(std::lround((centers[i] - centers[0]) / pitch));
          if (rel[i] <= rel[i - 1]) rel[i] = rel[i - 1] + 1;
        }
      }
      if (!rel.empty() && rel.back() + 1 > N) {
        note("line " + std::to_string(l) + ": module count " + std::to_string(N) +
             " raised to " + std::to_string(rel.back() + 1) + " by lifted slot spread");
        N = rel.back() + 1;
        sg.module_count = N;
      }
      struct SlotBucket {
        std::vector<std::pair<int, int>> real;  // (frame, detection)
        int hypothesis_hits = 0;
      };
      std::vector<SlotBucket> buckets(N);
      auto nearest_rel = [&](double x) -> int {
        auto it = std::lower_bound(centers.begin(), centers.end(), x);
        if (it == centers.end()) return rel.back();
        if (it == centers.begin()) return rel.front();
        std::size_t hi = static_cast<std::size_t>(it - centers.begin());
        return (x - centers[hi - 1] <= centers[hi] - x) ? rel[hi - 1] : rel[hi];
      };
      for (const MemberView& v : group) {
        int m = static_cast<int>(v.slots.size());
        if (m > N) {
          note("excluded member with surplus count on line " + std::to_string(l));
          continue;
        }
        // Lifted slots take their cluster's canonical index; hypothesized or
        // unlifted slots step from their nearest placed neighbour, and a
        // member with no lifted slot at all falls back to its anchor offset.
        std::vector<int> assign(m, -1);
        int prev = -1;
        for (int j = 0; j < m; ++j) {
          const Vec3* p = slot_pos(v, j);
          if (!p || centers.empty()) continue;
          int b = nearest_rel((*p - line.origin).dot(line.direction));
          if (b <= prev) b = prev + 1;
          assign[j] = b;
          prev = b;
        }
        int first = -1;
        for (int j = 0; j < m; ++j)
          if (assign[j] >= 0) {
            first = j;
            break;
          }
        if (first < 0) {
          int base = v.left != kAnchorOpen ? 0 : N - m;
          for (int j = 0; j < m; ++j) assign[j] = base + j;
        } else {
          for (int j = first - 1; j >= 0; --j) assign[j] = assign[j + 1] - 1;
          for (int j = first + 1; j < m; ++j)
            if (assign[j] < 0) assign[j] = assign[j - 1] + 1;
        }
        for (int j = 0; j < m; ++j) {
          int slot = assign[j];
          if (slot < 0 || slot >= N) continue;
          if (v.slots[j].hypothesized)
            ++buckets[slot].hypothesis_hits;
          else
            buckets[slot].real.emplace_back(v.ref.frame, v.slots[j].index);
        }
      }
      sg.rank = static_cast<int>(line.chain.size());
      int sg_id = static_cast<int>(G.sector_groups.size());
      line.chain.push_back(sg_id);
      for (int slot = 0; slot < N; ++slot) {
        if (buckets[slot].real.empty()) continue;  // hypothesis never confirmed
        GlobalModule mod;
        mod.line = static_cast<int>(l);
        mod.sector_rank = sg.rank;
        mod.row_position = line.row_position;
        mod.in_row_index = slot;
        mod.hypothesis_confirmations = buckets[slot].hypothesis_hits;
        std::sort(buckets[slot].real.begin(), buckets[slot].real.end());
        for (const auto& [f, det] : buckets[slot].real) {
          Observation obs;
          obs.frame = f;
          obs.detection = det;
          const LiftedStructure& L = frames[f].lifted;
          if (det < static_cast<int>(L.detections.size()) && L.detections[det].lifted) {
            obs.has_pose = true;
            obs.sample = L.detections[det].sample;
            obs.dims_m = L.detection_dims_m[det];
          }
          mod.observations.push_back(std::move(obs));
        }
        bool any_pose = std::any_of(mod.observations.begin(), mod.observations.end(),
                                    [](const Observation& o) { return o.has_pose; });
        if (!any_pose) {
          note("module without 3D observation dropped (line " + std::to_string(l) + ")");
          continue;
        }
        // Temporarily stash the owning group; bench ids follow later.
        mod.bench = sg_id;
        G.modules.push_back(std::move(mod));
      }
      G.sector_groups.push_back(sg);
    }
  }

  // Physical chains: lines sharing a frame's bench belong together.
  UnionFind line_uf(G.lines.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const ImageStructure& S = frames[f].structure;
    for (const Bench2D& bench : S.benches) {
      if (!bench.valid) continue;
      int first = -1;
      for (int row : bench.rows) {
        auto it = line_of_row.find({static_cast<int>(f), row});
        if (it == line_of_row.end()) continue;
        if (first < 0)
          first = it->second;
        else
          line_uf.unite(first, it->second);
      }
    }
  }
  std::map<std::size_t, std::vector<int>> bundle_comps;
  for (std::size_t i = 0; i < G.lines.size(); ++i)
    bundle_comps[line_uf.find(i)].push_back(static_cast<int>(i));
  std::vector<std::vector<int>> bundles;
  for (auto& [root, idxs] : bundle_comps) bundles.push_back(idxs);
  std::sort(bundles.begin(), bundles.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  for (std::size_t b = 0; b < bundles.size(); ++b)
    for (int l : bundles[b]) G.lines[l].bundle = static_cast<int>(b);
  G.report.bundles = static_cast<int>(bundles.size());

  // One bench per chain rank; the member lines sorted by row position.
  std::map<int, int> group_to_bench;
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    std::vector<int> lines_sorted = bundles[b];
    std::sort(lines_sorted.begin(), lines_sorted.end(), [&](int a, int c) {
      if (G.lines[a].row_position != G.lines[c].row_position)
        return G.lines[a].row_position < G.lines[c].row_position;
      return a < c;
    });
    std::size_t max_rank = 0;
    for (int l : lines_sorted) max_rank = std::max(max_rank, G.lines[l].chain.size());
    bool uneven = false;
    for (int l : lines_sorted)
      if (G.lines[l].chain.size() != max_rank) uneven = true;
    if (uneven)
      note("bundle " + std::to_string(b) + ": member lines disagree on bench count");
    int positions = 0;
    for (int l : lines_sorted) positions = std::max(positions, G.lines[l].row_position + 1);
    for (std::size_t r = 0; r < max_rank; ++r) {
      GlobalBench bench;
      bench.bench_id = static_cast<int>(G.benches.size());
      bench.bundle = static_cast<int>(b);
      bench.rank = static_cast<int>(r);
      bench.sector_groups.assign(positions, -1);
      for (int l : lines_sorted) {
        if (r >= G.lines[l].chain.size()) continue;
        int sg = G.lines[l].chain[r];
        bench.sector_groups[G.lines[l].row_position] = sg;
        group_to_bench[sg] = bench.bench_id;
      }
      G.benches.push_back(std::move(bench));
    }
  }
  for (GlobalModule& mod : G.modules) {
    auto it = group_to_bench.find(mod.bench);
    mod.bench = it != group_to_bench.end() ? it->second : -1;
  }

  // Global ids run along each line's chain.
  std::sort(G.modules.begin(), G.modules.end(), [](const GlobalModule& a, const GlobalModule& b) {
    if (a.line != b.line) return a.line < b.line;
    if (a.sector_rank != b.sector_rank) return a.sector_rank < b.sector_rank;
    return a.in_row_index < b.in_row_index;
  });
  for (std::size_t i = 0; i < G.modules.size(); ++i)
    G.modules[i].global_id = static_cast<int>(i);

  G.report.keypoint_groups = static_cast<int>(G.keypoint_groups.size());
  G.report.lines = static_cast<int>(G.lines.size());
  G.report.sector_groups = static_cast<int>(G.sector_groups.size());
  G.report.benches = static_cast<int>(G.benches.size());
  G.report.modules = static_cast<int>(G.modules.size());
  return G;
}

}  // namespace pvmap
