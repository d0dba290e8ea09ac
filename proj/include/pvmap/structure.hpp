#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "pvmap/detections.hpp"
#include "pvmap/errors.hpp"
#include "pvmap/geometry.hpp"
#include "pvmap/raster.hpp"
#include "pvmap/rng.hpp"
#include "pvmap/stats.hpp"
#include "pvmap/union_find.hpp"

namespace pvmap {

struct RowLine {
  Vec2 point{0, 0};      // centroid of the inlier centers
  Vec2 direction{1, 0};  // unit; x component positive (ties toward +y)
  std::vector<int> inliers;  // detection indices, ordered along direction
  double median_spacing = 0.0;
};

// Rows that trace the same physical table, ordered north to south.
struct Bench2D {
  std::vector<int> rows;
  bool valid = false;  // exactly rows_per_bench members
};

enum class GapKind {
  bench_gap,  // confirmed separation between benches
  rejected    // candidate that failed the shade test
};

struct GapKeypoint {
  int row = -1;
  int left_module = -1;   // detection index, -1 for synthetic keypoints
  int right_module = -1;
  Vec2 midpoint{0, 0};
  GapKind kind = GapKind::bench_gap;
  bool synthetic = false;  // inserted by repair or manual correction
};

// Stand-in for a module that evaded detection; awaits cross-image
// confirmation.
struct HypothesizedModule {
  int row = -1;
  Vec2 center{0, 0};
};

struct ModuleSlot {
  bool hypothesized = false;
  int index = -1;  // detection index, or index into hypothesized
};

enum class BoundKind { keypoint, row_end, image_edge };

struct SectorBound {
  BoundKind kind = BoundKind::image_edge;
  int keypoint = -1;  // index into keypoints when kind == keypoint
};

// Maximal run of modules of one row between two bounds.
struct Sector {
  int row = -1;
  std::vector<ModuleSlot> slots;  // ordered along the row direction
  SectorBound left, right;
};

struct ImageStructure {
  std::string frame_id;
  int image_width = 0;
  int image_height = 0;
  OrientedBox rep_box;
  double median_spacing = 0.0;  // image-level median neighbour distance
  std::vector<RowLine> rows;
  std::vector<Bench2D> benches;  // north to south
  std::vector<int> row_bench;     // per row: bench index
  std::vector<int> row_in_bench;  // per row: position inside its bench
  std::vector<GapKeypoint> keypoints;
  std::vector<HypothesizedModule> hypothesized;
  std::vector<Sector> sectors;
};

struct StructureConfig {
  int rows_per_bench = 0;          // site property, must be set
  double th = 0.1;                 // relative tolerance of the spacing bands
  int n_max = 8;                   // most missing modules one spacing may hide
  int min_inliers = 4;             // smallest accepted row
  int ransac_trials = 500;
  double residual_factor = 0.25;   // row threshold, of representative height
  double coincide_factor = 2.0;    // row-merge limit, of representative height
  double darkness_ratio = 0.7;     // gap shade vs. typical transition
  double end_clearance = 2.0;      // row-end probe, of row median spacing
  double edge_margin = 2.0;        // px, matches the detection border filter
  bool north_up = true;            // image +y runs south

  void validate() const {
    if (rows_per_bench < 1)
      throw InputError("structure config: rows_per_bench must be set (>= 1)");
    if (!(th > 0.0 && th < 0.5)) throw InputError("structure config: th out of (0, 0.5)");
    if (n_max < 1) throw InputError("structure config: n_max must be >= 1");
    if (min_inliers < 2) throw InputError("structure config: min_inliers must be >= 2");
    if (ransac_trials < 1) throw InputError("structure config: ransac_trials must be >= 1");
  }
};

namespace detail {

struct FittedLine {
  Vec2 point;
  Vec2 direction;
};

// Least-squares regression of y on x.  Rows are fit as functions y(x): the
// residual is the vertical offset, which makes near-vertical models (module
// columns, equally collinear in a top-down grid) unfittable by construction.
inline FittedLine regress_line(const std::vector<Vec2>& pts) {
  Vec2 centroid = Vec2::Zero();
  for (const Vec2& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double sxx = 0, sxy = 0;
  for (const Vec2& p : pts) {
    Vec2 d = p - centroid;
    sxx += d.x() * d.x();
    sxy += d.x() * d.y();
  }
  double slope = sxx > 0 ? sxy / sxx : 0.0;
  return {centroid, Vec2(1.0, slope).normalized()};
}

// Vertical misfit of a point against the line through p with direction d.
inline double vertical_residual(const Vec2& q, const Vec2& p, const Vec2& d) {
  double slope = d.y() / d.x();
  return std::abs(q.y() - (p.y() + slope * (q.x() - p.x())));
}

inline Vec2 orient_row_direction(Vec2 d) {
  if (d.x() < 0 || (d.x() == 0 && d.y() < 0)) d = -d;
  return d;
}

}  // namespace detail

// Sequential RANSAC over y(x) regressions: repeatedly fit the strongest
// remaining line (two-point hypotheses, inlier count as score, least-squares
// refinement with one re-collect) and remove its inliers, until no line
// reaches min_inliers.  Vertical point pairs cannot seed a model.
inline std::vector<RowLine> fit_rows_ransac(const std::vector<Vec2>& centers, double threshold,
                                            const StructureConfig& cfg, Rng& rng) {
  std::vector<RowLine> rows;
  std::vector<int> remaining(centers.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  auto collect = [&](const Vec2& p, const Vec2& d) {
    std::vector<int> in;
    for (int i : remaining)
      if (detail::vertical_residual(centers[i], p, d) <= threshold) in.push_back(i);
    return in;
  };
  while (static_cast<int>(remaining.size()) >= cfg.min_inliers) {
    int best_count = 0;
    Vec2 best_p, best_d;
    for (int t = 0; t < cfg.ransac_trials; ++t) {
      std::size_t i = rng.index(remaining.size());
      std::size_t j = rng.index(remaining.size() - 1);
      if (j >= i) ++j;
      Vec2 p = centers[remaining[i]];
      Vec2 d = centers[remaining[j]] - p;
      if (std::abs(d.x()) < 1e-9) continue;
      d.normalize();
      int count = 0;
      for (int idx : remaining)
        if (detail::vertical_residual(centers[idx], p, d) <= threshold) ++count;
      if (count > best_count) {
        best_count = count;
        best_p = p;
        best_d = d;
      }
    }
    if (best_count < cfg.min_inliers) break;
    std::vector<int> inliers = collect(best_p, best_d);
    std::vector<Vec2> pts;
    for (int i : inliers) pts.push_back(centers[i]);
    detail::FittedLine refined = detail::regress_line(pts);
    std::vector<int> recollected = collect(refined.point, refined.direction);
    if (static_cast<int>(recollected.size()) >= cfg.min_inliers) inliers = recollected;
    pts.clear();
    for (int i : inliers) pts.push_back(centers[i]);
    detail::FittedLine fin = detail::regress_line(pts);
    RowLine row;
    row.point = fin.point;
    row.direction = detail::orient_row_direction(fin.direction);
    row.inliers = inliers;
    std::sort(row.inliers.begin(), row.inliers.end(), [&](int a, int b) {
      double ta = (centers[a] - row.point).dot(row.direction);
      double tb = (centers[b] - row.point).dot(row.direction);
      if (ta != tb) return ta < tb;
      return a < b;
    });
    rows.push_back(std::move(row));
    std::vector<int> consumed = inliers;
    std::sort(consumed.begin(), consumed.end());
    std::vector<int> next;
    for (int i : remaining)
      if (!std::binary_search(consumed.begin(), consumed.end(), i)) next.push_back(i);
    remaining = std::move(next);
  }
  return rows;
}

// Distance between two row lines measured inside the image: each line is cut
// to the segment between its border crossings and the larger of the two
// directed segment-to-segment deviations is returned.
inline double hausdorff_line_distance(const RowLine& a, const RowLine& b, double width,
                                      double height) {
  auto sa = line_rect_crossings(a.point, a.direction, width, height);
  auto sb = line_rect_crossings(b.point, b.direction, width, height);
  if (!sa || !sb) throw InternalError("hausdorff_line_distance: line misses the image rectangle");
  auto seg_point = [](const std::array<Vec2, 2>& s, const Vec2& q) {
    Vec2 ab = s[1] - s[0];
    double len2 = ab.squaredNorm();
    double t = len2 > 0 ? std::clamp((q - s[0]).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (q - (s[0] + t * ab)).norm();
  };
  double h = 0.0;
  for (const Vec2& q : *sa) h = std::max(h, seg_point(*sb, q));
  for (const Vec2& q : *sb) h = std::max(h, seg_point(*sa, q));
  return h;
}

struct BenchGrouping {
  std::vector<Bench2D> benches;
  std::vector<int> row_bench;
  std::vector<int> row_in_bench;
};

// Rows whose in-image distance stays below coincide_factor * representative
// height trace the same bench.  Rows inside a bench and benches themselves
// are ordered north to south.
inline BenchGrouping group_rows_into_benches(const std::vector<RowLine>& rows,
                                             const std::vector<Vec2>& centers, double width,
                                             double height, const OrientedBox& rep,
                                             const StructureConfig& cfg) {
  const double limit = cfg.coincide_factor * rep.height;
  UnionFind uf(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j)
      if (hausdorff_line_distance(rows[i], rows[j], width, height) <= limit) uf.unite(i, j);
  std::vector<double> mean_y(rows.size(), 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int idx : rows[i].inliers) mean_y[i] += centers[idx].y();
    mean_y[i] /= static_cast<double>(rows[i].inliers.size());
  }
  // Image +y runs south for north-up imagery, so ascending y is north to
  // south; a flipped flight inverts the order.
  auto souther = [&](double ya, double yb) { return cfg.north_up ? ya < yb : ya > yb; };
  std::vector<std::vector<int>> groups;
  std::vector<int> root_group(rows.size(), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::size_t r = uf.find(i);
    if (root_group[r] < 0) {
      root_group[r] = static_cast<int>(groups.size());
      groups.emplace_back();
    }
    groups[root_group[r]].push_back(static_cast<int>(i));
  }
  for (std::vector<int>& g : groups)
    std::sort(g.begin(), g.end(), [&](int a, int b) {
      if (mean_y[a] != mean_y[b]) return souther(mean_y[a], mean_y[b]);
      return a < b;
    });
  std::sort(groups.begin(), groups.end(), [&](const std::vector<int>& a,
                                              const std::vector<int>& b) {
    double ya = 0, yb = 0;
    for (int i : a) ya += mean_y[i];
    for (int i : b) yb += mean_y[i];
    ya /= static_cast<double>(a.size());
    yb /= static_cast<double>(b.size());
    if (ya != yb) return souther(ya, yb);
    return a[0] < b[0];
  });
  BenchGrouping out;
  out.row_bench.assign(rows.size(), -1);
  out.row_in_bench.assign(rows.size(), -1);
  for (const std::vector<int>& g : groups) {
    Bench2D bench;
    bench.rows = g;
    bench.valid = static_cast<int>(g.size()) == cfg.rows_per_bench;
    int bench_idx = static_cast<int>(out.benches.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      out.row_bench[g[k]] = bench_idx;
      out.row_in_bench[g[k]] = static_cast<int>(k);
    }
    out.benches.push_back(std::move(bench));
  }
  return out;
}

inline double row_median_spacing(const RowLine& row, const std::vector<Vec2>& centers) {
  if (row.inliers.size() < 2) return 0.0;
  std::vector<double> d;
  for (std::size_t k = 0; k + 1 < row.inliers.size(); ++k)
    d.push_back((centers[row.inliers[k + 1]] - centers[row.inliers[k]]).norm());
  return median(d);
}

// Neighbour spacings that fall inside the bench-gap band: wider than a plain
// inter-module step but too narrow to hide a whole module.
inline std::vector<GapKeypoint> find_gap_candidates(const RowLine& row, int row_index,
                                                    const std::vector<Vec2>& centers,
                                                    double th) {
  if (row.inliers.size() < 3)
    throw InputError("find_gap_candidates: need at least 3 modules in the row");
  const double d_med = row.median_spacing;
  std::vector<GapKeypoint> out;
  for (std::size_t k = 0; k + 1 < row.inliers.size(); ++k) {
    int a = row.inliers[k];
    int b = row.inliers[k + 1];
    double d = (centers[b] - centers[a]).norm();
    if (d > (1.0 + th) * d_med && d < 2.0 * (1.0 - th) * d_med) {
      GapKeypoint kp;
      kp.row = row_index;
      kp.left_module = a;
      kp.right_module = b;
      kp.midpoint = 0.5 * (centers[a] + centers[b]);
      kp.kind = GapKind::bench_gap;
      out.push_back(kp);
    }
  }
  return out;
}

namespace detail {

struct TransitionPatch {
  bool valid = false;
  double luminance = 0.0;  // brightest cross-column of the patch
};

// Shade of the strip between two neighbouring boxes, half a representative
// height tall, sampled on a roughly 1 px grid.  The reported luminance is the
// mean of the brightest column, and the strip is extended a quarter box width
// into both boxes: detected edges sit a few pixels off the physical ones, and
// a ground sliver hiding just past a jittered edge must still register.  A
// column statistic keeps that sliver visible where a whole-patch mean would
// drown it in box-interior pixels.  Columns run perpendicular to the fitted
// row direction, not to the noisy center-to-center segment, so they stay
// parallel to the physical inter-module seam.
inline TransitionPatch sample_transition(const ImageRaster& img, const OrientedBox& a,
                                         const OrientedBox& b, const OrientedBox& rep,
                                         const Vec2& row_direction) {
  TransitionPatch patch;
  if ((b.center - a.center).norm() < 1e-9 || row_direction.norm() < 1e-9) return patch;
  Vec2 u = row_direction.normalized();
  if ((b.center - a.center).dot(u) < 0) u = -u;
  const double ext = 0.25 * rep.width;
  const double sa = a.center.dot(u) + std::max(0.0, a.half_extent_along(u) - ext);
  const double sb = b.center.dot(u) - std::max(0.0, b.half_extent_along(u) - ext);
  double span = sb - sa;
  Vec2 mid = 0.5 * (a.center + b.center);
  double t0 = sa - mid.dot(u);
  if (span < 1.0) {
    t0 = 0.5 * (sa + sb) - mid.dot(u) - 0.5;
    span = 1.0;
  }
  Vec2 perp(-u.y(), u.x());
  double half_h = 0.25 * rep.height;
  int nu = std::max(1, static_cast<int>(span));
  int nv = std::max(1, static_cast<int>(2.0 * half_h));
  double brightest = 0.0;
  for (int iu = 0; iu < nu; ++iu) {
    double t = t0 + (iu + 0.5) / nu * span;
    double sum = 0.0;
    for (int iv = 0; iv < nv; ++iv) {
      double s = -half_h + (iv + 0.5) / nv * 2.0 * half_h;
      Vec2 p = mid + t * u + s * perp;
      int x = static_cast<int>(std::floor(p.x()));
      int y = static_cast<int>(std::floor(p.y()));
      if (!img.contains(x, y)) return patch;  // invalid: leaves the raster
      sum += img.luminance(x, y);
    }
    brightest = std::max(brightest, sum / nv);
  }
  patch.valid = true;
  patch.luminance = brightest;
  return patch;
}

}  // namespace detail

// Shade test for gap candidates: a real bench gap shows unlit ground, clearly
// darker than the typical inter-module transition of the same row.  Without
// imagery every candidate is accepted.  Candidates whose patch leaves the
// raster are rejected (with a warning).  fallback_ref stands in for the row
// reference when every transition of the row is itself a candidate.
inline void classify_gap_candidates(const RowLine& row, std::vector<GapKeypoint>& candidates,
                                    const std::vector<ModuleDetection>& dets,
                                    const ImageRaster* img, const OrientedBox& rep,
                                    double darkness_ratio, double fallback_ref = 0.0,
                                    std::vector<std::string>* warnings = nullptr) {
  if (img == nullptr || candidates.empty()) return;
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };
  std::vector<bool> is_candidate(row.inliers.size(), false);
  for (const GapKeypoint& kp : candidates)
    for (std::size_t k = 0; k + 1 < row.inliers.size(); ++k)
      if (row.inliers[k] == kp.left_module && row.inliers[k + 1] == kp.right_module)
        is_candidate[k] = true;
  std::vector<double> reference;
  for (std::size_t k = 0; k + 1 < row.inliers.size(); ++k) {
    if (is_candidate[k]) continue;
    detail::TransitionPatch p = detail::sample_transition(
        *img, dets[row.inliers[k]].box, dets[row.inliers[k + 1]].box, rep, row.direction);
    if (p.valid) reference.push_back(p.luminance);
  }
  if (reference.empty() && fallback_ref > 0.0) {
    warn("gap classification: row has no reference transitions; using frame reference");
    reference.push_back(fallback_ref);
  }
  if (reference.empty()) {
    warn("gap classification: no reference transitions in row; keeping all candidates");
    return;
  }
  const double ref_median = median(reference);
  for (GapKeypoint& kp : candidates) {
    detail::TransitionPatch p = detail::sample_transition(
        *img, dets[kp.left_module].box, dets[kp.right_module].box, rep, row.direction);
    if (!p.valid) {
      kp.kind = GapKind::rejected;
      warn("gap classification: candidate patch leaves the raster; rejected");
      continue;
    }
    kp.kind = p.luminance < darkness_ratio * ref_median ? GapKind::bench_gap
                                                             : GapKind::rejected;
  }
}

// A spacing close to (n+1) strides hides n modules; the candidates are
// placed at even fractions between the two flanking detections.  Spacings
// already explained as bench gaps are skipped.
inline std::vector<HypothesizedModule> hypothesize_missing(
    const RowLine& row, int row_index, const std::vector<Vec2>& centers,
    const std::vector<GapKeypoint>& accepted_gaps, double th, int n_max) {
  std::vector<HypothesizedModule> out;
  const double d_med = row.median_spacing;
  for (std::size_t k = 0; k + 1 < row.inliers.size(); ++k) {
    int a = row.inliers[k];
    int b = row.inliers[k + 1];
    bool consumed = false;
    for (const GapKeypoint& kp : accepted_gaps)
      if (kp.kind == GapKind::bench_gap && kp.left_module == a && kp.right_module == b)
        consumed = true;
    if (consumed) continue;
    double d = (centers[b] - centers[a]).norm();
    for (int n = 1; n <= n_max; ++n) {
      double mid = static_cast<double>(n + 1) * d_med;
      if (d > (1.0 - th) * mid && d < (1.0 + th) * mid) {
        for (int j = 1; j <= n; ++j) {
          HypothesizedModule h;
          h.row = row_index;
          h.center = centers[a] + (centers[b] - centers[a]) * (static_cast<double>(j) / (n + 1));
          out.push_back(h);
        }
        break;
      }
    }
  }
  return out;
}

// Cut each valid bench row at its bench-gap keypoints and classify the outer
// bounds: a row that stops although the image continues past it ends at a
// physical row end; otherwise the view is cut off by the image edge.
inline void build_sectors(ImageStructure& S, const std::vector<ModuleDetection>& dets,
                          const StructureConfig& cfg) {
  S.sectors.clear();
  for (const Bench2D& bench : S.benches) {
    if (!bench.valid) continue;
    for (int row_idx : bench.rows) {
      const RowLine& row = S.rows[row_idx];
      struct Entry {
        double t;
        ModuleSlot slot;
        Vec2 center;
      };
      std::vector<Entry> entries;
      for (int det : row.inliers) {
        Vec2 c = dets[det].box.center;
        entries.push_back({(c - row.point).dot(row.direction), {false, det}, c});
      }
      for (std::size_t h = 0; h < S.hypothesized.size(); ++h) {
        if (S.hypothesized[h].row != row_idx) continue;
        Vec2 c = S.hypothesized[h].center;
        entries.push_back({(c - row.point).dot(row.direction), {true, static_cast<int>(h)}, c});
      }
      std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.t != b.t) return a.t < b.t;
        if (a.slot.hypothesized != b.slot.hypothesized) return !a.slot.hypothesized;
        return a.slot.index < b.slot.index;
      });
      if (entries.empty()) continue;
      std::vector<std::pair<double, int>> cuts;  // (t, keypoint index)
      for (std::size_t k = 0; k < S.keypoints.size(); ++k) {
        const GapKeypoint& kp = S.keypoints[k];
        if (kp.row != row_idx || kp.kind != GapKind::bench_gap) continue;
        cuts.emplace_back((kp.midpoint - row.point).dot(row.direction), static_cast<int>(k));
      }
      std::sort(cuts.begin(), cuts.end());
      const double shrink = cfg.edge_margin + 0.5 * S.rep_box.diagonal();
      auto outer_bound = [&](const Vec2& extreme, double sign) {
        Vec2 probe = extreme + sign * cfg.end_clearance * row.median_spacing * row.direction;
        bool inside = probe.x() > shrink && probe.x() < S.image_width - shrink &&
                      probe.y() > shrink && probe.y() < S.image_height - shrink;
        SectorBound b;
        b.kind = inside ? BoundKind::row_end : BoundKind::image_edge;
        return b;
      };
      std::size_t e = 0;
      for (std::size_t seg = 0; seg <= cuts.size(); ++seg) {
        double hi = seg < cuts.size() ? cuts[seg].first
                                      : std::numeric_limits<double>::infinity();
        Sector sec;
        sec.row = row_idx;
        std::vector<Vec2> sec_centers;
        while (e < entries.size() && entries[e].t < hi) {
          sec.slots.push_back(entries[e].slot);
          sec_centers.push_back(entries[e].center);
          ++e;
        }
        if (sec.slots.empty()) continue;
        if (seg == 0) {
          sec.left = outer_bound(sec_centers.front(), -1.0);
        } else {
          sec.left.kind = BoundKind::keypoint;
          sec.left.keypoint = cuts[seg - 1].second;
        }
        if (seg == cuts.size()) {
          sec.right = outer_bound(sec_centers.back(), 1.0);
        } else {
          sec.right.kind = BoundKind::keypoint;
          sec.right.keypoint = cuts[seg].second;
        }
        S.sectors.push_back(std::move(sec));
      }
    }
  }
}

// Full single-image inference: rows, benches, gap keypoints, missing-module
// hypotheses, sectors.
inline ImageStructure build_image_structure(const std::string& frame_id,
                                            const std::vector<ModuleDetection>& dets,
                                            const OrientedBox& rep, int width, int height,
                                            const ImageRaster* img, const StructureConfig& cfg,
                                            std::uint64_t seed,
                                            std::vector<std::string>* warnings = nullptr) {
  cfg.validate();
  ImageStructure S;
  S.frame_id = frame_id;
  S.image_width = width;
  S.image_height = height;
  S.rep_box = rep;
  std::vector<Vec2> centers;
  centers.reserve(dets.size());
  for (const ModuleDetection& d : dets) centers.push_back(d.box.center);
  Rng rng(derive_seed(seed, frame_id));
  S.rows = fit_rows_ransac(centers, cfg.residual_factor * rep.height, cfg, rng);
  for (RowLine& row : S.rows) row.median_spacing = row_median_spacing(row, centers);
  BenchGrouping grouping = group_rows_into_benches(S.rows, centers, width, height, rep, cfg);
  S.benches = std::move(grouping.benches);
  S.row_bench = std::move(grouping.row_bench);
  S.row_in_bench = std::move(grouping.row_in_bench);
  std::vector<double> all_spacings;
  for (const RowLine& row : S.rows)
    for (std::size_t k = 0; k + 1 < row.inliers.size(); ++k)
      all_spacings.push_back((centers[row.inliers[k + 1]] - centers[row.inliers[k]]).norm());
  S.median_spacing = all_spacings.empty() ? 0.0 : median(all_spacings);
  std::vector<std::vector<GapKeypoint>> row_cands(S.rows.size());
  std::vector<bool> row_eligible(S.rows.size(), false);
  for (std::size_t r = 0; r < S.rows.size(); ++r) {
    int bench = S.row_bench[r];
    if (bench < 0 || !S.benches[bench].valid) continue;
    if (S.rows[r].inliers.size() < 3) continue;
    row_eligible[r] = true;
    row_cands[r] = find_gap_candidates(S.rows[r], static_cast<int>(r), centers, cfg.th);
  }
  double frame_ref = 0.0;
  if (img != nullptr) {
    // Pooled reference over every non-candidate transition of the frame; a
    // short row whose transitions are all candidates still gets a yardstick.
    std::vector<double> pooled;
    for (std::size_t r = 0; r < S.rows.size(); ++r) {
      if (!row_eligible[r]) continue;
      std::vector<bool> is_cand(S.rows[r].inliers.size(), false);
      for (const GapKeypoint& kp : row_cands[r])
        for (std::size_t k = 0; k + 1 < S.rows[r].inliers.size(); ++k)
          if (S.rows[r].inliers[k] == kp.left_module &&
              S.rows[r].inliers[k + 1] == kp.right_module)
            is_cand[k] = true;
      for (std::size_t k = 0; k + 1 < S.rows[r].inliers.size(); ++k) {
        if (is_cand[k]) continue;
        detail::TransitionPatch p = detail::sample_transition(
            *img, dets[S.rows[r].inliers[k]].box, dets[S.rows[r].inliers[k + 1]].box, rep,
            S.rows[r].direction);
        if (p.valid) pooled.push_back(p.luminance);
      }
    }
    if (!pooled.empty()) frame_ref = median(pooled);
  }
  for (std::size_t r = 0; r < S.rows.size(); ++r) {
    if (!row_eligible[r]) continue;
    std::vector<GapKeypoint>& cands = row_cands[r];
    classify_gap_candidates(S.rows[r], cands, dets, img, rep, cfg.darkness_ratio, frame_ref,
                            warnings);
    std::vector<HypothesizedModule> hyps = hypothesize_missing(
        S.rows[r], static_cast<int>(r), centers, cands, cfg.th, cfg.n_max);
    for (GapKeypoint& kp : cands) S.keypoints.push_back(kp);
    for (HypothesizedModule& h : hyps) S.hypothesized.push_back(h);
  }
  build_sectors(S, dets, cfg);
  return S;
}

// ---- manual corrections ----------------------------------------------------

enum class CorrectionKind { add_keypoint, delete_keypoint, add_module, delete_module };

struct Correction {
  CorrectionKind kind = CorrectionKind::add_keypoint;
  std::string frame_id;
  int row = -1;        // add_keypoint / add_module
  int after = -1;      // add_keypoint: in-row position the keypoint follows
  Vec2 position{0, 0}; // add_module: image coordinates
  int keypoint = -1;   // delete_keypoint
  int detection = -1;  // delete_module
};

// Mutates the primitive layers (keypoints, row membership, detections) and
// logs one line per edit; the caller rebuilds the sectors afterwards.
inline void apply_corrections(ImageStructure& S, std::vector<ModuleDetection>& dets,
                              const std::vector<Correction>& edits, const StructureConfig& cfg,
                              std::vector<std::string>* log = nullptr) {
  auto note = [&](const std::string& line) {
    if (log) log->push_back(line);
  };
  for (const Correction& c : edits) {
    if (c.frame_id != S.frame_id) continue;
    switch (c.kind) {
      case CorrectionKind::add_keypoint: {
        if (c.row < 0 || c.row >= static_cast<int>(S.rows.size()))
          throw InputError("correction add_keypoint: row " + std::to_string(c.row) +
                           " does not exist in frame " + S.frame_id);
        const RowLine& row = S.rows[c.row];
        if (c.after < 0 || c.after + 1 >= static_cast<int>(row.inliers.size()))
          throw InputError("correction add_keypoint: in-row position " +
                           std::to_string(c.after) + " has no right neighbour in frame " +
                           S.frame_id);
        GapKeypoint kp;
        kp.row = c.row;
        kp.left_module = row.inliers[c.after];
        kp.right_module = row.inliers[c.after + 1];
        kp.midpoint = 0.5 * (dets[kp.left_module].box.center + dets[kp.right_module].box.center);
        kp.kind = GapKind::bench_gap;
        kp.synthetic = true;
        S.keypoints.push_back(kp);
        note(S.frame_id + ": add_keypoint row " + std::to_string(c.row) + " after " +
             std::to_string(c.after));
        break;
      }
      case CorrectionKind::delete_keypoint: {
        if (c.keypoint < 0 || c.keypoint >= static_cast<int>(S.keypoints.size()))
          throw InputError("correction delete_keypoint: index out of range in frame " +
                           S.frame_id);
        S.keypoints[c.keypoint].kind = GapKind::rejected;
        note(S.frame_id + ": delete_keypoint " + std::to_string(c.keypoint));
        break;
      }
      case CorrectionKind::add_module: {
        if (c.row < 0 || c.row >= static_cast<int>(S.rows.size()))
          throw InputError("correction add_module: row " + std::to_string(c.row) +
                           " does not exist in frame " + S.frame_id);
        ModuleDetection det;
        det.box = S.rep_box;
        det.box.center = c.position;
        det.source = DetectorSource::primary;
        det.frame_id = S.frame_id;
        det.detection_index = static_cast<int>(dets.size());
        int idx = static_cast<int>(dets.size());
        dets.push_back(det);
        RowLine& row = S.rows[c.row];
        double t = (c.position - row.point).dot(row.direction);
        auto pos = std::find_if(row.inliers.begin(), row.inliers.end(), [&](int i) {
          return (dets[i].box.center - row.point).dot(row.direction) > t;
        });
        row.inliers.insert(pos, idx);
        note(S.frame_id + ": add_module row " + std::to_string(c.row));
        break;
      }
      case CorrectionKind::delete_module: {
        bool found = false;
        for (RowLine& row : S.rows) {
          auto it = std::find(row.inliers.begin(), row.inliers.end(), c.detection);
          if (it != row.inliers.end()) {
            row.inliers.erase(it);
            found = true;
          }
        }
        if (!found)
          throw InputError("correction delete_module: detection " + std::to_string(c.detection) +
                           " is not part of any row in frame " + S.frame_id);
        for (GapKeypoint& kp : S.keypoints)
          if (kp.left_module == c.detection || kp.right_module == c.detection)
            kp.kind = GapKind::rejected;
        note(S.frame_id + ": delete_module " + std::to_string(c.detection));
        break;
      }
    }
  }
  build_sectors(S, dets, cfg);
}

}  // namespace pvmap
