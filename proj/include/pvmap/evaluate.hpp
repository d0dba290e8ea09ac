#pragma once

#include <Eigen/Geometry>
#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pvmap/errors.hpp"
#include "pvmap/optimize.hpp"
#include "pvmap/simulate.hpp"
#include "pvmap/stats.hpp"

namespace pvmap {

struct FivePoint {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  int count = 0;

  static FivePoint of(std::vector<double> values) {
    FivePoint f;
    f.count = static_cast<int>(values.size());
    if (values.empty()) return f;
    f.min = quantile(values, 0.0);
    f.q1 = quantile(values, 0.25);
    f.median = quantile(values, 0.5);
    f.q3 = quantile(values, 0.75);
    f.max = quantile(values, 1.0);
    return f;
  }
};

// How far the bench optimization moved each module from its averaged
// observation position, per axis.
struct ConsistencyReport {
  FivePoint dx, dy, dz, dnorm;
};

inline ConsistencyReport internal_consistency(const PlantModel& model,
                                              const std::vector<RawPose>& raw) {
  std::map<int, Vec3> raw_by_id;
  for (const RawPose& r : raw) raw_by_id[r.global_id] = r.position;
  std::vector<double> dx, dy, dz, dn;
  for (const ModulePose& m : model.modules) {
    auto it = raw_by_id.find(m.global_id);
    if (it == raw_by_id.end()) continue;
    Vec3 d = m.position - it->second;
    dx.push_back(d.x());
    dy.push_back(d.y());
    dz.push_back(d.z());
    dn.push_back(d.norm());
  }
  return {FivePoint::of(dx), FivePoint::of(dy), FivePoint::of(dz), FivePoint::of(dn)};
}

// Center distances between structural neighbours: along the row (adjacent
// slots of one sector) and across rows (same slot, adjacent rows of one
// bench).  Missing modules leave holes, so only truly adjacent indices pair.
struct SpacingReport {
  FivePoint row_spacing;
  FivePoint column_spacing;
};

inline SpacingReport spacing_stats(const PlantModel& model) {
  std::map<std::tuple<int, int, int>, std::map<int, const ModulePose*>> rows, columns;
  for (const ModulePose& m : model.modules) {
    rows[{m.bench, m.row_index, m.sector}][m.in_row_index] = &m;
    columns[{m.bench, m.sector, m.in_row_index}][m.row_index] = &m;
  }
  auto gather = [](const auto& groups) {
    std::vector<double> d;
    for (const auto& [key, members] : groups)
      for (auto it = members.begin(); it != members.end(); ++it) {
        auto next = std::next(it);
        if (next != members.end() && next->first == it->first + 1)
          d.push_back((next->second->position - it->second->position).norm());
      }
    return d;
  };
  return {FivePoint::of(gather(rows)), FivePoint::of(gather(columns))};
}

// Rigid comparison against a reference model of the same site.  Modules pair
// by structural identity; the anchors (or, without anchors, all pairs) fix a
// rigid (no scale) alignment and the report shows what remains over all pairs.
struct ReferenceReport {
  int pairs = 0;
  int unmatched_model = 0;
  int unmatched_reference = 0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation{0, 0, 0};
  double rmse = 0;
  FivePoint residual;                        // per-pair distances after alignment
  FivePoint residual_x, residual_y, residual_z;  // signed, aligned model - reference
};

inline ReferenceReport compare_to_reference(const PlantModel& model, const PlantModel& reference,
                                            const std::vector<int>& anchor_global_ids = {}) {
  using Key = std::tuple<int, int, int, int, int>;
  auto key_of = [](const ModulePose& m) {
    return Key{m.line, m.bench, m.sector, m.row_index, m.in_row_index};
  };
  std::map<Key, const ModulePose*> ref;
  for (const ModulePose& m : reference.modules) {
    if (!ref.emplace(key_of(m), &m).second)
      throw InputError("reference model: duplicate structural identity");
  }
  std::vector<std::pair<const ModulePose*, const ModulePose*>> pairs;
  ReferenceReport report;
  for (const ModulePose& m : model.modules) {
    auto it = ref.find(key_of(m));
    if (it == ref.end()) {
      ++report.unmatched_model;
      continue;
    }
    pairs.push_back({&m, it->second});
  }
  report.pairs = static_cast<int>(pairs.size());
  report.unmatched_reference = static_cast<int>(reference.modules.size() - pairs.size());
  if (pairs.size() < 3) throw InputError("reference comparison needs at least 3 paired modules");

  std::vector<std::size_t> align;  // indices into pairs used for the rigid fit
  if (anchor_global_ids.empty()) {
    align.resize(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) align[i] = i;
  } else {
    std::set<int> wanted(anchor_global_ids.begin(), anchor_global_ids.end());
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (wanted.count(pairs[i].first->global_id)) align.push_back(i);
    if (align.size() < 3)
      throw InputError("reference comparison needs at least 3 paired anchors");
  }
  Eigen::Matrix3Xd a_src(3, align.size()), a_dst(3, align.size());
  for (std::size_t k = 0; k < align.size(); ++k) {
    a_src.col(k) = pairs[align[k]].first->position;
    a_dst.col(k) = pairs[align[k]].second->position;
  }
  Eigen::Matrix3Xd centered = a_src.colwise() - a_src.rowwise().mean();
  Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(centered);
  if (svd.singularValues()(1) <= 1e-9 * std::max(1.0, svd.singularValues()(0)))
    throw InputError("reference comparison: anchors are collinear");
  Eigen::Matrix4d T = Eigen::umeyama(a_src, a_dst, false);
  report.rotation = T.block<3, 3>(0, 0);
  report.translation = T.block<3, 1>(0, 3);
  std::vector<double> dist, rx, ry, rz;
  double sq = 0;
  for (const auto& [mod, refm] : pairs) {
    Vec3 r = report.rotation * mod->position + report.translation - refm->position;
    dist.push_back(r.norm());
    rx.push_back(r.x());
    ry.push_back(r.y());
    rz.push_back(r.z());
    sq += r.squaredNorm();
  }
  report.rmse = std::sqrt(sq / pairs.size());
  report.residual = FivePoint::of(dist);
  report.residual_x = FivePoint::of(rx);
  report.residual_y = FivePoint::of(ry);
  report.residual_z = FivePoint::of(rz);
  return report;
}

namespace eval_detail {

// Max-weight perfect assignment on an n x n vote matrix (potentials method).
// Returns column assigned to each row.
inline std::vector<int> hungarian_max(const std::vector<std::vector<double>>& votes) {
  int n = static_cast<int>(votes.size());
  if (n == 0) return {};
  double top = 0;
  for (const auto& row : votes)
    for (double v : row) top = std::max(top, v);
  // Minimize cost = top - vote over a (n+1)-padded dual formulation.
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  const double inf = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = (top - votes[i0 - 1][j - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> match(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1) match[p[j] - 1] = j - 1;
  return match;
}

// Best global bijection between the two label alphabets (vote-maximizing) and
// the fraction of samples whose label survives it.
struct Relabeling {
  std::map<int, int> forward;  // lhs label -> rhs label
  double accuracy = 0;
};

inline Relabeling best_relabeling(const std::vector<std::pair<int, int>>& label_pairs) {
  Relabeling out;
  if (label_pairs.empty()) return out;
  std::map<int, int> lhs, rhs;
  std::vector<int> rhs_labels;
  for (auto [a, b] : label_pairs) {
    lhs.emplace(a, static_cast<int>(lhs.size()));
    if (rhs.emplace(b, static_cast<int>(rhs.size())).second) rhs_labels.push_back(b);
  }
  int n = static_cast<int>(std::max(lhs.size(), rhs.size()));
  std::vector<std::vector<double>> votes(n, std::vector<double>(n, 0));
  for (auto [a, b] : label_pairs) votes[lhs[a]][rhs[b]] += 1;
  std::vector<int> match = hungarian_max(votes);
  for (const auto& [label, idx] : lhs) {
    int m = match[idx];
    if (m >= 0 && m < static_cast<int>(rhs_labels.size())) out.forward[label] = rhs_labels[m];
  }
  double hits = 0;
  for (auto [a, b] : label_pairs) {
    auto it = out.forward.find(a);
    if (it != out.forward.end() && it->second == b) hits += 1;
  }
  out.accuracy = hits / label_pairs.size();
  return out;
}

inline double relabeled_accuracy(const std::vector<std::pair<int, int>>& label_pairs) {
  return best_relabeling(label_pairs).accuracy;
}

}  // namespace eval_detail

// Scoring against simulated ground truth.  Positions match greedily by
// distance inside half the truth nearest-neighbour spacing; the structural
// labels are scored up to a global relabeling, since ids are arbitrary on
// both sides, while rank-like indices (sector, row, slot) compare directly.
struct ScoreReport {
  int truth_count = 0;
  int model_count = 0;
  int matched = 0;
  int spurious = 0;
  double match_radius = 0;
  double recall = 0;
  double rmse = 0;
  FivePoint err_x, err_y, err_z;  // model - truth, per axis
  double abs_med_x = 0, abs_med_y = 0, abs_med_z = 0;  // median absolute error
  double line_accuracy = 0;
  double bench_accuracy = 0;
  double sector_accuracy = 0;
  double row_accuracy = 0;
  double in_row_accuracy = 0;
  double tuple_accuracy = 0;  // all five labels correct at once
};

struct ScoredModule {
  int global_id = -1;
  Vec3 position{0, 0, 0};
  int line = -1, bench = -1, sector = -1, row_index = -1, in_row_index = -1;
};

inline std::vector<ScoredModule> scored_from_model(const PlantModel& model) {
  std::vector<ScoredModule> out;
  for (const ModulePose& m : model.modules)
    out.push_back({m.global_id, m.position, m.line, m.bench, m.sector, m.row_index,
                   m.in_row_index});
  return out;
}

// Same structure, positions replaced by the pre-optimization averages.
inline std::vector<ScoredModule> scored_from_raw(const PlantModel& model,
                                                 const std::vector<RawPose>& raw) {
  std::map<int, Vec3> raw_by_id;
  for (const RawPose& r : raw) raw_by_id[r.global_id] = r.position;
  std::vector<ScoredModule> out = scored_from_model(model);
  std::vector<ScoredModule> kept;
  for (ScoredModule& s : out) {
    auto it = raw_by_id.find(s.global_id);
    if (it == raw_by_id.end()) continue;
    s.position = it->second;
    kept.push_back(s);
  }
  return kept;
}

inline ScoreReport score_against_truth(const std::vector<ScoredModule>& model,
                                       const GroundTruthPlant& truth) {
  ScoreReport report;
  report.truth_count = static_cast<int>(truth.modules.size());
  report.model_count = static_cast<int>(model.size());
  if (truth.modules.size() < 2) throw InputError("ground truth needs at least 2 modules");
  std::vector<double> nn;
  for (const GroundTruthModule& a : truth.modules) {
    double best = std::numeric_limits<double>::infinity();
    for (const GroundTruthModule& b : truth.modules) {
      if (a.truth_id == b.truth_id) continue;
      best = std::min(best, (a.position - b.position).norm());
    }
    nn.push_back(best);
  }
  report.match_radius = 0.5 * median(nn);

  struct Pair {
    double dist;
    int model_idx, truth_idx;
    bool operator<(const Pair& o) const {
      return std::tie(dist, model_idx, truth_idx) < std::tie(o.dist, o.model_idx, o.truth_idx);
    }
  };
  std::vector<Pair> candidates;
  for (std::size_t i = 0; i < model.size(); ++i)
    for (std::size_t j = 0; j < truth.modules.size(); ++j) {
      double d = (model[i].position - truth.modules[j].position).norm();
      if (d <= report.match_radius)
        candidates.push_back({d, static_cast<int>(i), static_cast<int>(j)});
    }
  std::sort(candidates.begin(), candidates.end());
  std::vector<int> model_match(model.size(), -1), truth_match(truth.modules.size(), -1);
  for (const Pair& c : candidates) {
    if (model_match[c.model_idx] >= 0 || truth_match[c.truth_idx] >= 0) continue;
    model_match[c.model_idx] = c.truth_idx;
    truth_match[c.truth_idx] = c.model_idx;
  }

  std::vector<double> ex, ey, ez, ax, ay, az;
  std::vector<std::pair<int, int>> line_pairs, bench_pairs;
  std::vector<bool> direct_hits;  // sector, row and slot all equal
  double sq = 0;
  int sector_hits = 0, row_hits = 0, in_row_hits = 0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    if (model_match[i] < 0) {
      ++report.spurious;
      continue;
    }
    const GroundTruthModule& t = truth.modules[model_match[i]];
    ++report.matched;
    Vec3 d = model[i].position - t.position;
    ex.push_back(d.x());
    ey.push_back(d.y());
    ez.push_back(d.z());
    ax.push_back(std::abs(d.x()));
    ay.push_back(std::abs(d.y()));
    az.push_back(std::abs(d.z()));
    sq += d.squaredNorm();
    line_pairs.push_back({model[i].line, t.line});
    bench_pairs.push_back({model[i].bench, t.bench});
    bool sector_ok = model[i].sector == t.sector;
    bool row_ok = model[i].row_index == t.row;
    bool in_row_ok = model[i].in_row_index == t.in_row;
    if (sector_ok) ++sector_hits;
    if (row_ok) ++row_hits;
    if (in_row_ok) ++in_row_hits;
    direct_hits.push_back(sector_ok && row_ok && in_row_ok);
  }
  report.recall = static_cast<double>(report.matched) / report.truth_count;
  if (report.matched > 0) {
    report.rmse = std::sqrt(sq / report.matched);
    report.err_x = FivePoint::of(ex);
    report.err_y = FivePoint::of(ey);
    report.err_z = FivePoint::of(ez);
    report.abs_med_x = median(ax);
    report.abs_med_y = median(ay);
    report.abs_med_z = median(az);
    eval_detail::Relabeling lines = eval_detail::best_relabeling(line_pairs);
    eval_detail::Relabeling benches = eval_detail::best_relabeling(bench_pairs);
    report.line_accuracy = lines.accuracy;
    report.bench_accuracy = benches.accuracy;
    report.sector_accuracy = static_cast<double>(sector_hits) / report.matched;
    report.row_accuracy = static_cast<double>(row_hits) / report.matched;
    report.in_row_accuracy = static_cast<double>(in_row_hits) / report.matched;
    double tuple_hits = 0;
    for (std::size_t k = 0; k < line_pairs.size(); ++k) {
      auto lit = lines.forward.find(line_pairs[k].first);
      auto bit = benches.forward.find(bench_pairs[k].first);
      bool line_ok = lit != lines.forward.end() && lit->second == line_pairs[k].second;
      bool bench_ok = bit != benches.forward.end() && bit->second == bench_pairs[k].second;
      if (line_ok && bench_ok && direct_hits[k]) tuple_hits += 1;
    }
    report.tuple_accuracy = tuple_hits / report.matched;
  }
  return report;
}

}  // namespace pvmap
