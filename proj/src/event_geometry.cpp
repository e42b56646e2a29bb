#include "evcal/event_geometry.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <deque>
#include <numeric>

#include "evcal/kdtree.hpp"

namespace evcal {

namespace {

std::vector<Vec3> cloud_points(const EventCluster& cluster) {
  std::vector<Vec3> pts;
  pts.reserve(cluster.size());
  for (std::size_t i = 0; i < cluster.size(); ++i) pts.push_back(cluster.point(i));
  return pts;
}

// Smallest-eigenvalue eigenvector of a 3x3 scatter matrix, plus curvature.
struct PlaneFit {
  Vec3 normal;
  double curvature;
  double mid_eigenvalue;
};

PlaneFit fit_from_scatter(const Mat3& scatter) {
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 evals = eig.eigenvalues();  // ascending
  PlaneFit fit;
  fit.normal = eig.eigenvectors().col(0);
  const double trace = evals.sum();
  fit.curvature = trace > 0 ? evals(0) / trace : 0.0;
  fit.mid_eigenvalue = evals(1);
  return fit;
}

void orient_normal(Vec3& n) {
  if (n.z() < 0 || (n.z() == 0 && n.x() < 0)) n = -n;
}

double angle_between_deg(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(std::abs(a.dot(b)), 0.0, 1.0)) * 180.0 / M_PI;
}

}  // namespace

EventCluster denoise(const EventCluster& cluster, int k, double std_ratio) {
  if (cluster.empty()) throw InvalidInputError("denoise: empty cluster");
  if (k < 3) throw InvalidInputError("denoise: need k >= 3");
  if (cluster.size() < std::size_t(k + 1)) {
    throw InvalidInputError("denoise: fewer than k+1 events");
  }

  const KdTree3 tree(cloud_points(cluster));
  const std::size_t n = cluster.size();
  std::vector<double> mean_dist(n);
  std::vector<int> nb;
  for (std::size_t i = 0; i < n; ++i) {
    tree.knn(cluster.point(i), k + 1, nb);
    double sum = 0;
    int count = 0;
    for (int j : nb) {
      if (j == int(i)) continue;
      sum += (tree.point(j) - cluster.point(i)).norm();
      ++count;
    }
    mean_dist[i] = count > 0 ? sum / count : 0.0;
  }

  const double mean = std::accumulate(mean_dist.begin(), mean_dist.end(), 0.0) / double(n);
  double var = 0;
  for (double d : mean_dist) var += (d - mean) * (d - mean);
  const double stddev = std::sqrt(var / double(n));
  const double cutoff = mean + std_ratio * stddev;

  EventCluster out;
  out.t_start = cluster.t_start;
  out.t_end = cluster.t_end;
  out.c_z = cluster.c_z;
  out.events.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (mean_dist[i] <= cutoff) out.events.push_back(cluster.events[i]);
  }
  return out;
}

NormalField estimate_normals(const EventCluster& cluster, int k) {
  if (cluster.size() < std::size_t(k + 1)) {
    throw InvalidInputError("estimate_normals: fewer than k+1 events");
  }
  const KdTree3 tree(cloud_points(cluster));
  const std::size_t n = cluster.size();

  NormalField field;
  field.estimates.resize(n);
  field.neighbors.resize(n);

  std::vector<int> nb;
  for (std::size_t i = 0; i < n; ++i) {
    tree.knn(cluster.point(i), k + 1, nb);
    auto& neighbors = field.neighbors[i];
    neighbors.clear();
    for (int j : nb) {
      if (j != int(i)) neighbors.push_back(j);
    }
    if (int(neighbors.size()) > k) neighbors.resize(k);

    Vec3 mean = Vec3::Zero();
    for (int j : neighbors) mean += tree.point(j);
    mean /= double(neighbors.size());
    Mat3 scatter = Mat3::Zero();
    for (int j : neighbors) {
      const Vec3 d = tree.point(j) - mean;
      scatter += d * d.transpose();
    }
    scatter /= double(neighbors.size());

    const PlaneFit fit = fit_from_scatter(scatter);
    NormalEstimate& est = field.estimates[i];
    est.curvature = fit.curvature;
    // Rank < 2 neighborhoods (nearly collinear) have no usable normal.
    est.degenerate = fit.mid_eigenvalue < 1e-12 * std::max(scatter.trace(), 1e-300);
    est.n = fit.normal;
    orient_normal(est.n);
  }
  return field;
}

namespace {

// Union-find over region ids.
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

struct RegionFit {
  std::vector<int> members;
  Vec3 centroid = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();

  void refit(const EventCluster& cluster) {
    Vec3 mean = Vec3::Zero();
    for (int idx : members) mean += cluster.point(idx);
    mean /= double(members.size());
    Mat3 scatter = Mat3::Zero();
    for (int idx : members) {
      const Vec3 d = cluster.point(idx) - mean;
      scatter += d * d.transpose();
    }
    centroid = mean;
    normal = fit_from_scatter(scatter / double(members.size())).normal;
  }
};

PlaneSegment make_segment(const EventCluster& cluster, std::vector<int> members) {
  PlaneSegment seg;
  seg.member_events = std::move(members);
  RegionFit fit;
  fit.members = seg.member_events;
  fit.refit(cluster);
  seg.centroid = fit.centroid;
  seg.normal = fit.normal;
  orient_normal(seg.normal);

  // In-plane x axis from the member farthest from the centroid.
  Vec3 best = Vec3::Zero();
  double best_norm = -1;
  for (int idx : seg.member_events) {
    Vec3 d = cluster.point(idx) - seg.centroid;
    d -= d.dot(seg.normal) * seg.normal;
    if (d.squaredNorm() > best_norm) {
      best_norm = d.squaredNorm();
      best = d;
    }
  }
  if (best_norm <= 0) throw DegenerateGeometryError("segment has no in-plane extent");
  seg.v_x = best.normalized();
  seg.v_y = seg.v_x.cross(seg.normal);
  return seg;
}

// Slice lines agree (as infinite lines) within the given gates, and their
// extents overlap or nearly touch; collinear but disjoint segments are
// different physical lines.
bool lines_agree(const Line2D& a, const Line2D& b, double angle_deg, double dist_px,
                 double max_gap_px = 20.0) {
  const double da =
      std::acos(std::clamp(std::abs(a.direction().dot(b.direction())), 0.0, 1.0)) * 180.0 / M_PI;
  if (da > angle_deg) return false;
  if (std::abs(a.signed_distance(b.midpoint())) >= dist_px ||
      std::abs(b.signed_distance(a.midpoint())) >= dist_px) {
    return false;
  }
  const Vec2 dir = a.direction();
  const double a_lo = std::min(a.p.dot(dir), a.q.dot(dir));
  const double a_hi = std::max(a.p.dot(dir), a.q.dot(dir));
  const double b_lo = std::min(b.p.dot(dir), b.q.dot(dir));
  const double b_hi = std::max(b.p.dot(dir), b.q.dot(dir));
  return std::max(a_lo - b_hi, b_lo - a_hi) < max_gap_px;
}

// Gates for stitching the pieces of one swept surface whose time-slice lines
// agree; pieces of a twisted wall stay within these even when their plane
// normals drift apart.
constexpr double kConsolidateAngleDeg = 4.0;
constexpr double kConsolidateDistPx = 4.0;

}  // namespace

std::vector<PlaneSegment> segment_planes(const EventCluster& cluster, const NormalField& normals,
                                         double angle_thresh_deg, double dist_thresh,
                                         int min_size) {
  const std::size_t n = cluster.size();
  if (normals.estimates.size() != n || normals.neighbors.size() != n) {
    throw InvalidInputError("segment_planes: normal field does not match the cluster");
  }

  // One smoothing pass over the neighbor graph stabilizes the per-event
  // normals before the smoothness test.
  std::vector<Vec3> smooth(n, Vec3::Zero());
  for (std::size_t i = 0; i < n; ++i) {
    if (normals.estimates[i].degenerate) continue;
    Vec3 acc = normals.estimates[i].n;
    for (int j : normals.neighbors[i]) {
      const NormalEstimate& e = normals.estimates[j];
      if (e.degenerate) continue;
      acc += e.n.dot(normals.estimates[i].n) < 0 ? Vec3(-e.n) : e.n;
    }
    smooth[i] = acc.normalized();
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return normals.estimates[a].curvature < normals.estimates[b].curvature;
  });

  // High-curvature events sit where surfaces cross; they may join a region
  // but do not propagate it, which keeps the growth from bridging two walls
  // through the smoothly blended normals of the crossing zone.
  double curvature_gate;
  {
    std::vector<double> curv;
    curv.reserve(n);
    for (const NormalEstimate& e : normals.estimates) {
      if (!e.degenerate) curv.push_back(e.curvature);
    }
    std::nth_element(curv.begin(), curv.begin() + curv.size() / 2, curv.end());
    curvature_gate = std::max(0.01, 1.5 * curv[curv.size() / 2]);
  }

  // Seeded growing with local gates: the neighbor's smoothed normal and the
  // plane through the point it is reached from. Local tests follow the
  // surface through the twist a rotating line sweeps out.
  const double cos_gate = std::cos(angle_thresh_deg * M_PI / 180.0);
  std::vector<int> assignment(n, -1);
  std::vector<std::vector<int>> grown;
  std::deque<int> queue;
  for (int seed : order) {
    if (assignment[seed] >= 0 || normals.estimates[seed].degenerate) continue;
    if (normals.estimates[seed].curvature > curvature_gate) continue;
    const int rid = int(grown.size());
    grown.emplace_back();
    grown.back().push_back(seed);
    assignment[seed] = rid;
    queue.assign(1, seed);
    while (!queue.empty()) {
      const int cur = queue.front();
      queue.pop_front();
      const Vec3& n_cur = smooth[cur];
      const Vec3 p_cur = cluster.point(cur);
      for (int nb : normals.neighbors[cur]) {
        if (assignment[nb] >= 0 || normals.estimates[nb].degenerate) continue;
        if (std::abs(smooth[nb].dot(n_cur)) < cos_gate) continue;
        if (std::abs((cluster.point(nb) - p_cur).dot(n_cur)) > dist_thresh) continue;
        assignment[nb] = rid;
        grown[rid].push_back(nb);
        if (normals.estimates[nb].curvature <= curvature_gate) queue.push_back(nb);
      }
    }
  }

  // Keep pieces large enough to fit reliably; they may be fractions of one
  // surface cut where lines cross.
  const int piece_min = std::max(8, min_size / 4);
  std::vector<RegionFit> pieces;
  for (auto& members : grown) {
    if (int(members.size()) < piece_min) continue;
    RegionFit fit;
    fit.members = std::move(members);
    fit.refit(cluster);
    pieces.push_back(std::move(fit));
  }
  if (pieces.empty()) {
    throw DegenerateGeometryError("segment_planes: no segment reached the minimum size");
  }

  // Co-planar merge.
  UnionFind uf(int(pieces.size()));
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      for (std::size_t j = i + 1; j < pieces.size(); ++j) {
        if (uf.find(int(i)) == uf.find(int(j))) continue;
        const RegionFit& a = pieces[i];
        const RegionFit& b = pieces[j];
        if (angle_between_deg(a.normal, b.normal) > angle_thresh_deg) continue;
        if (std::abs((b.centroid - a.centroid).dot(a.normal)) > dist_thresh) continue;
        if (std::abs((a.centroid - b.centroid).dot(b.normal)) > dist_thresh) continue;
        uf.unite(int(i), int(j));
        changed = true;
      }
    }
    if (changed) {
      // Rebuild merged pieces and restart until stable.
      std::vector<RegionFit> next;
      std::vector<int> root_of(pieces.size(), -1);
      for (std::size_t i = 0; i < pieces.size(); ++i) {
        const int root = uf.find(int(i));
        if (root_of[root] < 0) {
          root_of[root] = int(next.size());
          next.emplace_back();
        }
        auto& dst = next[root_of[root]].members;
        dst.insert(dst.end(), pieces[i].members.begin(), pieces[i].members.end());
      }
      for (auto& p : next) p.refit(cluster);
      pieces = std::move(next);
      uf = UnionFind(int(pieces.size()));
    }
  }

  // Consolidate pieces of one swept surface: a surface cut into pieces where
  // lines cross still produces the same boundary lines at the cluster's time
  // slices.
  struct SliceKey {
    Line2D start, end;
    bool valid = false;
  };
  std::vector<SliceKey> keys(pieces.size());
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    try {
      PlaneSegment seg = make_segment(cluster, pieces[i].members);
      const ProjectedSegment proj = project_segment(cluster, seg);
      const Vec2 time_dir(proj.v_x.z(), proj.v_y.z());
      const BoundaryLines boundary = detect_boundary_lines(proj.points, time_dir, 0.10, 1e-12);
      const DetectedLinePair pair = back_project_lines(proj, boundary, cluster);
      keys[i] = {pair.line_start, pair.line_end, true};
    } catch (const std::runtime_error&) {
      keys[i].valid = false;
    }
  }
  UnionFind uf2(int(pieces.size()));
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (!keys[i].valid) continue;
    for (std::size_t j = i + 1; j < pieces.size(); ++j) {
      if (!keys[j].valid) continue;
      if (lines_agree(keys[i].start, keys[j].start, kConsolidateAngleDeg, kConsolidateDistPx) &&
          lines_agree(keys[i].end, keys[j].end, kConsolidateAngleDeg, kConsolidateDistPx)) {
        uf2.unite(int(i), int(j));
      }
    }
  }
  std::vector<std::vector<int>> final_members;
  {
    std::vector<int> root_of(pieces.size(), -1);
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const int root = uf2.find(int(i));
      if (root_of[root] < 0) {
        root_of[root] = int(final_members.size());
        final_members.emplace_back();
      }
      auto& dst = final_members[root_of[root]];
      dst.insert(dst.end(), pieces[i].members.begin(), pieces[i].members.end());
    }
  }

  std::vector<PlaneSegment> segments;
  for (auto& members : final_members) {
    if (int(members.size()) < min_size) continue;
    std::sort(members.begin(), members.end());
    try {
      segments.push_back(make_segment(cluster, std::move(members)));
    } catch (const DegenerateGeometryError&) {
      continue;
    }
  }
  std::sort(segments.begin(), segments.end(), [](const PlaneSegment& a, const PlaneSegment& b) {
    return a.member_events.size() > b.member_events.size();
  });

  if (segments.empty()) {
    throw DegenerateGeometryError("segment_planes: no segment reached the minimum size");
  }
  return segments;
}

ProjectedSegment project_segment(const EventCluster& cluster, const PlaneSegment& segment) {
  ProjectedSegment out;
  out.origin = segment.centroid;
  out.v_x = segment.v_x;
  out.v_y = segment.v_y;
  out.normal = segment.normal;
  out.member_events = segment.member_events;
  out.points.reserve(segment.member_events.size());
  for (int idx : segment.member_events) out.points.push_back(out.project(cluster.point(idx)));
  return out;
}

namespace {

PlaneLine fit_band_line(const std::vector<Vec2>& points, const std::vector<int>& band) {
  Vec2 mean = Vec2::Zero();
  for (int i : band) mean += points[i];
  mean /= double(band.size());
  Mat2 scatter = Mat2::Zero();
  for (int i : band) {
    const Vec2 d = points[i] - mean;
    scatter += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat2> eig(scatter);
  PlaneLine line;
  line.point = mean;
  line.dir = eig.eigenvectors().col(1);  // largest eigenvalue
  line.s_min = std::numeric_limits<double>::max();
  line.s_max = std::numeric_limits<double>::lowest();
  for (int i : band) {
    const double s = (points[i] - mean).dot(line.dir);
    line.s_min = std::min(line.s_min, s);
    line.s_max = std::max(line.s_max, s);
  }
  return line;
}

}  // namespace

BoundaryLines detect_boundary_lines(const std::vector<Vec2>& points, const Vec2& time_dir,
                                    double band_fraction, double min_temporal_extent) {
  if (points.size() < 4) throw InvalidInputError("detect_boundary_lines: too few points");
  const double g_norm = time_dir.norm();
  if (g_norm < 1e-12) {
    throw DegenerateGeometryError("detect_boundary_lines: insufficient motion (no time direction)");
  }
  const Vec2 g = time_dir / g_norm;

  double tau_min = std::numeric_limits<double>::max();
  double tau_max = std::numeric_limits<double>::lowest();
  for (const Vec2& p : points) {
    const double tau = p.dot(g);
    tau_min = std::min(tau_min, tau);
    tau_max = std::max(tau_max, tau);
  }
  BoundaryLines out;
  out.temporal_extent = tau_max - tau_min;
  if (out.temporal_extent < min_temporal_extent) {
    throw DegenerateGeometryError("detect_boundary_lines: insufficient motion (temporal extent " +
                                  std::to_string(out.temporal_extent) + ")");
  }

  const double band = band_fraction * out.temporal_extent;
  std::vector<int> low, high;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double tau = points[i].dot(g);
    if (tau <= tau_min + band) low.push_back(int(i));
    if (tau >= tau_max - band) high.push_back(int(i));
  }
  if (low.size() < 2 || high.size() < 2) {
    throw DegenerateGeometryError("detect_boundary_lines: boundary band too sparse");
  }
  out.low = fit_band_line(points, low);
  out.high = fit_band_line(points, high);
  out.low_members = std::move(low);
  out.high_members = std::move(high);
  return out;
}

DetectedLinePair back_project_lines(const ProjectedSegment& frame, const BoundaryLines& boundary,
                                    const EventCluster& cluster, int segment_index) {
  // Plane nearly parallel to the time slices: no image-plane line exists.
  if (frame.v_x.z() * frame.v_x.z() + frame.v_y.z() * frame.v_y.z() < 1e-18) {
    throw DegenerateGeometryError(
        "back_project_lines: static edge (plane parallel to the time slices)");
  }

  // Refit each boundary in the spatial domain. The in-plane projection used
  // for band selection flattens the surface onto its mean plane, which wipes
  // out the slice-to-slice rotation; the 3D fit of the band events keeps it.
  auto slice_line = [&](const std::vector<int>& band, double t_slice) {
    Vec3 mean = Vec3::Zero();
    for (int i : band) mean += cluster.point(frame.member_events[i]);
    mean /= double(band.size());
    Mat3 scatter = Mat3::Zero();
    for (int i : band) {
      const Vec3 d = cluster.point(frame.member_events[i]) - mean;
      scatter += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter / double(band.size()));
    const Vec3 dir3 = eig.eigenvectors().col(2);     // band line direction
    const Vec3 n_band = eig.eigenvectors().col(0);   // local surface normal

    // Transport the anchor to the exact slice time along the local in-plane
    // time flow.
    Vec3 flow = Vec3::UnitZ() - Vec3::UnitZ().dot(n_band) * n_band;
    if (std::abs(flow.z()) < 1e-9) {
      throw DegenerateGeometryError("back_project_lines: static edge (band has no time flow)");
    }
    const double z0 = t_slice / cluster.c_z;
    const Vec3 anchor = mean + ((z0 - mean.z()) / flow.z()) * flow;

    const Vec2 dir_xy(dir3.x(), dir3.y());
    if (dir_xy.norm() < 1e-12) {
      throw DegenerateGeometryError("back_project_lines: boundary line has no image direction");
    }
    double s_min = std::numeric_limits<double>::max();
    double s_max = std::numeric_limits<double>::lowest();
    for (int i : band) {
      const double s = (cluster.point(frame.member_events[i]) - mean).dot(dir3);
      s_min = std::min(s_min, s);
      s_max = std::max(s_max, s);
    }
    const Vec2 a(anchor.x(), anchor.y());
    return Line2D::through(a + s_min * dir_xy, a + s_max * dir_xy, t_slice);
  };

  DetectedLinePair pair;
  pair.segment_index = segment_index;
  pair.line_start = slice_line(boundary.low_members, cluster.t_start);
  pair.line_end = slice_line(boundary.high_members, cluster.t_end);
  return pair;
}

DetectionResult detect_lines(const EventCluster& cluster, const DetectParams& params) {
  if (cluster.empty()) throw InvalidInputError("detect_lines: empty cluster");

  DetectionResult result;
  result.denoised = denoise(cluster, params.k_neighbors, params.denoise_std_ratio);
  if (result.denoised.size() < std::size_t(params.k_neighbors + 1)) {
    throw InvalidInputError("detect_lines: too few events after denoising");
  }

  const NormalField normals = estimate_normals(result.denoised, params.k_neighbors);
  result.segments = segment_planes(result.denoised, normals, params.angle_thresh_deg,
                                   params.dist_thresh, params.min_segment_size);

  for (std::size_t s = 0; s < result.segments.size(); ++s) {
    try {
      const ProjectedSegment proj = project_segment(result.denoised, result.segments[s]);
      const Vec2 time_dir(proj.v_x.z(), proj.v_y.z());
      const BoundaryLines boundary = detect_boundary_lines(
          proj.points, time_dir, params.boundary_band_fraction, params.min_temporal_extent);
      DetectedLinePair pair = back_project_lines(proj, boundary, result.denoised, int(s));

      const double da = std::acos(std::clamp(
          std::abs(pair.line_start.direction().dot(pair.line_end.direction())), 0.0, 1.0));
      if (da * 180.0 / M_PI > params.pairing_max_angle_deg) {
        throw DegenerateGeometryError("detect_lines: start/end lines are not near-parallel");
      }
      result.pairs.push_back(std::move(pair));
    } catch (const std::runtime_error& err) {
      result.diagnostics.push_back({int(s), err.what()});
    }
  }
  return result;
}

}  // namespace evcal
