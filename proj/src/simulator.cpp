#include "evcal/simulator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "evcal/camera.hpp"
#include "evcal/rotation.hpp"

namespace evcal {

Pose slice_pose(const Pose& pose, const MotionSpec& motion, double t) {
  Pose out;
  out.R = pose.R * so3_exp(motion.omega * t);
  out.T = pose.T + pose.R * (motion.nu * t);
  return out;
}

GeneratedCluster generate_cluster(const SceneSpec& scene, const MotionSpec& motion,
                                  double noise_sigma, double c_z, std::uint64_t seed) {
  if (scene.lines.empty()) throw InvalidInputError("generate_cluster: scene has no lines");
  if (motion.duration <= 0) throw InvalidInputError("generate_cluster: duration must be positive");
  if (motion.time_steps < 1 || motion.events_per_step < 1) {
    throw InvalidInputError("generate_cluster: need at least one step and one event per step");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  GeneratedCluster out;
  out.cluster.t_start = 0;
  out.cluster.t_end = motion.duration;
  out.cluster.c_z = c_z > 0 ? c_z : default_c_z(0, motion.duration,
                                                std::hypot(scene.image_size[0], scene.image_size[1]));
  out.pose_start = slice_pose(scene.pose_true, motion, 0);
  out.pose_end = slice_pose(scene.pose_true, motion, motion.duration);

  const double w = scene.image_size[0];
  const double h = scene.image_size[1];

  // Timestamps are stratified: events_per_step per line drawn uniformly
  // within each step interval, so they cover the duration uniformly without
  // discretization artifacts. Positions are uniform in IMAGE arc length (an
  // edge triggers events per pixel it crosses), via a small inverse-CDF
  // table per line and step.
  const double step_len = motion.duration / double(motion.time_steps);
  constexpr int kArcKnots = 17;
  std::array<double, kArcKnots> arc;
  for (int step = 0; step < motion.time_steps; ++step) {
    const double t_mid = step_len * (double(step) + 0.5);
    const Mat3 R_mid = so3_exp(motion.omega * t_mid);
    const Vec3 T_mid = motion.nu * t_mid;
    for (std::size_t li = 0; li < scene.lines.size(); ++li) {
      const Vec3 P_mid = R_mid * scene.lines[li].P + T_mid;
      const Vec3 Q_mid = R_mid * scene.lines[li].Q + T_mid;
      arc[0] = 0;
      Vec2 prev;
      bool table_ok = true;
      for (int kn = 0; kn < kArcKnots; ++kn) {
        const double s = double(kn) / (kArcKnots - 1);
        Vec2 px;
        try {
          px = project_point(P_mid + s * (Q_mid - P_mid), scene.K_true, scene.d_true,
                             scene.pose_true);
        } catch (const DegenerateGeometryError&) {
          table_ok = false;
          break;
        }
        if (kn > 0) arc[kn] = arc[kn - 1] + (px - prev).norm();
        prev = px;
      }
      if (!table_ok || arc[kArcKnots - 1] <= 0) continue;

      for (int e = 0; e < motion.events_per_step; ++e) {
        const double t = step_len * (double(step) + u01(rng));
        // Inverse CDF of image arc length -> position parameter.
        const double target = u01(rng) * arc[kArcKnots - 1];
        int hi = 1;
        while (hi < kArcKnots - 1 && arc[hi] < target) ++hi;
        const double frac = (target - arc[hi - 1]) / std::max(arc[hi] - arc[hi - 1], 1e-30);
        const double s = (double(hi - 1) + frac) / (kArcKnots - 1);

        const Mat3 Rm = so3_exp(motion.omega * t);
        const Vec3 Tm = motion.nu * t;
        const Vec3 P = Rm * scene.lines[li].P + Tm;
        const Vec3 Q = Rm * scene.lines[li].Q + Tm;
        const Vec3 X = P + s * (Q - P);
        Vec2 px;
        try {
          px = project_point(X, scene.K_true, scene.d_true, scene.pose_true);
        } catch (const DegenerateGeometryError&) {
          continue;
        }
        px.x() += noise_sigma * gauss(rng);
        px.y() += noise_sigma * gauss(rng);
        if (px.x() < 0 || px.x() >= w || px.y() < 0 || px.y() >= h) continue;
        out.cluster.events.push_back({px.x(), px.y(), t, std::int8_t(u01(rng) < 0.5 ? 0 : 1)});
        out.labels.push_back(int(li));
      }
    }
  }
  if (out.cluster.empty()) {
    throw DegenerateGeometryError("generate_cluster: all events fell outside the frame");
  }

  // order by timestamp, labels alongside
  std::vector<int> order(out.cluster.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return out.cluster.events[a].t < out.cluster.events[b].t;
  });
  std::vector<Event> sorted_events(out.cluster.size());
  std::vector<int> sorted_labels(out.cluster.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    sorted_events[i] = out.cluster.events[order[i]];
    sorted_labels[i] = out.labels[order[i]];
  }
  out.cluster.events = std::move(sorted_events);
  out.labels = std::move(sorted_labels);

  for (const Line3D& L : scene.lines) {
    const Line2D start = project_line3d(L, scene.K_true, scene.d_true, out.pose_start, 0);
    const Line2D end =
        project_line3d(L, scene.K_true, scene.d_true, out.pose_end, motion.duration);
    out.truth_lines.emplace_back(start, end);
  }
  return out;
}

namespace {

// World-to-camera rotation looking from C at the origin, with roll applied
// about the optical axis.
Mat3 look_at_origin(const Vec3& C, double roll) {
  const Vec3 z = (-C).normalized();
  Vec3 up = std::abs(z.dot(Vec3::UnitY())) > 0.95 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 x = up.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.row(0) = x.transpose();
  R.row(1) = y.transpose();
  R.row(2) = z.transpose();
  return so3_exp(Vec3(0, 0, roll)) * R;
}

}  // namespace

SceneSpec sample_scene(const SceneSampleOptions& o, std::mt19937_64& rng) {
  if (o.n_lines < 1) throw InvalidInputError("sample_scene: n_lines must be positive");
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  SceneSpec scene;
  scene.image_size = o.image_size;
  scene.K_true = {o.focal, o.focal, o.image_size[0] / 2.0, o.image_size[1] / 2.0};
  scene.d_true = o.distortion;
  scene.planar = o.planar;

  // Pose: camera on a cone about the target normal (+z), looking at the
  // origin with random roll.
  const double dist = o.distance_min + (o.distance_max - o.distance_min) * u01(rng);
  const double cos_max = std::cos(o.cone_half_angle_deg * M_PI / 180.0);
  const double cos_theta = cos_max + (1.0 - cos_max) * u01(rng);
  const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
  const double phi = 2.0 * M_PI * u01(rng);
  const Vec3 C = dist * Vec3(sin_theta * std::cos(phi), sin_theta * std::sin(phi), cos_theta);
  scene.pose_true.R = look_at_origin(C, 2.0 * M_PI * u01(rng));
  scene.pose_true.T = -scene.pose_true.R * C;

  const Mat3 R_cw = scene.pose_true.R.transpose();
  const Mat3 K_inv = scene.K_true.matrix().inverse();

  auto cast_to_world = [&](const Vec2& px, double depth) -> Vec3 {
    const Vec3 ray_cam = K_inv * px.homogeneous();
    if (o.planar) {
      // Intersect the camera ray with the world plane z = 0.
      const Vec3 dir = R_cw * ray_cam;
      if (std::abs(dir.z()) < 1e-9) throw DegenerateGeometryError("ray parallel to plane");
      const double s = -C.z() / dir.z();
      if (s <= 0) throw DegenerateGeometryError("plane behind camera");
      Vec3 X = C + s * dir;
      X.z() = 0;
      return X;
    }
    const Vec3 X_cam = depth * ray_cam;
    return R_cw * (X_cam - scene.pose_true.T);
  };

  std::uniform_real_distribution<double> ux(o.margin_px, o.image_size[0] - o.margin_px);
  std::uniform_real_distribution<double> uy(o.margin_px, o.image_size[1] - o.margin_px);
  std::uniform_real_distribution<double> ud(1.0 - o.depth_spread, 1.0 + o.depth_spread);

  int attempts = 0;
  while (int(scene.lines.size()) < o.n_lines) {
    if (++attempts > 500 * o.n_lines) {
      throw DegenerateGeometryError("sample_scene: could not place the requested lines");
    }
    const Vec2 p(ux(rng), uy(rng));
    const Vec2 q(ux(rng), uy(rng));
    if ((p - q).norm() < o.min_line_length_px) continue;

    if (o.min_pairwise_angle_deg > 0 || o.min_midpoint_dist_px > 0) {
      const double ang = std::atan2(q.y() - p.y(), q.x() - p.x());
      const Vec2 mid = 0.5 * (p + q);
      bool ok = true;
      for (const Line3D& L : scene.lines) {
        const Vec2 lp = project_point(L.P, scene.K_true, scene.pose_true);
        const Vec2 lq = project_point(L.Q, scene.K_true, scene.pose_true);
        double da = std::abs(ang - std::atan2(lq.y() - lp.y(), lq.x() - lp.x()));
        da = std::fmod(da, M_PI);
        da = std::min(da, M_PI - da) * 180.0 / M_PI;
        const double dm = (mid - 0.5 * (lp + lq)).norm();
        if (da < o.min_pairwise_angle_deg && dm < o.min_midpoint_dist_px) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
    }

    try {
      Line3D L;
      L.P = cast_to_world(p, dist * ud(rng));
      L.Q = cast_to_world(q, dist * ud(rng));
      L.id = int(scene.lines.size());
      scene.lines.push_back(L);
    } catch (const DegenerateGeometryError&) {
      continue;
    }
  }
  return scene;
}

std::vector<LineCorrespondence> perfect_observations(const SceneSpec& scene, double noise_sigma,
                                                     std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<LineCorrespondence> out;
  out.reserve(scene.lines.size());
  for (const Line3D& L : scene.lines) {
    Vec2 p = project_point(L.P, scene.K_true, scene.d_true, scene.pose_true);
    Vec2 q = project_point(L.Q, scene.K_true, scene.d_true, scene.pose_true);
    p += noise_sigma * Vec2(gauss(rng), gauss(rng));
    q += noise_sigma * Vec2(gauss(rng), gauss(rng));
    out.push_back({Line2D::through(p, q, 0), L, 1.0});
  }
  return out;
}

double rotation_error_deg(const Mat3& estimated, const Mat3& truth) {
  double worst = 0;
  for (int g = 0; g < 3; ++g) {
    const double d = std::clamp(truth.col(g).dot(estimated.col(g)), -1.0, 1.0);
    worst = std::max(worst, std::acos(d) * 180.0 / M_PI);
  }
  return worst;
}

ErrorMetrics error_metrics(const CalibrationResult& est, const Intrinsics& K_true,
                           const Distortion& d_true, std::span<const Pose> truth_poses) {
  ErrorMetrics m;
  const auto rel = [](double v, double t) { return 100.0 * std::abs(v - t) / std::abs(t); };
  m.err_fx = rel(est.intrinsics.fx, K_true.fx);
  m.err_fy = rel(est.intrinsics.fy, K_true.fy);
  m.err_cx = rel(est.intrinsics.cx, K_true.cx);
  m.err_cy = rel(est.intrinsics.cy, K_true.cy);
  m.err_k1 = std::abs(est.distortion.k1 - d_true.k1) * 1e3;
  m.err_k2 = std::abs(est.distortion.k2 - d_true.k2) * 1e3;
  const std::size_t n = std::min(est.poses.size(), truth_poses.size());
  for (std::size_t i = 0; i < n; ++i) {
    m.err_R = std::max(m.err_R, rotation_error_deg(est.poses[i].R, truth_poses[i].R));
    const double t_norm = truth_poses[i].T.norm();
    if (t_norm > 0) {
      m.err_T = std::max(m.err_T, 100.0 * (est.poses[i].T - truth_poses[i].T).norm() / t_norm);
    }
  }
  return m;
}

ErrorMetrics error_metrics(const CalibrationResult& est, const SceneSpec& truth) {
  const Pose poses[1] = {truth.pose_true};
  return error_metrics(est, truth.K_true, truth.d_true, poses);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double idx = p / 100.0 * double(values.size() - 1);
  const std::size_t lo = std::size_t(std::floor(idx));
  const std::size_t hi = std::min(values.size() - 1, lo + 1);
  const double frac = idx - double(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace evcal
