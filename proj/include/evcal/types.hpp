#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace evcal {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

// Exit-code mapping for the CLI: 2 / 3 / 4 respectively.
struct InvalidInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateGeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A single camera event. Timestamps are seconds; polarity 1 = ON, 0 = OFF.
struct Event {
  double x = 0;
  double y = 0;
  double t = 0;
  std::int8_t polarity = 1;
};

// Events gathered over a short window, viewed as a point cloud in
// (x, y, t / c_z). c_z is in seconds per spatial unit.
struct EventCluster {
  std::vector<Event> events;
  double t_start = 0;
  double t_end = 0;
  double c_z = 1.0;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }

  Vec3 point(std::size_t i) const {
    const Event& e = events[i];
    return {e.x, e.y, e.t / c_z};
  }
};

// Picks c_z so the temporal extent maps to roughly the image diagonal.
inline double default_c_z(double t_start, double t_end, double image_diagonal = 800.0) {
  const double extent = t_end - t_start;
  if (extent <= 0 || image_diagonal <= 0) return 1.0;
  return extent / image_diagonal;
}

// Implicit image line a*x + b*y + c = 0 with a^2 + b^2 = 1, plus the two
// endpoints it was built from and the time slice it belongs to.
struct Line2D {
  double a = 0, b = 0, c = 0;
  Vec2 p = Vec2::Zero();
  Vec2 q = Vec2::Zero();
  double timestamp = 0;

  static Line2D through(const Vec2& p, const Vec2& q, double timestamp = 0);

  double signed_distance(const Vec2& pt) const { return a * pt.x() + b * pt.y() + c; }
  Vec2 direction() const { return Vec2(b, -a); }
  Vec2 midpoint() const { return 0.5 * (p + q); }
  Vec3 homogeneous() const { return {a, b, c}; }
};

// World line segment, meters.
struct Line3D {
  Vec3 P = Vec3::Zero();
  Vec3 Q = Vec3::Zero();
  int id = -1;

  Vec3 direction() const { return (Q - P).normalized(); }
  double length() const { return (Q - P).norm(); }
};

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;

  Mat3 matrix() const {
    Mat3 K;
    K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return K;
  }
  // pixel <-> normalized image coordinates
  Vec2 to_normalized(const Vec2& px) const { return {(px.x() - cx) / fx, (px.y() - cy) / fy}; }
  Vec2 to_pixel(const Vec2& n) const { return {fx * n.x() + cx, fy * n.y() + cy}; }
};

// Brown model coefficients: k1, k2, k5 radial; k3, k4 tangential.
struct Distortion {
  double k1 = 0, k2 = 0, k3 = 0, k4 = 0, k5 = 0;

  bool is_zero() const { return k1 == 0 && k2 == 0 && k3 == 0 && k4 == 0 && k5 == 0; }
};

// Camera pose: x_cam = R * x_world + T.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 T = Vec3::Zero();

  bool has_valid_rotation(double tol = 1e-9) const;
  Vec3 apply(const Vec3& P) const { return R * P + T; }
  Pose inverse() const { return {R.transpose(), -(R.transpose() * T)}; }
};

// Scale-ambiguous central projection, M = K [R | T]; 3x3 planar form drops
// the z column.
struct ProjectionMatrix {
  Mat34 M = Mat34::Zero();

  static ProjectionMatrix compose(const Intrinsics& K, const Pose& pose);
  Mat3 planar() const;  // columns 1, 2, 4
};

}  // namespace evcal
