#include "evcal/camera.hpp"

#include <Eigen/LU>
#include <cmath>

namespace evcal {

Line2D Line2D::through(const Vec2& p, const Vec2& q, double timestamp) {
  const Vec2 dir = q - p;
  const double len = dir.norm();
  if (len <= 0 || !std::isfinite(len)) {
    throw InvalidInputError("Line2D::through: coincident endpoints");
  }
  Line2D l;
  l.a = dir.y() / len;
  l.b = -dir.x() / len;
  l.c = -(l.a * p.x() + l.b * p.y());
  l.p = p;
  l.q = q;
  l.timestamp = timestamp;
  return l;
}

ProjectionMatrix ProjectionMatrix::compose(const Intrinsics& K, const Pose& pose) {
  ProjectionMatrix P;
  Mat34 Rt;
  Rt.leftCols<3>() = pose.R;
  Rt.col(3) = pose.T;
  P.M = K.matrix() * Rt;
  return P;
}

Mat3 ProjectionMatrix::planar() const {
  Mat3 H;
  H.col(0) = M.col(0);
  H.col(1) = M.col(1);
  H.col(2) = M.col(3);
  return H;
}

namespace {
constexpr double kMinDepth = 1e-12;
}

Vec2 project_point(const Vec3& P, const Intrinsics& K, const Pose& pose) {
  const Vec3 pc = pose.apply(P);
  if (pc.z() <= kMinDepth) {
    throw DegenerateGeometryError("project_point: point behind camera (z = " +
                                  std::to_string(pc.z()) + ")");
  }
  return K.to_pixel({pc.x() / pc.z(), pc.y() / pc.z()});
}

Vec2 project_point(const Vec3& P, const Intrinsics& K, const Distortion& d, const Pose& pose) {
  const Vec3 pc = pose.apply(P);
  if (pc.z() <= kMinDepth) {
    throw DegenerateGeometryError("project_point: point behind camera (z = " +
                                  std::to_string(pc.z()) + ")");
  }
  const Vec2 pu(pc.x() / pc.z(), pc.y() / pc.z());
  return K.to_pixel(distort(pu, d));
}

Vec2 distort(const Vec2& p_u, const Distortion& d) {
  const double x = p_u.x();
  const double y = p_u.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k5));
  return {radial * x + 2.0 * d.k3 * x * y + d.k4 * (r2 + 2.0 * x * x),
          radial * y + 2.0 * d.k4 * x * y + d.k3 * (r2 + 2.0 * y * y)};
}

Mat2 distort_jacobian(const Vec2& p_u, const Distortion& d) {
  const double x = p_u.x();
  const double y = p_u.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k5));
  const double dradial = d.k1 + r2 * (2.0 * d.k2 + 3.0 * r2 * d.k5);  // d(radial)/d(r2)
  Mat2 J;
  J(0, 0) = radial + 2.0 * x * x * dradial + 2.0 * d.k3 * y + 6.0 * d.k4 * x;
  J(0, 1) = 2.0 * x * y * dradial + 2.0 * d.k3 * x + 2.0 * d.k4 * y;
  J(1, 0) = 2.0 * x * y * dradial + 2.0 * d.k4 * y + 2.0 * d.k3 * x;
  J(1, 1) = radial + 2.0 * y * y * dradial + 2.0 * d.k4 * x + 6.0 * d.k3 * y;
  return J;
}

Vec2 undistort(const Vec2& p_d, const Distortion& d, int max_iterations, double tol) {
  if (d.is_zero()) return p_d;
  Vec2 p = p_d;  // start at the distorted point
  for (int it = 0; it < max_iterations; ++it) {
    const Vec2 f = distort(p, d) - p_d;
    if (f.cwiseAbs().maxCoeff() < tol) return p;
    const Mat2 J = distort_jacobian(p, d);
    const double det = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
    if (std::abs(det) < 1e-15) break;
    p -= J.inverse() * f;
  }
  if ((distort(p, d) - p_d).cwiseAbs().maxCoeff() < tol) return p;
  throw NonConvergenceError("undistort: Newton iteration did not converge");
}

Line2D project_line3d(const Line3D& L, const Intrinsics& K, const Distortion& d, const Pose& pose,
                      double timestamp) {
  const Vec2 p = project_point(L.P, K, d, pose);
  const Vec2 q = project_point(L.Q, K, d, pose);
  return Line2D::through(p, q, timestamp);
}

}  // namespace evcal
