#pragma once

#include "evcal/types.hpp"

namespace evcal {

// Pinhole projection, scale eliminated by dehomogenization. Throws
// DegenerateGeometryError if the point is not in front of the camera.
Vec2 project_point(const Vec3& P, const Intrinsics& K, const Pose& pose);

// Pinhole projection followed by Brown distortion of the normalized
// coordinates.
Vec2 project_point(const Vec3& P, const Intrinsics& K, const Distortion& d, const Pose& pose);

// Brown model on normalized coordinates:
//   x_d = (1 + k1 d^2 + k2 d^4 + k5 d^6) x_u + 2 k3 x_u y_u + k4 (d^2 + 2 x_u^2)
//   y_d = (1 + k1 d^2 + k2 d^4 + k5 d^6) y_u + 2 k4 x_u y_u + k3 (d^2 + 2 y_u^2)
// with d^2 = x_u^2 + y_u^2.
Vec2 distort(const Vec2& p_u, const Distortion& d);

// Jacobian of distort() with respect to (x_u, y_u).
Mat2 distort_jacobian(const Vec2& p_u, const Distortion& d);

// Numerical inverse of distort() by Newton iteration. Throws
// NonConvergenceError if the residual does not fall below tol.
Vec2 undistort(const Vec2& p_d, const Distortion& d, int max_iterations = 50, double tol = 1e-12);

// Projects and distorts both endpoints; the returned coefficients fit the
// chord through the two distorted endpoints.
Line2D project_line3d(const Line3D& L, const Intrinsics& K, const Distortion& d, const Pose& pose,
                      double timestamp = 0);

}  // namespace evcal
