#pragma once

#include "evcal/types.hpp"

namespace evcal {

Mat3 skew(const Vec3& v);

// Exponential / logarithm maps between so(3) vectors (radians) and rotation
// matrices. Stable near the identity and near pi.
Mat3 so3_exp(const Vec3& w);
Vec3 so3_log(const Mat3& R);

// Closest rotation matrix in Frobenius norm, det = +1.
Mat3 nearest_rotation(const Mat3& A);

bool is_rotation(const Mat3& R, double tol = 1e-9);

}  // namespace evcal
