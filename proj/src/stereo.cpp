#include "evcal/stereo.hpp"

#include <cmath>

#include "evcal/rotation.hpp"

namespace evcal {

std::pair<Mat3, Vec3> relative_pose(std::span<const Pose> left, std::span<const Pose> right) {
  if (left.empty() || left.size() != right.size()) {
    throw InvalidInputError("relative_pose: pose sequences must be non-empty and equal length");
  }
  Mat3 R_sum = Mat3::Zero();
  Vec3 T_sum = Vec3::Zero();
  for (std::size_t i = 0; i < left.size(); ++i) {
    const Mat3 R_rel = left[i].R * right[i].R.transpose();
    R_sum += R_rel;
    T_sum += left[i].T - R_rel * right[i].T;
  }
  const Mat3 R = nearest_rotation(R_sum);  // chordal mean
  return {R, T_sum / double(left.size())};
}

Vec3 rodrigues_degrees(const Mat3& R) { return so3_log(R) * 180.0 / M_PI; }

Mat3 rodrigues_degrees_inverse(const Vec3& angles_deg) {
  return so3_exp(angles_deg * M_PI / 180.0);
}

StereoResult stereo_calibrate(const CalibrationResult& left, const CalibrationResult& right) {
  StereoResult out;
  out.left = left;
  out.right = right;
  auto [R, T] = relative_pose(left.poses, right.poses);
  out.R_r2l = R;
  out.T_r2l_cm = 100.0 * T;  // model units are meters
  out.rotation_angles_deg = rodrigues_degrees(R);
  return out;
}

}  // namespace evcal
