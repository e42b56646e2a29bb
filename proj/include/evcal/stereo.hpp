#pragma once

#include <span>

#include "evcal/linear_calib.hpp"
#include "evcal/types.hpp"

namespace evcal {

// Relative pose of a calibrated stereo pair, right camera expressed in the
// left camera's frame.
struct StereoResult {
  CalibrationResult left, right;
  Mat3 R_r2l = Mat3::Identity();
  Vec3 T_r2l_cm = Vec3::Zero();
  Vec3 rotation_angles_deg = Vec3::Zero();  // axis-angle of R_r2l, degrees
};

// R_r2l = R_l R_r^T, T_r2l = T_l - R_r2l T_r per time slice; slices are
// averaged on the rotation manifold (chordal mean) with the translation mean.
// Both pose sequences must view the same target at the same slices.
std::pair<Mat3, Vec3> relative_pose(std::span<const Pose> left, std::span<const Pose> right);

// Axis-angle 3-vector in degrees, angle in [0, 180], and its inverse.
Vec3 rodrigues_degrees(const Mat3& R);
Mat3 rodrigues_degrees_inverse(const Vec3& angles_deg);

StereoResult stereo_calibrate(const CalibrationResult& left, const CalibrationResult& right);

}  // namespace evcal
