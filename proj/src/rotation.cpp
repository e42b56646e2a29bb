#include "evcal/rotation.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <cmath>

namespace evcal {

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return S;
}

Mat3 so3_exp(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  if (theta2 < 1e-24) {
    return Mat3::Identity() + skew(w);
  }
  const double theta = std::sqrt(theta2);
  const Mat3 K = skew(w / theta);
  return Mat3::Identity() + std::sin(theta) * K + (1.0 - std::cos(theta)) * (K * K);
}

Vec3 so3_log(const Mat3& R) {
  Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

Mat3 nearest_rotation(const Mat3& A) {
  Eigen::JacobiSVD<Mat3> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0) {
    Mat3 D = Mat3::Identity();
    D(2, 2) = -1;
    R = svd.matrixU() * D * svd.matrixV().transpose();
  }
  return R;
}

bool is_rotation(const Mat3& R, double tol) {
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(R.determinant() - 1.0) < tol;
}

bool Pose::has_valid_rotation(double tol) const { return is_rotation(R, tol); }

}  // namespace evcal
