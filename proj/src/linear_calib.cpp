#include "evcal/linear_calib.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "evcal/camera.hpp"
#include "evcal/rotation.hpp"

namespace evcal {

namespace {

Mat3 similarity2(double scale, const Vec2& centroid) {
  Mat3 T = Mat3::Identity();
  T(0, 0) = T(1, 1) = scale;
  T(0, 2) = -scale * centroid.x();
  T(1, 2) = -scale * centroid.y();
  return T;
}

}  // namespace

PrenormalizedData prenormalize(std::span<const LineCorrespondence> correspondences) {
  if (correspondences.size() < 2) {
    throw InvalidInputError("prenormalize: need at least two correspondences");
  }

  Vec2 c2 = Vec2::Zero();
  Vec3 c3 = Vec3::Zero();
  for (const auto& corr : correspondences) {
    c2 += corr.line2d.p + corr.line2d.q;
    c3 += corr.line3d.P + corr.line3d.Q;
  }
  const double n_pts = 2.0 * double(correspondences.size());
  c2 /= n_pts;
  c3 /= n_pts;

  double mean2 = 0, mean3 = 0;
  for (const auto& corr : correspondences) {
    mean2 += (corr.line2d.p - c2).norm() + (corr.line2d.q - c2).norm();
    mean3 += (corr.line3d.P - c3).norm() + (corr.line3d.Q - c3).norm();
  }
  mean2 /= n_pts;
  mean3 /= n_pts;
  if (mean2 < 1e-12 || mean3 < 1e-12) {
    throw DegenerateGeometryError("prenormalize: endpoints are coincident");
  }

  PrenormalizedData out;
  const double s2 = std::sqrt(2.0) / mean2;
  const double s3 = std::sqrt(3.0) / mean3;
  out.transform.T2 = similarity2(s2, c2);
  out.transform.T3 = Mat4::Identity();
  out.transform.T3.topLeftCorner<3, 3>() *= s3;
  out.transform.T3.topRightCorner<3, 1>() = -s3 * c3;

  out.correspondences.reserve(correspondences.size());
  for (const auto& corr : correspondences) {
    LineCorrespondence t = corr;
    const Vec2 p = s2 * (corr.line2d.p - c2);
    const Vec2 q = s2 * (corr.line2d.q - c2);
    t.line2d = Line2D::through(p, q, corr.line2d.timestamp);
    t.line3d.P = s3 * (corr.line3d.P - c3);
    t.line3d.Q = s3 * (corr.line3d.Q - c3);
    out.correspondences.push_back(std::move(t));
  }
  return out;
}

MatX build_measurement_matrix(std::span<const LineCorrespondence> correspondences, bool planar) {
  const int cols = planar ? 9 : 12;
  MatX A(2 * correspondences.size(), cols);

  double scale = 0;
  for (const auto& corr : correspondences) {
    scale = std::max({scale, corr.line3d.P.cwiseAbs().maxCoeff(),
                      corr.line3d.Q.cwiseAbs().maxCoeff()});
  }
  const double z_tol = std::max(1e-9, 1e-9 * scale);

  int row = 0;
  for (const auto& corr : correspondences) {
    const Vec3 l = corr.line2d.homogeneous();
    for (const Vec3* X : {&corr.line3d.P, &corr.line3d.Q}) {
      if (planar && std::abs(X->z()) > z_tol) {
        throw InvalidInputError("build_measurement_matrix: planar flag but endpoint off z=0");
      }
      VecX h(planar ? 3 : 4);
      if (planar) {
        h << X->x(), X->y(), 1.0;
      } else {
        h << X->x(), X->y(), X->z(), 1.0;
      }
      // (X^T kron l^T) against column-major vec(M)
      for (int j = 0; j < h.size(); ++j) {
        for (int i = 0; i < 3; ++i) A(row, 3 * j + i) = corr.weight * h(j) * l(i);
      }
      ++row;
    }
  }
  return A;
}

VecX solve_dlt(const MatX& A) {
  const int cols = int(A.cols());
  if (A.rows() < cols - 1) {
    throw DegenerateGeometryError("solve_dlt: fewer constraints than unknowns");
  }
  const MatX AtA = A.transpose() * A;
  Eigen::SelfAdjointEigenSolver<MatX> eig(AtA);
  const VecX evals = eig.eigenvalues();  // ascending
  const double lambda_max = std::max(evals(cols - 1), 1e-300);
  if (evals(1) < 1e-12 * lambda_max) {
    int rank = 0;
    for (int i = 0; i < cols; ++i) {
      if (evals(i) > 1e-12 * lambda_max) ++rank;
    }
    throw DegenerateGeometryError("solve_dlt: nullspace dimension > 1 (rank " +
                                  std::to_string(rank) + " of " + std::to_string(cols) + ")");
  }
  return eig.eigenvectors().col(0);
}

std::pair<Intrinsics, Pose> decompose_planar(const Mat3& M, const Vec2& principal_point) {
  const double cx = principal_point.x();
  const double cy = principal_point.y();
  const double a1 = M(0, 0) - cx * M(2, 0);
  const double a2 = M(0, 1) - cx * M(2, 1);
  const double b1 = M(1, 0) - cy * M(2, 0);
  const double b2 = M(1, 1) - cy * M(2, 1);
  const double w1 = M(2, 0);
  const double w2 = M(2, 1);

  // Unknowns x = 1/fx^2, y = 1/fy^2 from the unit-norm and orthogonality
  // constraints on the first two rotation columns.
  Mat2 S;
  S << a1 * a1 - a2 * a2, b1 * b1 - b2 * b2, a1 * a2, b1 * b2;
  Vec2 rhs(-(w1 * w1 - w2 * w2), -w1 * w2);
  if (std::abs(S.determinant()) < 1e-15 * std::max(1.0, S.cwiseAbs().maxCoeff())) {
    throw DegenerateGeometryError("decompose_planar: focal-length system is singular");
  }
  const Vec2 xy = S.inverse() * rhs;
  if (!(xy.x() > 0) || !(xy.y() > 0) || !std::isfinite(xy.x()) || !std::isfinite(xy.y())) {
    throw DegenerateGeometryError("decompose_planar: recovered focal length is not real");
  }
  Intrinsics K{1.0 / std::sqrt(xy.x()), 1.0 / std::sqrt(xy.y()), cx, cy};

  const Vec3 col1(a1 / K.fx, b1 / K.fy, w1);
  const Vec3 col2(a2 / K.fx, b2 / K.fy, w2);
  double gamma = 2.0 / (col1.norm() + col2.norm());
  if (gamma * M(2, 2) < 0) gamma = -gamma;  // t_z > 0

  Mat3 R_raw;
  R_raw.col(0) = gamma * col1;
  R_raw.col(1) = gamma * col2;
  R_raw.col(2) = R_raw.col(0).cross(R_raw.col(1));
  Pose pose;
  pose.R = nearest_rotation(R_raw);
  pose.T = gamma * Vec3((M(0, 2) - cx * M(2, 2)) / K.fx, (M(1, 2) - cy * M(2, 2)) / K.fy, M(2, 2));
  return {K, pose};
}

namespace {

// RQ factorization B = U * Q with U upper triangular (positive diagonal after
// sign fixing) and Q orthogonal, via QR of the row/column reversed transpose.
void rq3(const Mat3& B, Mat3& U, Mat3& Q) {
  Mat3 P = Mat3::Zero();
  P(0, 2) = P(1, 1) = P(2, 0) = 1.0;
  const Mat3 Bt = (P * B).transpose();
  const Eigen::HouseholderQR<Mat3> qr(Bt);
  const Mat3 Q0 = qr.householderQ();
  const Mat3 R0 = qr.matrixQR().triangularView<Eigen::Upper>();
  U = P * R0.transpose() * P;
  Q = P * Q0.transpose();

  Mat3 S = Mat3::Identity();
  for (int i = 0; i < 3; ++i) S(i, i) = U(i, i) < 0 ? -1.0 : 1.0;
  U = U * S;
  Q = S * Q;
}

}  // namespace

std::pair<Intrinsics, Pose> decompose_nonplanar(const Mat34& M_in) {
  Mat34 M = M_in;
  Mat3 B = M.leftCols<3>();
  const double row_norm = B.row(2).norm();
  if (row_norm < 1e-15 || std::abs(B.determinant()) < 1e-30) {
    throw DegenerateGeometryError("decompose_nonplanar: singular left 3x3 block");
  }
  M /= row_norm;
  if (M.leftCols<3>().determinant() < 0) M = -M;  // det(K) > 0 and det(R) = +1
  B = M.leftCols<3>();

  Mat3 U, Q;
  rq3(B, U, Q);
  // scale so K(2,2) = 1
  const double u22 = U(2, 2);
  U /= u22;
  M /= u22;

  Intrinsics K{U(0, 0), U(1, 1), U(0, 2), U(1, 2)};
  if (!(K.fx > 0) || !(K.fy > 0)) {
    throw DegenerateGeometryError("decompose_nonplanar: non-positive focal length");
  }

  // Zero the skew and absorb it into the rotation.
  Mat3 K_noskew = K.matrix();
  Pose pose;
  pose.R = nearest_rotation(K_noskew.inverse() * M.leftCols<3>());
  pose.T = K_noskew.inverse() * M.col(3);
  return {K, pose};
}

Distortion solve_distortion_linear(std::span<const LineCorrespondence> correspondences,
                                   const Intrinsics& K, const Pose& pose,
                                   const DistortionSolveOptions& options, bool* underdetermined) {
  if (underdetermined) *underdetermined = false;
  struct Coef {
    int index;  // into (k1..k5)
  };
  std::vector<int> active;
  if (options.num_radial >= 1) active.push_back(0);
  if (options.num_radial >= 2) active.push_back(1);
  if (options.tangential) {
    active.push_back(2);
    active.push_back(3);
  }
  if (options.num_radial >= 3) active.push_back(4);
  if (active.empty()) return {};

  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (const auto& corr : correspondences) {
    const Line2D& l = corr.line2d;
    const int samples = std::max(0, options.samples_per_line) + 2;
    for (int s = 0; s < samples; ++s) {
      const double f = samples == 1 ? 0.0 : double(s) / double(samples - 1);
      const Vec3 X = corr.line3d.P + f * (corr.line3d.Q - corr.line3d.P);
      const Vec3 pc = pose.apply(X);
      if (pc.z() <= 1e-12) continue;
      const double xu = pc.x() / pc.z();
      const double yu = pc.y() / pc.z();
      const double r2 = xu * xu + yu * yu;
      // pixel-space constraint: a fx x_d + b fy y_d + (a cx + b cy + c) = 0,
      // linear in the Brown coefficients
      const double afx = l.a * K.fx;
      const double bfy = l.b * K.fy;
      double coef[5];
      coef[0] = afx * xu * r2 + bfy * yu * r2;
      coef[1] = afx * xu * r2 * r2 + bfy * yu * r2 * r2;
      coef[2] = afx * 2 * xu * yu + bfy * (r2 + 2 * yu * yu);
      coef[3] = afx * (r2 + 2 * xu * xu) + bfy * 2 * xu * yu;
      coef[4] = afx * xu * r2 * r2 * r2 + bfy * yu * r2 * r2 * r2;

      Eigen::RowVectorXd row(active.size());
      for (std::size_t c = 0; c < active.size(); ++c) row(c) = corr.weight * coef[active[c]];
      rows.push_back(row);
      rhs.push_back(-corr.weight * (afx * xu + bfy * yu + l.a * K.cx + l.b * K.cy + l.c));
    }
  }

  if (rows.size() < 2 * active.size()) {
    if (underdetermined) *underdetermined = true;
    return {};
  }
  MatX A(rows.size(), active.size());
  VecX b(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    A.row(i) = rows[i];
    b(i) = rhs[i];
  }
  const VecX k = A.colPivHouseholderQr().solve(b);

  Distortion d;
  double* fields[5] = {&d.k1, &d.k2, &d.k3, &d.k4, &d.k5};
  for (std::size_t c = 0; c < active.size(); ++c) *fields[active[c]] = k(c);
  return d;
}

namespace {

Mat3 reshape_planar(const VecX& m) {
  Mat3 M;
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 3; ++i) M(i, j) = m(3 * j + i);
  }
  return M;
}

Mat34 reshape_full(const VecX& m) {
  Mat34 M;
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 3; ++i) M(i, j) = m(3 * j + i);
  }
  return M;
}

// Rigid map taking the common plane of the endpoints to z = 0.
struct PlanarFrame {
  Mat3 R = Mat3::Identity();
  Vec3 centroid = Vec3::Zero();
};

PlanarFrame fit_world_plane(std::span<const LineCorrespondence> correspondences) {
  Vec3 mean = Vec3::Zero();
  for (const auto& corr : correspondences) mean += corr.line3d.P + corr.line3d.Q;
  mean /= 2.0 * double(correspondences.size());
  Mat3 scatter = Mat3::Zero();
  double scale = 0;
  for (const auto& corr : correspondences) {
    for (const Vec3* X : {&corr.line3d.P, &corr.line3d.Q}) {
      const Vec3 d = *X - mean;
      scatter += d * d.transpose();
      scale = std::max(scale, d.norm());
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 n = eig.eigenvectors().col(0);
  for (const auto& corr : correspondences) {
    for (const Vec3* X : {&corr.line3d.P, &corr.line3d.Q}) {
      if (std::abs(n.dot(*X - mean)) > 1e-6 * std::max(1.0, scale)) {
        throw InvalidInputError("calibrate_linear: planar mode but model lines are not coplanar");
      }
    }
  }
  PlanarFrame frame;
  frame.centroid = mean;
  const Vec3 u = n.unitOrthogonal();
  const Vec3 v = n.cross(u);
  frame.R.row(0) = u.transpose();
  frame.R.row(1) = v.transpose();
  frame.R.row(2) = n.transpose();
  return frame;
}

}  // namespace

void fill_residuals(CalibrationResult& result,
                    std::span<const LineCorrespondence> correspondences) {
  result.per_line_residuals.clear();
  if (result.poses.empty()) return;
  const Pose& pose = result.poses.front();
  double sum_sq = 0;
  int count = 0;
  for (const auto& corr : correspondences) {
    double line_sq = 0;
    int line_n = 0;
    try {
      const Line2D proj =
          project_line3d(corr.line3d, result.intrinsics, result.distortion, pose);
      for (const Vec2* e : {&corr.line2d.p, &corr.line2d.q}) {
        const double r = proj.signed_distance(*e);
        line_sq += r * r;
        ++line_n;
      }
    } catch (const DegenerateGeometryError&) {
      line_sq = 1e8;
      line_n = 1;
    }
    result.per_line_residuals.push_back(std::sqrt(line_sq / line_n));
    sum_sq += line_sq;
    count += line_n;
  }
  result.rms_residual = count > 0 ? std::sqrt(sum_sq / count) : 0.0;
}

CalibrationResult calibrate_linear(std::span<const LineCorrespondence> correspondences,
                                   CalibMode mode, std::optional<std::array<int, 2>> image_size,
                                   const DistortionSolveOptions& distortion_options) {
  const bool planar = mode == CalibMode::planar;
  const std::size_t minimal = planar ? 4 : 6;
  if (correspondences.size() < minimal) {
    throw InvalidInputError("calibrate_linear: need at least " + std::to_string(minimal) +
                            (planar ? " planar" : " non-planar") + " line correspondences, got " +
                            std::to_string(correspondences.size()));
  }
  if (planar && !image_size) {
    throw InvalidInputError(
        "calibrate_linear: planar mode fixes the principal point at the image center and "
        "requires the image size");
  }

  // Planar mode works in a world frame with the model plane at z = 0.
  std::vector<LineCorrespondence> mapped(correspondences.begin(), correspondences.end());
  PlanarFrame frame;
  if (planar) {
    frame = fit_world_plane(correspondences);
    for (auto& corr : mapped) {
      corr.line3d.P = frame.R * (corr.line3d.P - frame.centroid);
      corr.line3d.Q = frame.R * (corr.line3d.Q - frame.centroid);
      corr.line3d.P.z() = 0;
      corr.line3d.Q.z() = 0;
    }
  }

  const PrenormalizedData normed = prenormalize(mapped);
  const MatX A = build_measurement_matrix(normed.correspondences, planar);
  const VecX m = solve_dlt(A);

  Intrinsics K;
  Pose pose;
  if (planar) {
    const Mat3 T3p = similarity2(normed.transform.T3(0, 0),
                                 -normed.transform.T3.topRightCorner<3, 1>().head<2>() /
                                     normed.transform.T3(0, 0));
    const Mat3 M = normed.transform.T2.inverse() * reshape_planar(m) * T3p;
    const Vec2 center(image_size->at(0) / 2.0, image_size->at(1) / 2.0);
    std::tie(K, pose) = decompose_planar(M, center);
  } else {
    const Mat34 M = normed.transform.T2.inverse() * reshape_full(m) * normed.transform.T3;
    std::tie(K, pose) = decompose_nonplanar(M);
  }

  if (planar) {
    // Undo the z = 0 world mapping: x_cam = R (W (X - c)) + T.
    pose.T = pose.T - pose.R * frame.R * frame.centroid;
    pose.R = pose.R * frame.R;
  }
  if (pose.T.z() <= 0) {
    throw DegenerateGeometryError("calibrate_linear: solution places the camera behind the scene");
  }
  if (!pose.has_valid_rotation(1e-6)) {
    throw DegenerateGeometryError("calibrate_linear: decomposition produced an invalid rotation");
  }

  CalibrationResult result;
  result.intrinsics = K;
  result.poses = {pose};
  result.pose_timestamps = {correspondences.front().line2d.timestamp};
  result.distortion =
      solve_distortion_linear(correspondences, K, pose, distortion_options, nullptr);
  fill_residuals(result, correspondences);
  return result;
}

}  // namespace evcal
