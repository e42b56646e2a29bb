#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "evcal/types.hpp"

namespace evcal {

// A detected (distorted) image line paired with a world model line.
struct LineCorrespondence {
  Line2D line2d;
  Line3D line3d;
  double weight = 1.0;
};

// Similarity transforms conditioning the endpoints before the DLT: 2D
// centroid to origin with mean norm sqrt(2), 3D centroid to origin with mean
// norm sqrt(3).
struct NormalizationTransform {
  Mat3 T2 = Mat3::Identity();
  Mat4 T3 = Mat4::Identity();
};

struct CalibrationResult {
  Intrinsics intrinsics;
  Distortion distortion;
  std::vector<Pose> poses;
  std::vector<double> pose_timestamps;
  double rms_residual = 0;                 // px, endpoint-to-reprojected-line
  std::vector<double> per_line_residuals;  // px, one per correspondence
  bool converged = true;
  int iterations = 0;
};

enum class CalibMode { planar, nonplanar };

struct PrenormalizedData {
  std::vector<LineCorrespondence> correspondences;
  NormalizationTransform transform;
};

PrenormalizedData prenormalize(std::span<const LineCorrespondence> correspondences);

// Two rows per correspondence (endpoint ⊗ line coefficients); 9 columns in
// planar form (z column dropped), 12 otherwise. Planar input must have all
// 3D endpoints on z = 0.
MatX build_measurement_matrix(std::span<const LineCorrespondence> correspondences, bool planar);

// Unit-norm eigenvector of AᵀA with the smallest eigenvalue. Throws
// DegenerateGeometryError when the nullspace dimension exceeds one.
VecX solve_dlt(const MatX& A);

// Recovers focal lengths and pose from the planar 3x3 projection matrix,
// given the principal point.
std::pair<Intrinsics, Pose> decompose_planar(const Mat3& M, const Vec2& principal_point);

// RQ factorization of the left 3x3 block; skew absorbed into R by
// nearest-rotation projection.
std::pair<Intrinsics, Pose> decompose_nonplanar(const Mat34& M);

struct DistortionSolveOptions {
  int num_radial = 2;            // estimate k1..k{num_radial in {0,1,2,3}} (k5 is the third radial)
  bool tangential = false;       // estimate k3, k4
  int samples_per_line = 10;     // interior samples in addition to the endpoints
};

// Linear least-squares fit of the Brown coefficients given fixed K and pose.
// Returns zeros and sets *underdetermined when there are too few constraints.
Distortion solve_distortion_linear(std::span<const LineCorrespondence> correspondences,
                                   const Intrinsics& K, const Pose& pose,
                                   const DistortionSolveOptions& options = {},
                                   bool* underdetermined = nullptr);

// Full closed-form pipeline: prenormalize, DLT, denormalize, decompose,
// linear distortion. Planar mode fixes the principal point at the image
// center and requires image_size.
CalibrationResult calibrate_linear(std::span<const LineCorrespondence> correspondences,
                                   CalibMode mode,
                                   std::optional<std::array<int, 2>> image_size = std::nullopt,
                                   const DistortionSolveOptions& distortion_options = {});

// Endpoint-to-reprojected-line RMS and per-correspondence residuals for a
// solved view.
void fill_residuals(CalibrationResult& result,
                    std::span<const LineCorrespondence> correspondences);

}  // namespace evcal
