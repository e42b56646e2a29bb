#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evcal/linear_calib.hpp"
#include "evcal/types.hpp"

namespace evcal {

// One matched model line with the detected endpoints that must lie on its
// reprojection, in a given view.
struct LineObservation {
  Line3D model;
  std::vector<Vec2> detected_points;  // usually the two detected endpoints
  int view = 0;
  double weight = 1.0;
};

struct RefineOptions {
  int max_iterations = 100;
  double cost_tol = 1e-10;   // relative cost change
  double grad_tol = 1e-12;   // infinity norm of J^T r
  double step_tol = 1e-14;   // step norm relative to parameter norm
  bool use_huber = false;
  double huber_delta = 2.0;  // px
  bool estimate_k1 = true, estimate_k2 = true;
  bool estimate_k3 = false, estimate_k4 = false, estimate_k5 = false;
  bool fix_principal_point = false;
  double initial_lambda = 1e-4;
  // 0 keeps just the two detected endpoints per line; larger values add
  // evenly spaced interior points of the detected segment, which carries the
  // weight of the events that produced the line.
  int interior_points_per_line = 0;
};

// Parameter layout (increments, applied to the stored state):
//   [fx, fy, cx, cy] (cx, cy dropped when fix_principal_point),
//   active distortion coefficients in k1, k2, k3, k4, k5 order,
//   then per view [w_x, w_y, w_z, t_x, t_y, t_z] with R <- exp(w) R.
struct RefinementProblem {
  Intrinsics intrinsics;
  Distortion distortion;
  std::vector<Pose> poses;
  std::vector<double> pose_timestamps;
  std::vector<LineObservation> observations;
  RefineOptions options;

  int parameter_count() const;
};

RefinementProblem make_problem(std::span<const LineCorrespondence> correspondences,
                               const CalibrationResult& initial,
                               const RefineOptions& options = {});

// Signed endpoint-to-reprojected-line distances, px, one per detected point.
VecX residuals(const RefinementProblem& problem);

// Residuals plus the analytic Jacobian with respect to the increment layout.
void residuals_and_jacobian(const RefinementProblem& problem, VecX& r, MatX& J);

// Damped least squares on the problem state; accepted steps never increase
// the cost and poses stay on the rotation manifold.
CalibrationResult optimize(RefinementProblem problem);

struct MatchOptions {
  double angle_weight = 1.0;     // cost per degree
  double midpoint_weight = 0.5;  // cost per px
  double gate = 40.0;            // maximum acceptable combined cost
};

// One-to-one assignment of detections to projected model lines by combined
// angular + midpoint cost (optimal assignment). Unmatched detections are
// dropped.
std::vector<LineCorrespondence> match_lines(std::span<const Line2D> detected,
                                            std::span<const Line3D> model, const Intrinsics& K,
                                            const Distortion& d, const Pose& pose,
                                            const MatchOptions& options = {});

// No pose prior: enumerate assignments (n <= 8) and keep the one whose
// minimal solve is consistent with all lines.
std::vector<LineCorrespondence> match_lines_exhaustive(
    std::span<const Line2D> detected, std::span<const Line3D> model, CalibMode mode,
    std::optional<std::array<int, 2>> image_size, double max_rms_px = 10.0);

// No pose prior, larger sets: align the angle-sorted detections against the
// angle-sorted model lines over the 2n cyclic alignments and keep the one
// that fits all lines.
std::vector<LineCorrespondence> match_lines_by_angle(
    std::span<const Line2D> detected, std::span<const Line3D> model, CalibMode mode,
    std::optional<std::array<int, 2>> image_size, double max_rms_px = 10.0);

struct RansacOptions {
  int max_iterations = 500;
  double inlier_threshold_px = 2.0;
  double min_inlier_ratio = 0.5;
  std::uint64_t seed = 0;
};

// RANSAC over minimal subsets (4 planar / 6 non-planar), consensus refit with
// the linear solver, then nonlinear refinement on the inliers.
CalibrationResult calibrate_robust(std::span<const LineCorrespondence> correspondences,
                                   CalibMode mode,
                                   std::optional<std::array<int, 2>> image_size,
                                   const RansacOptions& ransac_options = {},
                                   const RefineOptions& refine_options = {},
                                   std::vector<int>* inliers_out = nullptr);

// Joint refinement of several per-cluster problems with shared intrinsics and
// distortion.
CalibrationResult optimize_multi(std::span<const RefinementProblem> problems);

// Optimal one-to-one assignment for a square cost matrix; returns the column
// assigned to each row (Jonker-Volgenant style shortest augmenting paths).
std::vector<int> solve_assignment(const MatX& cost);

}  // namespace evcal
