#include "evcal/refine.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evcal/camera.hpp"
#include "evcal/rotation.hpp"

namespace evcal {

namespace {

constexpr double kClampedResidual = 1e4;

struct ActiveDistortion {
  std::array<int, 5> index{};  // -1 when not estimated
  int count = 0;
};

ActiveDistortion active_distortion(const RefineOptions& o) {
  ActiveDistortion a;
  const bool flags[5] = {o.estimate_k1, o.estimate_k2, o.estimate_k3, o.estimate_k4,
                         o.estimate_k5};
  for (int i = 0; i < 5; ++i) a.index[i] = flags[i] ? a.count++ : -1;
  return a;
}

int intrinsics_count(const RefineOptions& o) { return o.fix_principal_point ? 2 : 4; }

}  // namespace

int RefinementProblem::parameter_count() const {
  return intrinsics_count(options) + active_distortion(options).count + 6 * int(poses.size());
}

RefinementProblem make_problem(std::span<const LineCorrespondence> correspondences,
                               const CalibrationResult& initial, const RefineOptions& options) {
  RefinementProblem problem;
  problem.intrinsics = initial.intrinsics;
  problem.distortion = initial.distortion;
  problem.poses = initial.poses;
  problem.pose_timestamps = initial.pose_timestamps;
  problem.options = options;
  if (problem.poses.empty()) {
    throw InvalidInputError("make_problem: initial result carries no pose");
  }
  for (const auto& corr : correspondences) {
    LineObservation obs;
    obs.model = corr.line3d;
    obs.detected_points = {corr.line2d.p, corr.line2d.q};
    const int interior = options.interior_points_per_line;
    for (int s = 1; s <= interior; ++s) {
      const double f = double(s) / double(interior + 1);
      obs.detected_points.push_back(corr.line2d.p + f * (corr.line2d.q - corr.line2d.p));
    }
    obs.view = 0;
    obs.weight = corr.weight;
    problem.observations.push_back(std::move(obs));
  }
  return problem;
}

namespace {

// Projects one endpoint and fills the 2 x n Jacobian of its pixel position
// with respect to the parameter increments. Returns false when the point is
// behind the camera.
bool project_endpoint(const RefinementProblem& p, const Vec3& X, int view, Vec2& pixel,
                      MatX* J /* 2 x n, nullable */) {
  const RefineOptions& o = p.options;
  const Pose& pose = p.poses[view];
  const Vec3 pc = pose.R * X + pose.T;
  if (pc.z() <= 1e-12) return false;

  const Vec2 pu(pc.x() / pc.z(), pc.y() / pc.z());
  const Vec2 pd = distort(pu, p.distortion);
  pixel = p.intrinsics.to_pixel(pd);
  if (!J) return true;

  J->setZero();
  const double fx = p.intrinsics.fx, fy = p.intrinsics.fy;

  // intrinsics block
  (*J)(0, 0) = pd.x();
  (*J)(1, 1) = pd.y();
  if (!o.fix_principal_point) {
    (*J)(0, 2) = 1.0;
    (*J)(1, 3) = 1.0;
  }

  // distortion block
  const ActiveDistortion act = active_distortion(o);
  const int k_base = intrinsics_count(o);
  const double xu = pu.x(), yu = pu.y();
  const double r2 = xu * xu + yu * yu;
  const double dxd[5] = {xu * r2, xu * r2 * r2, 2 * xu * yu, r2 + 2 * xu * xu,
                         xu * r2 * r2 * r2};
  const double dyd[5] = {yu * r2, yu * r2 * r2, r2 + 2 * yu * yu, 2 * xu * yu,
                         yu * r2 * r2 * r2};
  for (int k = 0; k < 5; ++k) {
    if (act.index[k] < 0) continue;
    (*J)(0, k_base + act.index[k]) = fx * dxd[k];
    (*J)(1, k_base + act.index[k]) = fy * dyd[k];
  }

  // pose block via normalized coordinates
  const Mat2 Jd = distort_jacobian(pu, p.distortion);
  Eigen::Matrix<double, 2, 3> Jn;  // d(pu)/d(pc)
  const double inv_z = 1.0 / pc.z();
  Jn << inv_z, 0, -pc.x() * inv_z * inv_z, 0, inv_z, -pc.y() * inv_z * inv_z;
  Eigen::Matrix<double, 2, 3> Jpix = Vec2(fx, fy).asDiagonal() * Jd * Jn;

  const int pose_base = k_base + act.count + 6 * view;
  J->block<2, 3>(0, pose_base) = -Jpix * skew(pose.R * X);  // R <- exp(w) R
  J->block<2, 3>(0, pose_base + 3) = Jpix;                  // T <- T + dt
  return true;
}

struct Evaluation {
  VecX r;
  MatX J;
  bool any_clamped = false;
};

void evaluate(const RefinementProblem& p, bool with_jacobian, Evaluation& ev) {
  int n_res = 0;
  for (const auto& obs : p.observations) n_res += int(obs.detected_points.size());
  const int n_par = p.parameter_count();
  ev.r.resize(n_res);
  if (with_jacobian) ev.J.setZero(n_res, n_par);
  ev.any_clamped = false;

  MatX J1(2, n_par), J2(2, n_par);
  int row = 0;
  for (const auto& obs : p.observations) {
    Vec2 p1, p2;
    const bool ok1 =
        project_endpoint(p, obs.model.P, obs.view, p1, with_jacobian ? &J1 : nullptr);
    const bool ok2 =
        project_endpoint(p, obs.model.Q, obs.view, p2, with_jacobian ? &J2 : nullptr);
    const double sw = std::sqrt(obs.weight);
    if (!ok1 || !ok2) {
      for (std::size_t e = 0; e < obs.detected_points.size(); ++e) {
        ev.r(row++) = kClampedResidual * sw;
      }
      ev.any_clamped = true;
      continue;
    }

    // implicit line through the projected endpoints
    const double a = p1.y() - p2.y();
    const double b = p2.x() - p1.x();
    const double c = p1.x() * p2.y() - p2.x() * p1.y();
    const double len = std::sqrt(a * a + b * b);
    if (len < 1e-12) {
      for (std::size_t e = 0; e < obs.detected_points.size(); ++e) {
        ev.r(row++) = kClampedResidual * sw;
      }
      ev.any_clamped = true;
      continue;
    }

    for (const Vec2& e : obs.detected_points) {
      const double g = a * e.x() + b * e.y() + c;
      ev.r(row) = sw * g / len;
      if (with_jacobian) {
        const double dr_da = e.x() / len - g * a / (len * len * len);
        const double dr_db = e.y() / len - g * b / (len * len * len);
        const double dr_dc = 1.0 / len;
        // (a, b, c) as functions of the two endpoints
        const double dr_du1 = -dr_db + dr_dc * p2.y();
        const double dr_dv1 = dr_da - dr_dc * p2.x();
        const double dr_du2 = dr_db - dr_dc * p1.y();
        const double dr_dv2 = -dr_da + dr_dc * p1.x();
        ev.J.row(row) = sw * (dr_du1 * J1.row(0) + dr_dv1 * J1.row(1) + dr_du2 * J2.row(0) +
                              dr_dv2 * J2.row(1));
      }
      ++row;
    }
  }
}

double huber_weight(double r, double delta) {
  const double ar = std::abs(r);
  return ar <= delta ? 1.0 : std::sqrt(delta / ar);
}

void apply_robust_loss(const RefinementProblem& p, Evaluation& ev, bool with_jacobian) {
  if (!p.options.use_huber) return;
  for (int i = 0; i < ev.r.size(); ++i) {
    const double w = huber_weight(ev.r(i), p.options.huber_delta);
    ev.r(i) *= w;
    if (with_jacobian) ev.J.row(i) *= w;
  }
}

void apply_step(RefinementProblem& p, const VecX& delta) {
  const RefineOptions& o = p.options;
  int at = 0;
  p.intrinsics.fx += delta(at++);
  p.intrinsics.fy += delta(at++);
  if (!o.fix_principal_point) {
    p.intrinsics.cx += delta(at++);
    p.intrinsics.cy += delta(at++);
  }
  const ActiveDistortion act = active_distortion(o);
  double* fields[5] = {&p.distortion.k1, &p.distortion.k2, &p.distortion.k3, &p.distortion.k4,
                       &p.distortion.k5};
  for (int k = 0; k < 5; ++k) {
    if (act.index[k] >= 0) *fields[k] += delta(at + act.index[k]);
  }
  at += act.count;
  for (Pose& pose : p.poses) {
    pose.R = so3_exp(delta.segment<3>(at)) * pose.R;
    pose.T += delta.segment<3>(at + 3);
    at += 6;
  }
}

double parameter_norm(const RefinementProblem& p) {
  double sq = p.intrinsics.fx * p.intrinsics.fx + p.intrinsics.fy * p.intrinsics.fy +
              p.intrinsics.cx * p.intrinsics.cx + p.intrinsics.cy * p.intrinsics.cy;
  for (const Pose& pose : p.poses) sq += pose.T.squaredNorm() + 3.0;
  return std::sqrt(sq);
}

}  // namespace

VecX residuals(const RefinementProblem& problem) {
  Evaluation ev;
  evaluate(problem, false, ev);
  return ev.r;
}

void residuals_and_jacobian(const RefinementProblem& problem, VecX& r, MatX& J) {
  Evaluation ev;
  evaluate(problem, true, ev);
  r = std::move(ev.r);
  J = std::move(ev.J);
}

CalibrationResult optimize(RefinementProblem problem) {
  if (problem.observations.empty()) {
    throw InvalidInputError("optimize: no observations");
  }
  const RefineOptions& o = problem.options;

  Evaluation ev;
  evaluate(problem, true, ev);
  apply_robust_loss(problem, ev, true);
  double cost = ev.r.squaredNorm();

  double lambda = o.initial_lambda;
  bool converged = false;
  int iteration = 0;
  for (; iteration < o.max_iterations; ++iteration) {
    if (cost == 0.0) {
      converged = true;
      break;
    }
    const VecX g = ev.J.transpose() * ev.r;
    if (g.cwiseAbs().maxCoeff() < o.grad_tol) {
      converged = true;
      break;
    }
    const MatX H = ev.J.transpose() * ev.J;
    const VecX diag = H.diagonal().cwiseMax(1e-12);

    bool accepted = false;
    for (int attempt = 0; attempt < 24; ++attempt) {
      MatX H_damped = H;
      H_damped.diagonal() += lambda * diag;
      const VecX delta = H_damped.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda *= 10;
        continue;
      }
      RefinementProblem trial = problem;
      apply_step(trial, delta);
      Evaluation trial_ev;
      evaluate(trial, true, trial_ev);
      apply_robust_loss(trial, trial_ev, true);
      const double trial_cost = trial_ev.r.squaredNorm();
      if (trial_cost < cost) {
        const double cost_drop = cost - trial_cost;
        const double step_norm = delta.norm();
        problem = std::move(trial);
        ev = std::move(trial_ev);
        cost = trial_cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (cost_drop < o.cost_tol * std::max(cost, 1e-300) ||
            step_norm < o.step_tol * (parameter_norm(problem) + o.step_tol)) {
          converged = true;
        }
        break;
      }
      lambda *= 10;
      if (lambda > 1e12) break;
    }
    if (converged) break;
    if (!accepted) {
      // No step improves the cost. At the numerical floor that is
      // convergence; otherwise the damping limit was hit and the best state
      // so far is returned unconverged.
      if (cost < 1e-16 * double(ev.r.size())) converged = true;
      break;
    }
  }

  CalibrationResult result;
  result.intrinsics = problem.intrinsics;
  result.distortion = problem.distortion;
  result.poses = problem.poses;
  result.pose_timestamps = problem.pose_timestamps;
  result.converged = converged;
  result.iterations = iteration;

  evaluate(problem, false, ev);
  double sum_sq = 0;
  int row = 0;
  result.per_line_residuals.clear();
  for (const auto& obs : problem.observations) {
    double line_sq = 0;
    for (std::size_t e = 0; e < obs.detected_points.size(); ++e, ++row) {
      line_sq += ev.r(row) * ev.r(row);
    }
    result.per_line_residuals.push_back(
        std::sqrt(line_sq / std::max<std::size_t>(1, obs.detected_points.size())));
    sum_sq += line_sq;
  }
  result.rms_residual = row > 0 ? std::sqrt(sum_sq / row) : 0.0;
  return result;
}

std::vector<int> solve_assignment(const MatX& cost) {
  // Jonker-Volgenant shortest augmenting path, O(n^3).
  const int n = int(cost.rows());
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, n), way(n + 1, 0);
  for (int i = 0; i < n; ++i) {
    p[n] = i;
    int j0 = n;
    std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = std::numeric_limits<double>::infinity();
      int j1 = -1;
      for (int j = 0; j < n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != n);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != n);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 0; j < n; ++j) {
    if (p[j] < n) row_to_col[p[j]] = j;
  }
  return row_to_col;
}

std::vector<LineCorrespondence> match_lines(std::span<const Line2D> detected,
                                            std::span<const Line3D> model, const Intrinsics& K,
                                            const Distortion& d, const Pose& pose,
                                            const MatchOptions& options) {
  if (detected.empty() || model.empty()) {
    throw InvalidInputError("match_lines: empty inputs");
  }
  std::vector<Line2D> projections;
  projections.reserve(model.size());
  for (const Line3D& L : model) projections.push_back(project_line3d(L, K, d, pose));

  const int n = int(std::max(detected.size(), model.size()));
  const double pad = 10.0 * options.gate;
  MatX cost(n, n);
  cost.setConstant(pad);
  for (std::size_t i = 0; i < detected.size(); ++i) {
    for (std::size_t j = 0; j < model.size(); ++j) {
      const double dot = std::abs(detected[i].direction().dot(projections[j].direction()));
      const double angle = std::acos(std::min(1.0, dot)) * 180.0 / M_PI;
      const double mid = (detected[i].midpoint() - projections[j].midpoint()).norm();
      cost(int(i), int(j)) = options.angle_weight * angle + options.midpoint_weight * mid;
    }
  }

  const std::vector<int> assign = solve_assignment(cost);
  std::vector<LineCorrespondence> out;
  for (std::size_t i = 0; i < detected.size(); ++i) {
    const int j = assign[int(i)];
    if (j < 0 || j >= int(model.size())) continue;
    if (cost(int(i), j) > options.gate) continue;
    out.push_back({detected[i], model[j], 1.0});
  }
  if (out.empty()) {
    throw DegenerateGeometryError("match_lines: no assignment below the gate");
  }
  return out;
}

std::vector<LineCorrespondence> match_lines_exhaustive(
    std::span<const Line2D> detected, std::span<const Line3D> model, CalibMode mode,
    std::optional<std::array<int, 2>> image_size, double max_rms_px) {
  if (detected.size() != model.size() || model.size() > 8) {
    throw InvalidInputError(
        "match_lines_exhaustive: needs equal-sized sets of at most 8 lines");
  }
  const std::size_t n = model.size();
  const std::size_t minimal = mode == CalibMode::planar ? 4 : 6;
  if (n < minimal) {
    throw InvalidInputError("match_lines_exhaustive: below the minimal line count");
  }

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<LineCorrespondence> best;
  double best_rms = std::numeric_limits<double>::infinity();
  do {
    std::vector<LineCorrespondence> candidate;
    candidate.reserve(n);
    for (std::size_t i = 0; i < n; ++i) candidate.push_back({detected[perm[i]], model[i], 1.0});
    try {
      const CalibrationResult solve = calibrate_linear(candidate, mode, image_size);
      // a consistent assignment fits all lines at once; wrong permutations
      // leave residuals one to two orders of magnitude larger
      if (solve.rms_residual < max_rms_px && solve.rms_residual < best_rms) {
        best_rms = solve.rms_residual;
        best = std::move(candidate);
      }
    } catch (const std::runtime_error&) {
      // degenerate permutation; keep searching
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  if (best.empty()) {
    throw DegenerateGeometryError("match_lines_exhaustive: no consistent assignment found");
  }
  return best;
}

std::vector<LineCorrespondence> match_lines_by_angle(
    std::span<const Line2D> detected, std::span<const Line3D> model, CalibMode mode,
    std::optional<std::array<int, 2>> image_size, double max_rms_px) {
  if (detected.size() != model.size()) {
    throw InvalidInputError("match_lines_by_angle: needs equal-sized sets");
  }
  const std::size_t n = model.size();
  if (n < (mode == CalibMode::planar ? 4u : 6u)) {
    throw InvalidInputError("match_lines_by_angle: below the minimal line count");
  }

  // Order both sets by direction angle (mod pi): detections in the image,
  // model lines in the best-fit plane of their endpoints. Moderate views
  // preserve the cyclic order, so the assignment is one of 2n alignments.
  Vec3 mean = Vec3::Zero();
  for (const Line3D& L : model) mean += L.P + L.Q;
  mean /= 2.0 * double(n);
  Mat3 scatter = Mat3::Zero();
  for (const Line3D& L : model) {
    for (const Vec3* X : {&L.P, &L.Q}) {
      const Vec3 d = *X - mean;
      scatter += d * d.transpose();
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 u = eig.eigenvectors().col(2);
  const Vec3 v = eig.eigenvectors().col(1);

  std::vector<int> model_order(n), det_order(n);
  std::iota(model_order.begin(), model_order.end(), 0);
  std::iota(det_order.begin(), det_order.end(), 0);
  auto angle_mod_pi = [](double y, double x) {
    double a = std::atan2(y, x);
    if (a < 0) a += M_PI;
    return a;
  };
  std::vector<double> model_angle(n), det_angle(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = model[i].Q - model[i].P;
    model_angle[i] = angle_mod_pi(d.dot(v), d.dot(u));
    det_angle[i] = angle_mod_pi(detected[i].direction().y(), detected[i].direction().x());
  }
  std::sort(model_order.begin(), model_order.end(),
            [&](int a, int b) { return model_angle[a] < model_angle[b]; });
  std::sort(det_order.begin(), det_order.end(),
            [&](int a, int b) { return det_angle[a] < det_angle[b]; });

  std::vector<LineCorrespondence> best;
  double best_rms = std::numeric_limits<double>::infinity();
  for (int flip = 0; flip < 2; ++flip) {
    for (std::size_t shift = 0; shift < n; ++shift) {
      std::vector<LineCorrespondence> candidate;
      candidate.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t mi = flip ? (n - 1 - i + shift) % n : (i + shift) % n;
        candidate.push_back({detected[det_order[i]], model[model_order[mi]], 1.0});
      }
      try {
        const CalibrationResult solve = calibrate_linear(candidate, mode, image_size);
        if (solve.rms_residual < max_rms_px && solve.rms_residual < best_rms) {
          best_rms = solve.rms_residual;
          best = std::move(candidate);
        }
      } catch (const std::runtime_error&) {
      }
    }
  }
  if (best.empty()) {
    throw DegenerateGeometryError(
        "match_lines_by_angle: no cyclic alignment fits all lines; the view may reorder the "
        "line angles");
  }
  return best;
}

CalibrationResult calibrate_robust(std::span<const LineCorrespondence> correspondences,
                                   CalibMode mode,
                                   std::optional<std::array<int, 2>> image_size,
                                   const RansacOptions& ransac_options,
                                   const RefineOptions& refine_options,
                                   std::vector<int>* inliers_out) {
  const std::size_t minimal = mode == CalibMode::planar ? 4 : 6;
  // the linear stage estimates the same coefficients the refinement does
  DistortionSolveOptions distortion_options;
  distortion_options.samples_per_line = 0;
  distortion_options.num_radial =
      refine_options.estimate_k2 ? 2 : (refine_options.estimate_k1 ? 1 : 0);
  distortion_options.tangential = refine_options.estimate_k3 || refine_options.estimate_k4;
  if (correspondences.size() < minimal + 1) {
    throw InvalidInputError("calibrate_robust: need more than the minimal correspondence count");
  }

  std::mt19937_64 rng(ransac_options.seed);
  std::vector<int> index(correspondences.size());
  std::iota(index.begin(), index.end(), 0);

  std::vector<int> best_inliers;
  double best_rms = std::numeric_limits<double>::infinity();
  for (int it = 0; it < ransac_options.max_iterations; ++it) {
    std::shuffle(index.begin(), index.end(), rng);
    std::vector<LineCorrespondence> subset;
    subset.reserve(minimal);
    for (std::size_t i = 0; i < minimal; ++i) subset.push_back(correspondences[index[i]]);

    CalibrationResult model;
    try {
      model = calibrate_linear(subset, mode, image_size, distortion_options);
    } catch (const std::runtime_error&) {
      continue;
    }

    std::vector<int> inliers;
    double rms = 0;
    for (std::size_t i = 0; i < correspondences.size(); ++i) {
      const auto& corr = correspondences[i];
      try {
        const Line2D proj = project_line3d(corr.line3d, model.intrinsics, model.distortion,
                                           model.poses.front());
        const double d1 = std::abs(proj.signed_distance(corr.line2d.p));
        const double d2 = std::abs(proj.signed_distance(corr.line2d.q));
        if (d1 < ransac_options.inlier_threshold_px && d2 < ransac_options.inlier_threshold_px) {
          inliers.push_back(int(i));
          rms += d1 * d1 + d2 * d2;
        }
      } catch (const DegenerateGeometryError&) {
      }
    }
    if (inliers.size() > best_inliers.size() ||
        (inliers.size() == best_inliers.size() && !inliers.empty() &&
         rms / double(inliers.size()) < best_rms)) {
      best_inliers = std::move(inliers);
      best_rms = rms / std::max<std::size_t>(1, best_inliers.size());
    }
  }

  // Local optimization: minimal-subset line models are noisy and the linear
  // solve is biased under distortion, so the consensus is refit nonlinearly
  // and re-gated with a widening-then-narrowing threshold schedule before the
  // final gate applies.
  const double schedule[] = {8.0, 4.0, 2.0, 1.0, 1.0, 1.0};
  for (double mult : schedule) {
    if (best_inliers.size() < minimal) break;
    std::vector<LineCorrespondence> subset;
    subset.reserve(best_inliers.size());
    for (int i : best_inliers) subset.push_back(correspondences[i]);
    CalibrationResult model;
    try {
      model = calibrate_linear(subset, mode, image_size, distortion_options);
      model = optimize(make_problem(subset, model, refine_options));
    } catch (const std::runtime_error&) {
      break;
    }
    const double gate = mult * ransac_options.inlier_threshold_px;
    std::vector<int> regated;
    for (std::size_t i = 0; i < correspondences.size(); ++i) {
      const auto& corr = correspondences[i];
      try {
        const Line2D proj = project_line3d(corr.line3d, model.intrinsics, model.distortion,
                                           model.poses.front());
        if (std::abs(proj.signed_distance(corr.line2d.p)) < gate &&
            std::abs(proj.signed_distance(corr.line2d.q)) < gate) {
          regated.push_back(int(i));
        }
      } catch (const DegenerateGeometryError&) {
      }
    }
    if (regated.size() >= minimal) best_inliers = std::move(regated);
  }

  if (double(best_inliers.size()) <
      ransac_options.min_inlier_ratio * double(correspondences.size())) {
    throw DegenerateGeometryError("calibrate_robust: no model reached the minimal inlier ratio (" +
                                  std::to_string(best_inliers.size()) + " of " +
                                  std::to_string(correspondences.size()) + " inliers)");
  }

  std::vector<LineCorrespondence> consensus;
  consensus.reserve(best_inliers.size());
  for (int i : best_inliers) consensus.push_back(correspondences[i]);
  const CalibrationResult linear = calibrate_linear(consensus, mode, image_size,
                                                    distortion_options);
  RefineOptions opts = refine_options;
  if (mode == CalibMode::planar) opts.fix_principal_point = false;
  CalibrationResult refined = optimize(make_problem(consensus, linear, opts));
  if (inliers_out) *inliers_out = best_inliers;
  return refined;
}

CalibrationResult optimize_multi(std::span<const RefinementProblem> problems) {
  if (problems.empty()) throw InvalidInputError("optimize_multi: no problems");
  RefinementProblem joint;
  joint.intrinsics = problems.front().intrinsics;
  joint.distortion = problems.front().distortion;
  joint.options = problems.front().options;
  for (const RefinementProblem& p : problems) {
    const int view_offset = int(joint.poses.size());
    joint.poses.insert(joint.poses.end(), p.poses.begin(), p.poses.end());
    joint.pose_timestamps.insert(joint.pose_timestamps.end(), p.pose_timestamps.begin(),
                                 p.pose_timestamps.end());
    for (LineObservation obs : p.observations) {
      obs.view += view_offset;
      joint.observations.push_back(std::move(obs));
    }
  }
  return optimize(std::move(joint));
}

}  // namespace evcal
