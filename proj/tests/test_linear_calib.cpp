#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "evcal/camera.hpp"
#include "evcal/linear_calib.hpp"
#include "evcal/rotation.hpp"
#include "evcal/simulator.hpp"
#include "test_helpers.hpp"

using namespace evcal;
using namespace evcal::test;

namespace {

SceneSpec make_scene(int n, bool planar, double k1, unsigned seed) {
  SceneSampleOptions options;
  options.n_lines = n;
  options.planar = planar;
  options.distortion.k1 = k1;
  options.distortion.k2 = k1;
  std::mt19937_64 rng(seed);
  return sample_scene(options, rng);
}

std::vector<LineCorrespondence> noiseless_observations(const SceneSpec& scene) {
  std::mt19937_64 rng(0);
  return perfect_observations(scene, 0.0, rng);
}

Mat34 true_projection(const SceneSpec& scene) {
  return ProjectionMatrix::compose(scene.K_true, scene.pose_true).M;
}

}  // namespace

TEST_CASE("prenormalize satisfies the sqrt(2)/sqrt(3) contract") {
  const SceneSpec scene = make_scene(12, false, 0.0, 3);
  const auto obs = noiseless_observations(scene);
  const PrenormalizedData normed = prenormalize(obs);

  Vec2 c2 = Vec2::Zero();
  Vec3 c3 = Vec3::Zero();
  double m2 = 0, m3 = 0;
  for (const auto& corr : normed.correspondences) {
    c2 += corr.line2d.p + corr.line2d.q;
    c3 += corr.line3d.P + corr.line3d.Q;
  }
  const double n_pts = 2.0 * double(normed.correspondences.size());
  c2 /= n_pts;
  c3 /= n_pts;
  for (const auto& corr : normed.correspondences) {
    m2 += (corr.line2d.p - c2).norm() + (corr.line2d.q - c2).norm();
    m3 += (corr.line3d.P - c3).norm() + (corr.line3d.Q - c3).norm();
  }
  CHECK(c2.norm() < 1e-12);
  CHECK(c3.norm() < 1e-12);
  CHECK(m2 / n_pts == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
  CHECK(m3 / n_pts == doctest::Approx(std::sqrt(3.0)).epsilon(1e-9));
}

TEST_CASE("prenormalize is the identity on already-normalized data") {
  // build correspondences whose endpoints already satisfy the contract
  const SceneSpec scene = make_scene(12, false, 0.0, 4);
  const auto first = prenormalize(noiseless_observations(scene));
  const auto second = prenormalize(first.correspondences);
  CHECK((second.transform.T2 - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((second.transform.T3 - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("prenormalize rejects coincident endpoints") {
  std::vector<LineCorrespondence> bad(3);
  for (auto& corr : bad) {
    corr.line2d.p = corr.line2d.q = Vec2(5, 5);
    corr.line3d.P = corr.line3d.Q = Vec3(1, 1, 1);
  }
  CHECK_THROWS(prenormalize(bad));
}

TEST_CASE("measurement matrix rows annihilate the true projection") {
  const SceneSpec scene = make_scene(6, false, 0.0, 5);
  const auto obs = noiseless_observations(scene);
  const Mat34 M = true_projection(scene);
  VecX m(12);
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 3; ++i) m(3 * j + i) = M(i, j);
  }

  const std::vector<LineCorrespondence> one{obs[0]};
  const MatX A1 = build_measurement_matrix(one, false);
  CHECK(A1.rows() == 2);
  CHECK(A1.cols() == 12);
  CHECK((A1 * m).cwiseAbs().maxCoeff() < 1e-9 * m.norm() * A1.norm());

  // verbatim constraint satisfaction: l^T M P = 0 for every correspondence
  for (const auto& corr : obs) {
    const Vec3 l = corr.line2d.homogeneous();
    for (const Vec3* X : {&corr.line3d.P, &corr.line3d.Q}) {
      const Vec3 MP = M * X->homogeneous();
      CHECK(std::abs(l.dot(MP)) / MP.norm() < 1e-12);
    }
  }
}

TEST_CASE("planar measurement matrix from 4 lines has rank 8") {
  const SceneSpec scene = make_scene(4, true, 0.0, 6);
  const auto mapped = noiseless_observations(scene);
  // planar scenes live on z = 0 already
  const auto normed = prenormalize(mapped);
  const MatX A = build_measurement_matrix(normed.correspondences, true);
  CHECK(A.rows() == 8);
  CHECK(A.cols() == 9);
  const Eigen::JacobiSVD<MatX> svd(A);
  const VecX s = svd.singularValues();
  int rank = 0;
  for (int i = 0; i < s.size(); ++i) {
    if (s(i) > 1e-9 * s(0)) ++rank;
  }
  CHECK(rank == 8);
}

TEST_CASE("non-planar measurement matrix from 6 generic lines has rank 11") {
  const SceneSpec scene = make_scene(6, false, 0.0, 7);
  const auto normed = prenormalize(noiseless_observations(scene));
  const MatX A = build_measurement_matrix(normed.correspondences, false);
  const Eigen::JacobiSVD<MatX> svd(A);
  const VecX s = svd.singularValues();
  int rank = 0;
  for (int i = 0; i < s.size(); ++i) {
    if (s(i) > 1e-9 * s(0)) ++rank;
  }
  CHECK(rank == 11);
}

TEST_CASE("build_measurement_matrix rejects an inconsistent planar flag") {
  const SceneSpec scene = make_scene(6, false, 0.0, 8);  // non-planar data
  CHECK_THROWS_AS(build_measurement_matrix(noiseless_observations(scene), true),
                  InvalidInputError);
}

TEST_CASE("solve_dlt matches a direct SVD oracle and zeroes the residual") {
  const SceneSpec scene = make_scene(10, false, 0.0, 9);
  const auto normed = prenormalize(noiseless_observations(scene));
  const MatX A = build_measurement_matrix(normed.correspondences, false);
  const VecX m = solve_dlt(A);
  CHECK((A * m).norm() < 1e-9);
  CHECK(m.norm() == doctest::Approx(1.0).epsilon(1e-12));

  // oracle: smallest right singular vector of A itself
  Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeThinV);
  const VecX oracle = svd.matrixV().col(11);
  CHECK(std::abs(std::abs(oracle.dot(m)) - 1.0) < 1e-9);
}

TEST_CASE("solve_dlt rejects rank-deficient systems") {
  const SceneSpec scene = make_scene(3, true, 0.0, 10);
  const auto normed = prenormalize(noiseless_observations(scene));
  const MatX A = build_measurement_matrix(normed.correspondences, true);
  CHECK_THROWS_AS(solve_dlt(A), DegenerateGeometryError);
}

TEST_CASE("decompose_planar recovers a hand-composed homography exactly") {
  Intrinsics K{400, 400, 320, 240};
  Pose pose;
  pose.R = so3_exp(Vec3(0.3, -0.2, 0.1));
  pose.T = Vec3(0, 0, 5);
  const Mat3 M = ProjectionMatrix::compose(K, pose).planar();
  const auto [K2, pose2] = decompose_planar(M, Vec2(320, 240));
  CHECK(K2.fx == doctest::Approx(400).epsilon(1e-9));
  CHECK(K2.fy == doctest::Approx(400).epsilon(1e-9));
  CHECK((pose2.R - pose.R).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((pose2.T - pose.T).norm() < 1e-9);
}

TEST_CASE("decompose_planar rejects the fronto-parallel degeneracy") {
  // with R = I the orthogonality constraint is vacuous and the focal length
  // is unobservable; the solver must refuse rather than guess
  Intrinsics K{400, 400, 320, 240};
  Pose pose;
  pose.T = Vec3(0, 0, 5);
  const Mat3 M = ProjectionMatrix::compose(K, pose).planar();
  CHECK_THROWS_AS(decompose_planar(M, Vec2(320, 240)), DegenerateGeometryError);
}

TEST_CASE("decompose_planar round trip over 1000 random planar scenes") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Intrinsics K{300 + 500 * u(rng), 300 + 500 * u(rng), 320, 240};
    Pose pose;
    pose.R = so3_exp(Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5));
    pose.T = Vec3(u(rng) - 0.5, u(rng) - 0.5, 3 + 5 * u(rng));
    Mat3 M = ProjectionMatrix::compose(K, pose).planar();
    M *= (u(rng) < 0.5 ? -1.0 : 1.0) * (0.1 + 5 * u(rng));  // scale/sign ambiguity
    const auto [K2, pose2] = decompose_planar(M, Vec2(K.cx, K.cy));
    worst = std::max(worst, std::abs(K2.fx - K.fx) / K.fx);
    worst = std::max(worst, std::abs(K2.fy - K.fy) / K.fy);
    CHECK((pose2.R - pose.R).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((pose2.T - pose.T).norm() < 1e-6 * pose.T.norm());
    CHECK(pose2.T.z() > 0);
    CHECK(pose2.has_valid_rotation(1e-9));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("decompose_nonplanar recovers composed projections within 1e-9") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    Intrinsics K{300 + 1500 * u(rng), 300 + 1500 * u(rng), 280 + 80 * u(rng),
                 200 + 80 * u(rng)};
    Pose pose;
    pose.R = so3_exp(2.0 * Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5));
    pose.T = Vec3(u(rng) - 0.5, u(rng) - 0.5, 1 + 8 * u(rng));
    Mat34 M = ProjectionMatrix::compose(K, pose).M;
    const double scale = (u(rng) < 0.5 ? -1.0 : 1.0) * (0.1 + 5 * u(rng));
    const auto [K2, pose2] = decompose_nonplanar(scale * M);

    CHECK(std::abs(K2.fx - K.fx) < 1e-9 * K.fx);
    CHECK(std::abs(K2.fy - K.fy) < 1e-9 * K.fy);
    CHECK(std::abs(K2.cx - K.cx) < 1e-7);
    CHECK(std::abs(K2.cy - K.cy) < 1e-7);
    CHECK((pose2.R - pose.R).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(pose2.has_valid_rotation(1e-9));
    CHECK(pose2.R.determinant() == doctest::Approx(1.0).epsilon(1e-9));

    // recomposition proportional to the input, including the negated case
    const Mat34 M2 = ProjectionMatrix::compose(K2, pose2).M;
    const double rel = (M2 / M2.norm() - M / M.norm()).norm();
    CHECK(rel < 1e-9);
  }
}

TEST_CASE("decompose_nonplanar keeps a right-handed rotation for negated input") {
  Intrinsics K{500, 480, 310, 250};
  Pose pose;
  pose.R = so3_exp(Vec3(0.3, -0.2, 0.4));
  pose.T = Vec3(0.2, -0.1, 4);
  const Mat34 M = ProjectionMatrix::compose(K, pose).M;
  const auto [K2, pose2] = decompose_nonplanar(-M);
  CHECK(pose2.R.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pose2.T.z() > 0);
  CHECK(std::abs(K2.fx - K.fx) < 1e-9 * K.fx);
}

TEST_CASE("decompose_nonplanar rejects a singular left block") {
  Mat34 M = Mat34::Zero();
  M(0, 0) = M(1, 1) = 1;  // rank 2 left block
  M(2, 3) = 1;
  CHECK_THROWS_AS(decompose_nonplanar(M), DegenerateGeometryError);
}

TEST_CASE("solve_distortion_linear on a zero-distortion scene returns ~0") {
  const SceneSpec scene = make_scene(20, false, 0.0, 15);
  const auto obs = noiseless_observations(scene);
  const Distortion d = solve_distortion_linear(obs, scene.K_true, scene.pose_true);
  CHECK(std::abs(d.k1) < 1e-6);
  CHECK(std::abs(d.k2) < 1e-6);
}

TEST_CASE("solve_distortion_linear recovers k = (-0.1, -0.1) at sigma = 0") {
  const SceneSpec scene = make_scene(25, false, -0.1, 16);
  const auto obs = noiseless_observations(scene);
  DistortionSolveOptions options;
  options.samples_per_line = 0;  // the endpoints lie on the detected chords exactly
  const Distortion d =
      solve_distortion_linear(obs, scene.K_true, scene.pose_true, options);
  CHECK(std::abs(d.k1 + 0.1) < 1e-3);
  CHECK(std::abs(d.k2 + 0.1) < 1e-3);
}

TEST_CASE("solve_distortion_linear flags underdetermined systems") {
  const SceneSpec scene = make_scene(4, false, -0.1, 17);
  std::vector<LineCorrespondence> one{noiseless_observations(scene)[0]};
  DistortionSolveOptions options;
  options.samples_per_line = 0;
  options.num_radial = 2;
  bool underdetermined = false;
  const Distortion d =
      solve_distortion_linear(one, scene.K_true, scene.pose_true, options, &underdetermined);
  CHECK(underdetermined);
  CHECK(d.is_zero());
}

TEST_CASE("calibrate_linear noiseless minimal cases are exact") {
  SUBCASE("planar, 4 lines") {
    const SceneSpec scene = make_scene(4, true, 0.0, 18);
    const auto result =
        calibrate_linear(noiseless_observations(scene), CalibMode::planar, {{640, 480}});
    const ErrorMetrics m = error_metrics(result, scene);
    CHECK(m.err_fx < 1e-4);  // percent: 1e-6 relative
    CHECK(m.err_fy < 1e-4);
    CHECK(m.err_R < 1e-4);
    CHECK(m.err_T < 1e-4);
    CHECK(result.rms_residual < 1e-6);
  }
  SUBCASE("non-planar, 6 lines") {
    const SceneSpec scene = make_scene(6, false, 0.0, 19);
    const auto result =
        calibrate_linear(noiseless_observations(scene), CalibMode::nonplanar, {{640, 480}});
    const ErrorMetrics m = error_metrics(result, scene);
    CHECK(m.err_fx < 1e-4);
    CHECK(m.err_cx < 1e-4);
    CHECK(m.err_R < 1e-4);
    CHECK(m.err_T < 1e-4);
    CHECK(result.rms_residual < 1e-6);
  }
}

TEST_CASE("calibrate_linear enforces the minimal counts exactly") {
  const SceneSpec planar_scene = make_scene(4, true, 0.0, 20);
  const auto planar_obs = noiseless_observations(planar_scene);
  CHECK_THROWS_AS(calibrate_linear(std::span(planar_obs).subspan(0, 3), CalibMode::planar,
                                   {{640, 480}}),
                  InvalidInputError);

  const SceneSpec scene = make_scene(6, false, 0.0, 21);
  const auto obs = noiseless_observations(scene);
  CHECK_THROWS_AS(calibrate_linear(std::span(obs).subspan(0, 5), CalibMode::nonplanar,
                                   {{640, 480}}),
                  InvalidInputError);
  CHECK_NOTHROW(calibrate_linear(obs, CalibMode::nonplanar, {{640, 480}}));
}

TEST_CASE("calibrate_linear requires the image size in planar mode") {
  const SceneSpec scene = make_scene(6, true, 0.0, 22);
  CHECK_THROWS_AS(calibrate_linear(noiseless_observations(scene), CalibMode::planar),
                  InvalidInputError);
}

TEST_CASE("calibrate_linear is invariant to world similarity transforms") {
  const SceneSpec scene = make_scene(10, false, 0.0, 23);
  const auto obs = noiseless_observations(scene);
  const auto base = calibrate_linear(obs, CalibMode::nonplanar, {{640, 480}});

  const double s = 3.7;
  const Vec3 v(0.4, -1.2, 2.0);
  std::vector<LineCorrespondence> transformed = obs;
  for (auto& corr : transformed) {
    corr.line3d.P = s * corr.line3d.P + v;
    corr.line3d.Q = s * corr.line3d.Q + v;
  }
  const auto moved = calibrate_linear(transformed, CalibMode::nonplanar, {{640, 480}});
  CHECK(std::abs(moved.intrinsics.fx - base.intrinsics.fx) < 1e-9 * base.intrinsics.fx);
  CHECK((moved.poses[0].R - base.poses[0].R).cwiseAbs().maxCoeff() < 1e-8);
  const Vec3 expected_T = s * base.poses[0].T - base.poses[0].R * v;
  CHECK((moved.poses[0].T - expected_T).norm() < 1e-7 * expected_T.norm());
}

TEST_CASE("calibrate_linear is invariant to image translation (non-planar)") {
  const SceneSpec scene = make_scene(10, false, 0.0, 24);
  const auto obs = noiseless_observations(scene);
  const auto base = calibrate_linear(obs, CalibMode::nonplanar, {{640, 480}});

  const Vec2 shift(37.0, -12.0);
  std::vector<LineCorrespondence> shifted = obs;
  for (auto& corr : shifted) {
    corr.line2d = Line2D::through(corr.line2d.p + shift, corr.line2d.q + shift);
  }
  const auto moved = calibrate_linear(shifted, CalibMode::nonplanar, {{640, 480}});
  CHECK(std::abs(moved.intrinsics.cx - (base.intrinsics.cx + shift.x())) < 1e-6);
  CHECK(std::abs(moved.intrinsics.cy - (base.intrinsics.cy + shift.y())) < 1e-6);
  CHECK(std::abs(moved.intrinsics.fx - base.intrinsics.fx) < 1e-6 * base.intrinsics.fx);
}

TEST_CASE("calibrate_linear sigma=1 n=25 medians sit in the expected band") {
  // regression guard for the closed-form stage; the acceptance suite pins the
  // full protocol
  std::vector<double> err_fx, err_R;
  for (int trial = 0; trial < 60; ++trial) {
    const SceneSpec scene = make_scene(25, false, -0.1, 400 + trial);
    std::mt19937_64 rng(trial);
    const auto obs = perfect_observations(scene, 1.0, rng);
    try {
      const auto result = calibrate_linear(obs, CalibMode::nonplanar, {{640, 480}});
      const ErrorMetrics m = error_metrics(result, scene);
      err_fx.push_back(m.err_fx);
      err_R.push_back(m.err_R);
    } catch (const std::runtime_error&) {
    }
  }
  CHECK(err_fx.size() >= 55);
  CHECK(percentile(err_fx, 50) < 10.0);  // paper initial: 5.01
  CHECK(percentile(err_fx, 50) > 1.0);
  CHECK(percentile(err_R, 50) < 3.0);  // paper initial: 1.49
}
