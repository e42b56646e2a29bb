#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "evcal/camera.hpp"
#include "evcal/rotation.hpp"

using namespace evcal;

namespace {

Intrinsics default_K() { return {400, 400, 320, 240}; }

Pose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Vec3 w(gauss(rng), gauss(rng), gauss(rng));
  Pose pose;
  pose.R = so3_exp(0.5 * w.normalized() * std::uniform_real_distribution<double>(0, 2.0)(rng));
  pose.T = Vec3(gauss(rng), gauss(rng), std::uniform_real_distribution<double>(3.0, 8.0)(rng));
  return pose;
}

// Independent oracle: build the 3x4 homogeneous matrix, multiply, dehomogenize.
Vec2 project_homogeneous_oracle(const Vec3& P, const Intrinsics& K, const Pose& pose) {
  Eigen::Matrix<double, 3, 4> M;
  M.leftCols<3>() = pose.R;
  M.col(3) = pose.T;
  M = K.matrix() * M;
  const Vec3 h = M * P.homogeneous();
  return {h.x() / h.z(), h.y() / h.z()};
}

}  // namespace

TEST_CASE("project_point maps optical axis to principal point") {
  const Vec2 px = project_point(Vec3(0, 0, 5), default_K(), Pose{});
  CHECK(px.x() == doctest::Approx(320).epsilon(1e-12));
  CHECK(px.y() == doctest::Approx(240).epsilon(1e-12));
}

TEST_CASE("project_point pinhole arithmetic") {
  const Vec2 px = project_point(Vec3(1, 0, 5), default_K(), Pose{});
  CHECK(px.x() == doctest::Approx(400).epsilon(1e-12));
  CHECK(px.y() == doctest::Approx(240).epsilon(1e-12));
}

TEST_CASE("project_point matches homogeneous-multiply oracle") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Pose pose = random_pose(rng);
    Intrinsics K{300 + 400 * std::abs(u(rng)), 300 + 400 * std::abs(u(rng)), 320 + 30 * u(rng),
                 240 + 30 * u(rng)};
    const Vec3 P(u(rng), u(rng), u(rng));
    if ((pose.R * P + pose.T).z() < 0.1) continue;
    const Vec2 got = project_point(P, K, pose);
    const Vec2 want = project_homogeneous_oracle(P, K, pose);
    CHECK((got - want).norm() < 1e-12 * std::max(1.0, want.norm()));
  }
}

TEST_CASE("project_point rejects points behind the camera") {
  CHECK_THROWS_AS(project_point(Vec3(0, 0, -1), default_K(), Pose{}), DegenerateGeometryError);
}

TEST_CASE("projection scale invariance") {
  std::mt19937_64 rng(11);
  const Pose pose = random_pose(rng);
  const Intrinsics K = default_K();
  Mat34 M = ProjectionMatrix::compose(K, pose).M;
  const Vec4 P(0.3, -0.2, 0.4, 1.0);
  const Vec3 h1 = M * P;
  const Vec3 h2 = (17.5 * M) * P;
  CHECK(std::abs(h1.x() / h1.z() - h2.x() / h2.z()) < 1e-12);
  CHECK(std::abs(h1.y() / h1.z() - h2.y() / h2.z()) < 1e-12);
}

TEST_CASE("distort fixes the center") {
  Distortion d{-0.3, 0.1, 0.01, -0.02, 0.05};
  const Vec2 out = distort(Vec2(0, 0), d);
  CHECK(out.x() == 0.0);
  CHECK(out.y() == 0.0);
}

TEST_CASE("distort hand-evaluated radial term") {
  Distortion d;
  d.k1 = -0.1;
  const Vec2 out = distort(Vec2(0.5, 0), d);
  // x_d = 0.5 * (1 - 0.1 * 0.25) = 0.4875
  CHECK(out.x() == doctest::Approx(0.4875).epsilon(1e-15));
  CHECK(out.y() == 0.0);
}

TEST_CASE("distort with zero coefficients is the identity") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Vec2 p(u(rng), u(rng));
    const Vec2 out = distort(p, Distortion{});
    CHECK(out.x() == p.x());
    CHECK(out.y() == p.y());
  }
}

TEST_CASE("distort jacobian matches central differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  std::uniform_real_distribution<double> uk(-0.3, 0.3);
  const double h = 1e-6;
  for (int i = 0; i < 100; ++i) {
    Distortion d{uk(rng), uk(rng), 0.1 * uk(rng), 0.1 * uk(rng), 0.1 * uk(rng)};
    const Vec2 p(u(rng), u(rng));
    const Mat2 J = distort_jacobian(p, d);
    for (int c = 0; c < 2; ++c) {
      Vec2 hi = p, lo = p;
      hi[c] += h;
      lo[c] -= h;
      const Vec2 fd = (distort(hi, d) - distort(lo, d)) / (2 * h);
      CHECK((J.col(c) - fd).norm() < 1e-7);
    }
  }
}

TEST_CASE("undistort round trip") {
  SUBCASE("center") {
    Distortion d{-0.2, 0.05, 0, 0, 0};
    CHECK(undistort(Vec2(0, 0), d).norm() == 0.0);
  }
  SUBCASE("hand case from the round-trip oracle") {
    Distortion d;
    d.k1 = -0.2;
    const Vec2 pd = distort(Vec2(0.3, 0.2), d);
    const Vec2 pu = undistort(pd, d);
    CHECK((pu - Vec2(0.3, 0.2)).norm() < 1e-9);
  }
  SUBCASE("zero distortion is the identity") {
    const Vec2 p(0.4, -0.7);
    CHECK((undistort(p, Distortion{}) - p).norm() == 0.0);
  }
}

namespace {

// The Brown forward map is only injective while its Jacobian stays
// nonsingular; strong joint coefficients fold the unit disk onto itself, so
// the round-trip property only holds on the invertible subdomain.
bool invertible_along_ray(const Vec2& p, const Distortion& d) {
  for (int s = 1; s <= 8; ++s) {
    const Mat2 J = distort_jacobian(p * (s / 8.0), d);
    if (J.determinant() < 0.05) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("undistort(distort(p)) = p property") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> uk(-0.3, 0.3);
  std::uniform_real_distribution<double> ut(-0.05, 0.05);
  std::uniform_real_distribution<double> up(-1.0, 1.0);
  int tested = 0;
  for (int i = 0; i < 1000; ++i) {
    Distortion d{uk(rng), uk(rng), ut(rng), ut(rng), 0.0};
    Vec2 p(up(rng), up(rng));
    if (p.norm() > 1.0) p /= p.norm();
    if (!invertible_along_ray(p, d)) continue;
    const Vec2 back = undistort(distort(p, d), d);
    CHECK((back - p).norm() < 1e-9);
    ++tested;
  }
  CHECK(tested > 700);
}

TEST_CASE("undistort covers the paper's sweep range on in-frame points") {
  // k1 = k2 down to -0.5, points within the region where the profile is
  // monotone (r <= 0.6 covers most of a 640x480 frame at f = 400).
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-0.42, 0.42);
  for (double k = -0.1; k >= -0.5; k -= 0.1) {
    Distortion d{k, k, 0, 0, 0};
    for (int i = 0; i < 50; ++i) {
      const Vec2 p(u(rng), u(rng));
      CHECK((undistort(distort(p, d), d) - p).norm() < 1e-9);
    }
  }
}

TEST_CASE("project_line3d composes projection and distortion") {
  const Intrinsics K = default_K();
  Distortion d;
  d.k1 = -0.1;
  const Pose pose{};
  const Line3D L{Vec3(-1, 0.5, 5), Vec3(1, -0.5, 5), 0};
  const Line2D l = project_line3d(L, K, d, pose);
  const Vec2 p_want = project_point(L.P, K, d, pose);
  const Vec2 q_want = project_point(L.Q, K, d, pose);
  CHECK((l.p - p_want).norm() < 1e-12);
  CHECK((l.q - q_want).norm() < 1e-12);
  CHECK(std::abs(l.a * l.a + l.b * l.b - 1.0) < 1e-12);
  CHECK(std::abs(l.signed_distance(l.p)) < 1e-9);
  CHECK(std::abs(l.signed_distance(l.q)) < 1e-9);
}

TEST_CASE("project_line3d zero distortion goes through pinhole projections") {
  const Intrinsics K = default_K();
  const Line3D L{Vec3(-1, 0, 5), Vec3(1, 0.3, 5), 0};
  const Line2D l = project_line3d(L, K, Distortion{}, Pose{});
  CHECK(std::abs(l.signed_distance(project_point(L.P, K, Pose{}))) < 1e-9);
  CHECK(std::abs(l.signed_distance(project_point(L.Q, K, Pose{}))) < 1e-9);
}

TEST_CASE("project_line3d is invariant to joint scene/pose scaling") {
  std::mt19937_64 rng(13);
  const Pose pose = random_pose(rng);
  const Intrinsics K = default_K();
  const Line3D L{Vec3(-0.5, 0.2, 0.1), Vec3(0.6, -0.4, -0.2), 0};
  const double lambda = 3.7;
  Pose scaled = pose;
  scaled.T *= lambda;
  const Line3D Ls{lambda * L.P, lambda * L.Q, 0};
  const Line2D l1 = project_line3d(L, K, Distortion{}, pose);
  const Line2D l2 = project_line3d(Ls, K, Distortion{}, scaled);
  CHECK((l1.p - l2.p).norm() < 1e-9);
  CHECK((l1.q - l2.q).norm() < 1e-9);
}

TEST_CASE("project_line3d rejects endpoints behind the camera") {
  const Line3D L{Vec3(0, 0, 5), Vec3(0, 0, -5), 0};
  CHECK_THROWS_AS(project_line3d(L, default_K(), Distortion{}, Pose{}), DegenerateGeometryError);
}

TEST_CASE("so3 exp/log round trip") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Vec3 w(gauss(rng), gauss(rng), gauss(rng));
    const Mat3 R = so3_exp(w);
    CHECK(is_rotation(R, 1e-12));
    const Mat3 back = so3_exp(so3_log(R));
    CHECK((back - R).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("nearest_rotation projects noisy rotations back to SO(3)") {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Mat3 R = so3_exp(Vec3(gauss(rng), gauss(rng), gauss(rng)));
    Mat3 noisy = R;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) noisy(r, c) += 1e-4 * gauss(rng);
    const Mat3 proj = nearest_rotation(noisy);
    CHECK(is_rotation(proj, 1e-12));
    CHECK((proj - R).cwiseAbs().maxCoeff() < 1e-3);
  }
}
