#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "evcal/camera.hpp"
#include "evcal/kdtree.hpp"
#include "evcal/rotation.hpp"
#include "evcal/simulator.hpp"
#include "test_helpers.hpp"

using namespace evcal;
using namespace evcal::test;

TEST_CASE("generate_cluster: static noiseless lines stay collinear at every slice") {
  SceneSpec scene;
  scene.K_true = {400, 400, 320, 240};
  scene.pose_true.T = Vec3(0, 0, 5);
  scene.lines.push_back({Vec3(-1, 0.5, 0), Vec3(1, -0.3, 0), 0});
  scene.planar = true;
  MotionSpec motion;  // omega = nu = 0
  const GeneratedCluster gen = generate_cluster(scene, motion, 0.0, kDetectCz, 3);
  const Line2D truth = gen.truth_lines[0].first;
  for (const Event& e : gen.cluster.events) {
    CHECK(std::abs(truth.signed_distance({e.x, e.y})) < 1e-9);
  }
}

TEST_CASE("generate_cluster respects the seed and labels every event") {
  const SceneSpec scene = detection_scene(5, -0.1, 42);
  const GeneratedCluster a = generate_cluster(scene, paper_motion(), 1.0, kDetectCz, 7);
  const GeneratedCluster b = generate_cluster(scene, paper_motion(), 1.0, kDetectCz, 7);
  REQUIRE(a.cluster.size() == b.cluster.size());
  CHECK(a.labels.size() == a.cluster.size());
  for (std::size_t i = 0; i < a.cluster.size(); ++i) {
    CHECK(a.cluster.events[i].x == b.cluster.events[i].x);
    CHECK(a.cluster.events[i].t == b.cluster.events[i].t);
  }
  // different seed, different events
  const GeneratedCluster c = generate_cluster(scene, paper_motion(), 1.0, kDetectCz, 8);
  CHECK(c.cluster.events[0].x != a.cluster.events[0].x);
}

TEST_CASE("generate_cluster: strip width matches noise plus motion sweep") {
  // Fig. 3 style check on one line: the events' spread about the truth line
  // stays within noise + sweep.
  SceneSpec scene;
  scene.K_true = {400, 400, 320, 240};
  scene.pose_true.T = Vec3(0, 0, 5);
  scene.lines.push_back({Vec3(-1.5, 0.3, 0), Vec3(1.5, 0.3, 0), 0});
  scene.planar = true;
  MotionSpec motion;
  motion.nu = Vec3(0, 1, 0);
  const double sigma = 1.0;
  const GeneratedCluster gen = generate_cluster(scene, motion, sigma, kDetectCz, 5);
  const Line2D truth = gen.truth_lines[0].first;
  const double sweep = 400.0 / 5.0 * motion.nu.y() * motion.duration;  // f/Z * v * T
  int inside = 0;
  for (const Event& e : gen.cluster.events) {
    if (std::abs(truth.signed_distance({e.x, e.y})) <= sweep + 4 * sigma) ++inside;
  }
  CHECK(double(inside) / double(gen.cluster.size()) > 0.999);
}

TEST_CASE("generate_cluster label purity under nearest-neighbor classification") {
  const SceneSpec scene = detection_scene(5, 0.0, 42);
  const GeneratedCluster gen = generate_cluster(scene, paper_motion(), 0.0, kDetectCz, 42);
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < gen.cluster.size(); ++i) pts.push_back(gen.cluster.point(i));
  const KdTree3 tree(std::move(pts));
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> pick(0, int(gen.cluster.size()) - 1);
  int agree = 0, total = 2000;
  std::vector<int> nb;
  for (int trial = 0; trial < total; ++trial) {
    const int i = pick(rng);
    tree.knn(gen.cluster.point(i), 2, nb);
    const int other = nb[0] == i ? nb[1] : nb[0];
    if (gen.labels[i] == gen.labels[other]) ++agree;
  }
  CHECK(double(agree) / total >= 0.99);
}

TEST_CASE("generate_cluster throws when everything lands outside the frame") {
  SceneSpec scene;
  scene.K_true = {400, 400, 320, 240};
  scene.pose_true.T = Vec3(0, 0, 5);
  scene.lines.push_back({Vec3(100, 100, 0), Vec3(101, 100, 0), 0});  // far off-frame
  CHECK_THROWS_AS(generate_cluster(scene, MotionSpec{}, 0.0, kDetectCz, 1),
                  DegenerateGeometryError);
}

TEST_CASE("slice_pose equals moving the lines") {
  const SceneSpec scene = detection_scene(3, 0.0, 9);
  const MotionSpec motion = paper_motion();
  const double t = 0.031;
  const Pose pose_t = slice_pose(scene.pose_true, motion, t);
  const Mat3 Rm = so3_exp(motion.omega * t);
  const Vec3 Tm = motion.nu * t;
  for (const Line3D& L : scene.lines) {
    const Vec3 moved = Rm * L.P + Tm;
    const Vec2 via_moved = project_point(moved, scene.K_true, scene.pose_true);
    const Vec2 via_pose = project_point(L.P, scene.K_true, pose_t);
    CHECK((via_moved - via_pose).norm() < 1e-9);
  }
}

TEST_CASE("sample_scene produces in-frame, planarity-consistent scenes") {
  std::mt19937_64 rng(21);
  SceneSampleOptions options;
  options.n_lines = 25;
  for (bool planar : {true, false}) {
    options.planar = planar;
    const SceneSpec scene = sample_scene(options, rng);
    CHECK(scene.lines.size() == 25);
    CHECK(scene.pose_true.has_valid_rotation(1e-9));
    CHECK(scene.pose_true.T.z() > 0);
    for (const Line3D& L : scene.lines) {
      for (const Vec3& X : {L.P, L.Q}) {
        if (planar) CHECK(std::abs(X.z()) < 1e-12);
        const Vec2 px = project_point(X, scene.K_true, scene.pose_true);
        CHECK(px.x() >= 0);
        CHECK(px.x() < 640);
        CHECK(px.y() >= 0);
        CHECK(px.y() < 480);
      }
    }
  }
}

TEST_CASE("error_metrics is zero at the truth") {
  const SceneSpec scene = detection_scene(3, -0.1, 5);
  CalibrationResult est;
  est.intrinsics = scene.K_true;
  est.distortion = scene.d_true;
  est.poses = {scene.pose_true};
  const ErrorMetrics m = error_metrics(est, scene);
  CHECK(m.err_R == 0.0);
  CHECK(m.err_T == 0.0);
  CHECK(m.err_fx == 0.0);
  CHECK(m.err_k1 == 0.0);
  CHECK(m.correct());
}

TEST_CASE("error_metrics: 1 degree rotation about z") {
  const SceneSpec scene = detection_scene(3, 0.0, 5);
  CalibrationResult est;
  est.intrinsics = scene.K_true;
  est.distortion = scene.d_true;
  Pose p = scene.pose_true;
  p.R = p.R * so3_exp(Vec3(0, 0, 1.0 * M_PI / 180.0));
  est.poses = {p};
  const ErrorMetrics m = error_metrics(est, scene);
  CHECK(m.err_R == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(m.err_T == 0.0);
}

TEST_CASE("error_metrics matches an independent per-column implementation") {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> gauss(0, 1);
  const SceneSpec scene = detection_scene(3, -0.1, 5);
  for (int trial = 0; trial < 100; ++trial) {
    CalibrationResult est;
    est.intrinsics = {scene.K_true.fx + gauss(rng), scene.K_true.fy + gauss(rng),
                      scene.K_true.cx + gauss(rng), scene.K_true.cy + gauss(rng)};
    est.distortion.k1 = scene.d_true.k1 + 0.01 * gauss(rng);
    est.distortion.k2 = scene.d_true.k2 + 0.01 * gauss(rng);
    Pose p = scene.pose_true;
    p.R = so3_exp(0.05 * Vec3(gauss(rng), gauss(rng), gauss(rng))) * p.R;
    p.T += 0.05 * Vec3(gauss(rng), gauss(rng), gauss(rng));
    est.poses = {p};
    const ErrorMetrics m = error_metrics(est, scene);

    // oracle: the formulas re-implemented directly
    double err_r = 0;
    for (int g = 0; g < 3; ++g) {
      const double dot = scene.pose_true.R.col(g).dot(p.R.col(g));
      err_r = std::max(err_r, std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / M_PI);
    }
    const double err_t = (p.T - scene.pose_true.T).norm() / scene.pose_true.T.norm() * 100.0;
    CHECK(m.err_R == doctest::Approx(err_r).epsilon(1e-9));
    CHECK(m.err_T == doctest::Approx(err_t).epsilon(1e-9));
    CHECK(m.err_fx ==
          doctest::Approx(100.0 * std::abs(est.intrinsics.fx - scene.K_true.fx) / scene.K_true.fx)
              .epsilon(1e-9));
    CHECK(m.err_k1 ==
          doctest::Approx(1e3 * std::abs(est.distortion.k1 - scene.d_true.k1)).epsilon(1e-9));
  }
}

TEST_CASE("perfect_observations places noisy endpoints on the distorted chords") {
  const SceneSpec scene = detection_scene(10, -0.1, 11);
  std::mt19937_64 rng(2);
  const auto obs = perfect_observations(scene, 0.0, rng);
  REQUIRE(obs.size() == 10);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Vec2 p = project_point(scene.lines[i].P, scene.K_true, scene.d_true, scene.pose_true);
    CHECK((obs[i].line2d.p - p).norm() < 1e-12);
    CHECK(obs[i].line3d.id == scene.lines[i].id);
  }
}

TEST_CASE("percentile handles interpolation and degenerate inputs") {
  CHECK(std::isnan(percentile({}, 50)));
  CHECK(percentile({3.0}, 50) == 3.0);
  CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 50) == doctest::Approx(2.5));
  CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 25) == doctest::Approx(1.75));
  CHECK(percentile({4.0, 1.0, 3.0, 2.0}, 100) == 4.0);
}
