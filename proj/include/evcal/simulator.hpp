#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evcal/linear_calib.hpp"
#include "evcal/types.hpp"

namespace evcal {

struct SceneSpec {
  std::vector<Line3D> lines;
  Intrinsics K_true;
  Distortion d_true;
  Pose pose_true;
  std::array<int, 2> image_size{640, 480};
  bool planar = false;
};

// Rigid motion of the model lines: X(t) = exp(omega t) X(0) + nu t.
struct MotionSpec {
  Vec3 omega = Vec3::Zero();  // rad/s
  Vec3 nu = Vec3::Zero();     // m/s
  double duration = 0.05;     // seconds
  int events_per_step = 200;  // events per line per time step
  int time_steps = 50;
};

struct GeneratedCluster {
  EventCluster cluster;
  std::vector<int> labels;  // generating line index per event
  // Ideal detections per line: the distorted endpoint chord at t_start and
  // t_end.
  std::vector<std::pair<Line2D, Line2D>> truth_lines;
  // Equivalent static-model camera poses at the two time slices.
  Pose pose_start, pose_end;
};

// Moving the lines rigidly by G(t) is the same as viewing the static model
// under pose (R exp(omega t), T + R nu t); both slice poses are returned for
// ground-truth comparisons.
Pose slice_pose(const Pose& pose, const MotionSpec& motion, double t);

GeneratedCluster generate_cluster(const SceneSpec& scene, const MotionSpec& motion,
                                  double noise_sigma, double c_z, std::uint64_t seed);

struct SceneSampleOptions {
  int n_lines = 25;
  bool planar = false;
  double focal = 400;
  std::array<int, 2> image_size{640, 480};
  Distortion distortion;
  double margin_px = 40;
  double min_line_length_px = 80;
  double distance_min = 4.0;  // camera distance to the target, scene units
  double distance_max = 10.0;
  double cone_half_angle_deg = 60.0;  // viewing-direction cone about the target normal
  double depth_spread = 0.25;         // non-planar: endpoint depth in [1 -/+ spread] * distance
  // Optional separation constraints for detection scenes (0 disables).
  double min_pairwise_angle_deg = 0;
  double min_midpoint_dist_px = 0;
};

// Samples a random pose facing the target and backprojects random image
// segments into the world (onto z = 0 when planar).
SceneSpec sample_scene(const SceneSampleOptions& options, std::mt19937_64& rng);

// The layer the paper's simulation tests: per line, project and distort both
// endpoints, perturb with Gaussian pixel noise, and pair the noisy chord with
// the model line.
std::vector<LineCorrespondence> perfect_observations(const SceneSpec& scene, double noise_sigma,
                                                     std::mt19937_64& rng);

struct ErrorMetrics {
  double err_R = 0;   // degrees, max column angle
  double err_T = 0;   // percent
  double err_fx = 0;  // percent
  double err_fy = 0;
  double err_cx = 0;
  double err_cy = 0;
  double err_k1 = 0;  // absolute * 1e3
  double err_k2 = 0;

  bool correct(double r_gate_deg = 5.0, double t_gate_pct = 5.0) const {
    return err_R < r_gate_deg && err_T < t_gate_pct;
  }
};

double rotation_error_deg(const Mat3& estimated, const Mat3& truth);

ErrorMetrics error_metrics(const CalibrationResult& estimated, const Intrinsics& K_true,
                           const Distortion& d_true, std::span<const Pose> truth_poses);
ErrorMetrics error_metrics(const CalibrationResult& estimated, const SceneSpec& truth);

// ---- Monte-Carlo harness ----------------------------------------------

enum class Protocol { noise, focal, lines, distortion, ablation };
enum class BenchMode { perfect_detection, full_pipeline };

struct MonteCarloConfig {
  Protocol protocol = Protocol::ablation;
  std::vector<double> sweep_values;  // empty selects the protocol default
  int trials = 500;
  std::uint64_t seed = 1;
  BenchMode mode = BenchMode::perfect_detection;
  bool run_planar = true;
  bool run_nonplanar = true;
  // Fixed parameters unless swept.
  int n_lines = 25;
  double sigma = 1.0;
  double focal = 400;
  double k1 = -0.1, k2 = -0.1;
  std::array<int, 2> image_size{640, 480};
  int threads = 0;  // 0 = hardware concurrency
};

struct SweepRow {
  double sweep_value = 0;
  std::string metric;  // e.g. "nonplanar_optimized_err_fx"
  double median = 0;
  double p25 = 0;
  double p75 = 0;
  double failure_rate = 0;
};

std::vector<SweepRow> monte_carlo(const MonteCarloConfig& config);

std::vector<double> default_sweep(Protocol protocol);

std::string benchmark_csv(std::span<const SweepRow> rows);

// Median / percentile helpers (empty input -> NaN).
double percentile(std::vector<double> values, double p);

}  // namespace evcal
