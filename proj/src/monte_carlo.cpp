#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "evcal/camera.hpp"
#include "evcal/event_geometry.hpp"
#include "evcal/refine.hpp"
#include "evcal/simulator.hpp"

namespace evcal {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct TrialOutcome {
  bool solved = false;
  bool correct = false;
  ErrorMetrics initial;
  ErrorMetrics optimized;
};

// The simulation protocol: the closed-form solve sees each line as the chord
// through its two noise-perturbed endpoints; the refinement consumes dense
// noisy samples of the detected line, the way the event-based cost does.
constexpr int kRefinePointsPerLine = 200;

TrialOutcome run_trial(const MonteCarloConfig& cfg, bool planar, double sigma, double focal,
                       int n_lines, double k1, double k2, std::uint64_t seed,
                       BenchMode mode) {
  TrialOutcome out;
  std::mt19937_64 rng(seed);

  SceneSampleOptions so;
  so.n_lines = n_lines;
  so.planar = planar;
  so.focal = focal;
  so.image_size = cfg.image_size;
  so.distortion.k1 = k1;
  so.distortion.k2 = k2;
  if (mode == BenchMode::full_pipeline) {
    so.min_pairwise_angle_deg = 10;
    so.min_midpoint_dist_px = 40;
  }

  try {
    const SceneSpec scene = sample_scene(so, rng);
    const CalibMode cmode = planar ? CalibMode::planar : CalibMode::nonplanar;
    DistortionSolveOptions dopts;
    dopts.samples_per_line = 0;

    CalibrationResult linear;
    RefinementProblem problem;

    if (mode == BenchMode::perfect_detection) {
      const auto observations = perfect_observations(scene, sigma, rng);
      linear = calibrate_linear(observations, cmode, cfg.image_size, dopts);
      out.initial = error_metrics(linear, scene);

      problem = make_problem(observations, linear, RefineOptions{});
      problem.observations.clear();
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (const Line3D& L : scene.lines) {
        LineObservation obs;
        obs.model = L;
        obs.view = 0;
        const Vec2 p = project_point(L.P, scene.K_true, scene.d_true, scene.pose_true);
        const Vec2 q = project_point(L.Q, scene.K_true, scene.d_true, scene.pose_true);
        obs.detected_points.reserve(kRefinePointsPerLine);
        for (int s = 0; s < kRefinePointsPerLine; ++s) {
          const double f = double(s) / double(kRefinePointsPerLine - 1);
          obs.detected_points.push_back(p + f * (q - p) +
                                        sigma * Vec2(gauss(rng), gauss(rng)));
        }
        problem.observations.push_back(std::move(obs));
      }
      const CalibrationResult refined = optimize(std::move(problem));
      out.optimized = error_metrics(refined, scene);
      out.correct = refined.converged && out.optimized.correct();
    } else {
      // Full pipeline: events, detection, then calibration on the detected
      // start-slice lines. Matching is bootstrapped from the generating pose
      // so the mode isolates detection noise from correspondence search.
      MotionSpec motion;
      motion.omega = Vec3(0, 0, 1);
      motion.nu = Vec3(1, 1, 0);
      const GeneratedCluster gen =
          generate_cluster(scene, motion, sigma, motion.duration / 400.0, splitmix64(seed));
      DetectParams params;
      params.boundary_band_fraction = 0.05;
      params.denoise_std_ratio = 3.0;
      const DetectionResult det = detect_lines(gen.cluster, params);
      std::vector<Line2D> detected;
      for (const auto& pair : det.pairs) detected.push_back(pair.line_start);
      const auto matches = match_lines(detected, scene.lines, scene.K_true, scene.d_true,
                                       gen.pose_start);
      linear = calibrate_linear(matches, cmode, cfg.image_size, dopts);
      out.initial = error_metrics(linear, scene);
      const CalibrationResult refined =
          optimize(make_problem(matches, linear, RefineOptions{}));
      out.optimized = error_metrics(refined, scene);
      out.correct = refined.converged && out.optimized.correct();
    }
    out.solved = true;
  } catch (const std::runtime_error&) {
    out.solved = false;
  }
  return out;
}

void append_rows(std::vector<SweepRow>& rows, double sweep_value, const std::string& prefix,
                 const std::vector<ErrorMetrics>& metrics, double failure_rate) {
  const std::pair<const char*, double ErrorMetrics::*> fields[] = {
      {"err_R", &ErrorMetrics::err_R},   {"err_T", &ErrorMetrics::err_T},
      {"err_fx", &ErrorMetrics::err_fx}, {"err_fy", &ErrorMetrics::err_fy},
      {"err_cx", &ErrorMetrics::err_cx}, {"err_cy", &ErrorMetrics::err_cy},
      {"err_k1", &ErrorMetrics::err_k1}, {"err_k2", &ErrorMetrics::err_k2}};
  for (const auto& [name, member] : fields) {
    std::vector<double> values;
    values.reserve(metrics.size());
    for (const ErrorMetrics& m : metrics) values.push_back(m.*member);
    SweepRow row;
    row.sweep_value = sweep_value;
    row.metric = prefix + "_" + name;
    row.median = percentile(values, 50);
    row.p25 = percentile(values, 25);
    row.p75 = percentile(values, 75);
    row.failure_rate = failure_rate;
    rows.push_back(std::move(row));
  }
}

}  // namespace

std::vector<double> default_sweep(Protocol protocol) {
  switch (protocol) {
    case Protocol::noise:
      return {0, 1, 2, 3, 4, 5};
    case Protocol::focal:
      return {400, 800, 1200, 1600, 2000};
    case Protocol::lines:
      return {6, 8, 10, 15, 20, 25, 30};
    case Protocol::distortion:
      return {-0.1, -0.2, -0.3, -0.4, -0.5};
    case Protocol::ablation:
      return {0};
  }
  return {0};
}

std::vector<SweepRow> monte_carlo(const MonteCarloConfig& config) {
  if (config.trials < 1) throw InvalidInputError("monte_carlo: trials must be >= 1");
  const std::vector<double> sweep =
      config.sweep_values.empty() ? default_sweep(config.protocol) : config.sweep_values;

  std::vector<bool> solvers;
  if (config.run_planar) solvers.push_back(true);
  if (config.run_nonplanar) solvers.push_back(false);
  if (solvers.empty()) throw InvalidInputError("monte_carlo: no solver selected");

  const int n_threads = std::max(1, config.threads > 0
                                        ? config.threads
                                        : int(std::thread::hardware_concurrency()));

  std::vector<SweepRow> rows;
  for (std::size_t point = 0; point < sweep.size(); ++point) {
    double sigma = config.sigma;
    double focal = config.focal;
    int n_lines = config.n_lines;
    double k1 = config.k1, k2 = config.k2;
    switch (config.protocol) {
      case Protocol::noise:
        sigma = sweep[point];
        break;
      case Protocol::focal:
        focal = sweep[point];
        break;
      case Protocol::lines:
        n_lines = int(sweep[point]);
        break;
      case Protocol::distortion:
        k1 = k2 = sweep[point];
        break;
      case Protocol::ablation:
        break;
    }

    for (bool planar : solvers) {
      std::vector<TrialOutcome> outcomes(config.trials);
      std::atomic<int> next{0};
      auto worker = [&]() {
        for (int t = next.fetch_add(1); t < config.trials; t = next.fetch_add(1)) {
          const std::uint64_t seed =
              splitmix64(config.seed ^ splitmix64(0x10000 * point + 2 * t + (planar ? 1 : 0)));
          outcomes[t] = run_trial(config, planar, sigma, focal, n_lines, k1, k2, seed,
                                  config.mode);
        }
      };
      std::vector<std::thread> pool;
      for (int i = 0; i < n_threads - 1; ++i) pool.emplace_back(worker);
      worker();
      for (auto& th : pool) th.join();

      std::vector<ErrorMetrics> initial, optimized;
      int failures = 0;
      for (const TrialOutcome& o : outcomes) {
        if (!o.solved) {
          ++failures;
          continue;
        }
        initial.push_back(o.initial);
        optimized.push_back(o.optimized);
        if (!o.correct) ++failures;
      }
      const double failure_rate = double(failures) / double(config.trials);
      const std::string solver = planar ? "planar" : "nonplanar";
      append_rows(rows, sweep[point], solver + "_initial", initial, failure_rate);
      append_rows(rows, sweep[point], solver + "_optimized", optimized, failure_rate);
    }
  }
  return rows;
}

std::string benchmark_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "sweep_value,metric,median,p25,p75,failure_rate\n";
  out.precision(10);
  for (const SweepRow& row : rows) {
    out << row.sweep_value << ',' << row.metric << ',' << row.median << ',' << row.p25 << ','
        << row.p75 << ',' << row.failure_rate << '\n';
  }
  return out.str();
}

}  // namespace evcal
