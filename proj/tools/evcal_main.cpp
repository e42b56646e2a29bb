// evcal command line: simulate | detect | calibrate | stereo | benchmark
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <random>

#include "evcal/camera.hpp"
#include "evcal/event_geometry.hpp"
#include "evcal/io.hpp"
#include "evcal/linear_calib.hpp"
#include "evcal/refine.hpp"
#include "evcal/simulator.hpp"
#include "evcal/stereo.hpp"

using namespace evcal;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& err) {
    throw InvalidInputError(path.string() + ": " + err.what());
  }
}

std::array<int, 2> parse_image_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw InvalidInputError("--image-size expects WxH, got " + s);
  return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

Vec3 vec3_from(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

// Scene description: either a generator spec (n_lines, planar, focal, ...)
// or explicit lines plus camera parameters.
SceneSpec scene_from_json(const json& j, std::uint64_t seed) {
  SceneSpec scene;
  if (j.contains("lines")) {
    scene.planar = j.value("planar", false);
    if (j.contains("image_size")) {
      scene.image_size = {j.at("image_size").at(0), j.at("image_size").at(1)};
    }
    const json& K = j.at("intrinsics");
    scene.K_true = {K.at("fx"), K.at("fy"), K.at("cx"), K.at("cy")};
    if (j.contains("distortion")) {
      const json& d = j.at("distortion");
      scene.d_true.k1 = d.value("k1", 0.0);
      scene.d_true.k2 = d.value("k2", 0.0);
      scene.d_true.k3 = d.value("k3", 0.0);
      scene.d_true.k4 = d.value("k4", 0.0);
      scene.d_true.k5 = d.value("k5", 0.0);
    }
    if (j.contains("pose")) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) scene.pose_true.R(r, c) = j.at("pose").at("R").at(r).at(c);
      }
      scene.pose_true.T = vec3_from(j.at("pose").at("T"));
    }
    for (const json& lj : j.at("lines")) {
      Line3D line;
      line.id = lj.value("id", int(scene.lines.size()));
      line.P = vec3_from(lj.at("P"));
      line.Q = vec3_from(lj.at("Q"));
      scene.lines.push_back(line);
    }
    return scene;
  }

  SceneSampleOptions options;
  options.n_lines = j.value("n_lines", 10);
  options.planar = j.value("planar", true);
  options.focal = j.value("focal", 400.0);
  if (j.contains("image_size")) {
    options.image_size = {j.at("image_size").at(0), j.at("image_size").at(1)};
  }
  if (j.contains("distortion")) {
    const json& d = j.at("distortion");
    options.distortion.k1 = d.value("k1", 0.0);
    options.distortion.k2 = d.value("k2", 0.0);
  }
  options.min_pairwise_angle_deg = j.value("min_pairwise_angle_deg", 10.0);
  options.min_midpoint_dist_px = j.value("min_midpoint_dist_px", 40.0);
  std::mt19937_64 rng(seed);
  return sample_scene(options, rng);
}

MotionSpec motion_from_json(const json& j) {
  MotionSpec motion;
  motion.omega = Vec3(0, 0, 1);
  motion.nu = Vec3(1, 1, 0);
  if (j.contains("omega")) motion.omega = vec3_from(j.at("omega"));
  if (j.contains("nu")) motion.nu = vec3_from(j.at("nu"));
  motion.duration = j.value("duration", 0.05);
  motion.events_per_step = j.value("events_per_step", 200);
  motion.time_steps = j.value("time_steps", 50);
  return motion;
}

void write_truth(const fs::path& path, const SceneSpec& scene, const MotionSpec& motion,
                 double sigma, double c_z, std::uint64_t seed) {
  json lines = json::array();
  for (const Line3D& l : scene.lines) {
    lines.push_back(json{{"id", l.id},
                         {"P", {l.P.x(), l.P.y(), l.P.z()}},
                         {"Q", {l.Q.x(), l.Q.y(), l.Q.z()}}});
  }
  json R = json::array();
  for (int r = 0; r < 3; ++r) {
    R.push_back({scene.pose_true.R(r, 0), scene.pose_true.R(r, 1), scene.pose_true.R(r, 2)});
  }
  const json j{
      {"schema_version", 1},
      {"model", {{"units", "m"}, {"planar", scene.planar}, {"lines", lines}}},
      {"intrinsics",
       {{"fx", scene.K_true.fx},
        {"fy", scene.K_true.fy},
        {"cx", scene.K_true.cx},
        {"cy", scene.K_true.cy}}},
      {"distortion", {{"k1", scene.d_true.k1}, {"k2", scene.d_true.k2}}},
      {"pose", {{"R", R}, {"T", {scene.pose_true.T.x(), scene.pose_true.T.y(), scene.pose_true.T.z()}}}},
      {"motion",
       {{"omega", {motion.omega.x(), motion.omega.y(), motion.omega.z()}},
        {"nu", {motion.nu.x(), motion.nu.y(), motion.nu.z()}},
        {"duration", motion.duration}}},
      {"image_size", {scene.image_size[0], scene.image_size[1]}},
      {"sigma", sigma},
      {"c_z", c_z},
      {"seed", seed}};
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

TargetModel model_from_file(const fs::path& path) {
  const json j = load_json(path);
  if (j.contains("model")) {
    // truth file written by `simulate`
    TargetModel model;
    const json& mj = j.at("model");
    model.planar = mj.value("planar", false);
    model.units = mj.value("units", "m");
    for (const json& lj : mj.at("lines")) {
      Line3D line;
      line.id = lj.value("id", int(model.lines.size()));
      line.P = vec3_from(lj.at("P"));
      line.Q = vec3_from(lj.at("Q"));
      model.lines.push_back(line);
    }
    return model;
  }
  return read_target_model(path);
}

DetectParams detect_params_from_json(const fs::path& path) {
  DetectParams params;
  params.boundary_band_fraction = 0.05;
  params.denoise_std_ratio = 3.0;
  if (path.empty()) return params;
  const json j = load_json(path);
  params.k_neighbors = j.value("k_neighbors", params.k_neighbors);
  params.angle_thresh_deg = j.value("angle_thresh_deg", params.angle_thresh_deg);
  params.dist_thresh = j.value("dist_thresh", params.dist_thresh);
  params.min_segment_size = j.value("min_segment_size", params.min_segment_size);
  params.denoise_std_ratio = j.value("denoise_std_ratio", params.denoise_std_ratio);
  params.boundary_band_fraction = j.value("boundary_band_fraction", params.boundary_band_fraction);
  params.min_temporal_extent = j.value("min_temporal_extent", params.min_temporal_extent);
  return params;
}

struct SliceDetections {
  std::vector<Line2D> start, end;
};

SliceDetections slice_detections(const DetectionResult& detection) {
  SliceDetections out;
  for (const DetectedLinePair& pair : detection.pairs) {
    out.start.push_back(pair.line_start);
    out.end.push_back(pair.line_end);
  }
  return out;
}

// Keep the detections from the largest segments when there are more of them
// than model lines.
std::vector<Line2D> trim_to(const DetectionResult& det, std::vector<Line2D> lines,
                            std::size_t n) {
  if (lines.size() <= n) return lines;
  std::vector<int> order(lines.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto size_of = [&](int i) {
      const int seg = det.pairs[i].segment_index;
      return seg >= 0 ? det.segments[seg].member_events.size() : 0;
    };
    return size_of(a) > size_of(b);
  });
  std::vector<Line2D> kept;
  for (std::size_t i = 0; i < n; ++i) kept.push_back(lines[order[i]]);
  return kept;
}

struct CalibrateOutcome {
  CalibrationResult result;
};

CalibrateOutcome calibrate_cluster(const EventCluster& cluster, const TargetModel& model,
                                   CalibMode mode, std::optional<std::array<int, 2>> image_size,
                                   const DetectParams& params, bool use_ransac_in,
                                   std::uint64_t seed, const CalibrationResult* prior) {
  bool use_ransac = use_ransac_in;
  const DetectionResult detection = detect_lines(cluster, params);
  SliceDetections slices = slice_detections(detection);
  if (slices.start.empty()) throw DegenerateGeometryError("no line pairs detected");

  slices.start = trim_to(detection, std::move(slices.start), model.lines.size());

  // Bootstrap the start-slice assignment without a pose prior.
  std::vector<LineCorrespondence> start_matches;
  if (prior && !prior->poses.empty()) {
    start_matches = match_lines(slices.start, model.lines, prior->intrinsics, prior->distortion,
                                prior->poses.front());
  } else if (slices.start.size() != model.lines.size()) {
    throw InvalidInputError("correspondence bootstrap needs one detection per model line; got " +
                            std::to_string(slices.start.size()) + " detections for " +
                            std::to_string(model.lines.size()) + " model lines");
  } else if (model.lines.size() <= 8) {
    start_matches = match_lines_exhaustive(slices.start, model.lines, mode, image_size);
  } else {
    start_matches = match_lines_by_angle(slices.start, model.lines, mode, image_size);
  }

  RefineOptions refine_options;
  refine_options.interior_points_per_line = 16;
  // below the paper's reliability threshold the line constraints cannot
  // support distortion on top of the full intrinsics
  if (model.lines.size() < 8) {
    refine_options.estimate_k1 = false;
    refine_options.estimate_k2 = false;
  }
  RansacOptions ransac_options;
  ransac_options.seed = seed;

  DistortionSolveOptions distortion_options;
  distortion_options.samples_per_line = 0;
  distortion_options.num_radial = refine_options.estimate_k2 ? 2 : 0;
  const std::size_t minimal = mode == CalibMode::planar ? 4 : 6;
  if (use_ransac && start_matches.size() <= minimal) {
    std::cerr << "warning: --ransac needs more than " << minimal
              << " correspondences; falling back to the plain solve\n";
    use_ransac = false;
  }
  CalibrationResult start_solve =
      use_ransac
          ? calibrate_robust(start_matches, mode, image_size, ransac_options, refine_options)
          : calibrate_linear(start_matches, mode, image_size, distortion_options);

  // End slice: the start pose is a good prior (the motion within one cluster
  // is small).
  std::vector<RefinementProblem> problems;
  problems.push_back(make_problem(start_matches, start_solve, refine_options));
  problems.back().pose_timestamps = {cluster.t_start};
  try {
    const auto end_matches = match_lines(slices.end, model.lines, start_solve.intrinsics,
                                         start_solve.distortion, start_solve.poses.front());
    if (end_matches.size() >= (mode == CalibMode::planar ? 4u : 6u)) {
      CalibrationResult end_solve =
          calibrate_linear(end_matches, mode, image_size, distortion_options);
      problems.push_back(make_problem(end_matches, end_solve, refine_options));
      problems.back().pose_timestamps = {cluster.t_end};
    }
  } catch (const std::runtime_error&) {
    // start slice alone still calibrates; the end slice is extra data
  }

  CalibrateOutcome outcome;
  outcome.result = optimize_multi(problems);
  return outcome;
}

int run(int argc, char** argv) {
  CLI::App app{"line-based event camera calibration"};
  app.require_subcommand(1);

  // --- simulate ---
  auto* sim = app.add_subcommand("simulate", "generate a synthetic event cluster");
  std::string sim_scene, sim_motion, sim_out, sim_truth;
  double sim_sigma = 1.0;
  double sim_cz = 0.05 / 400.0;
  std::uint64_t sim_seed = 1;
  int sim_lines = 10;
  std::string sim_mode = "planar";
  double sim_k1 = 0.0;
  sim->add_option("--scene", sim_scene, "scene JSON (generator spec or explicit lines)");
  sim->add_option("--motion", sim_motion, "motion JSON (omega, nu, duration, rates)");
  sim->add_option("--sigma", sim_sigma, "pixel noise std");
  sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--c-z", sim_cz, "time scaling written to the truth file, s per unit");
  sim->add_option("--lines", sim_lines, "generated line count (when no scene file)");
  sim->add_option("--mode", sim_mode, "planar|nonplanar (when no scene file)")
      ->check(CLI::IsMember({"planar", "nonplanar"}));
  sim->add_option("--k1", sim_k1, "distortion k1 = k2 (when no scene file)");
  sim->add_option("--out", sim_out, "events CSV")->required();
  sim->add_option("--truth", sim_truth, "truth JSON (model, camera, motion)");

  // --- detect ---
  auto* det = app.add_subcommand("detect", "detect line pairs in an event cluster");
  std::string det_events, det_params, det_out, det_tunit = "auto";
  double det_cz = 0;
  det->add_option("--events", det_events, "events CSV")->required();
  det->add_option("--c-z", det_cz, "time scaling, s per unit (default: diagonal rule)");
  det->add_option("--params", det_params, "detection parameter JSON");
  det->add_option("--t-unit", det_tunit, "auto|s|us")->check(CLI::IsMember({"auto", "s", "us"}));
  det->add_option("--out", det_out, "detected line pairs JSON")->required();

  // --- calibrate ---
  auto* cal = app.add_subcommand("calibrate", "calibrate from events and a line model");
  std::string cal_events, cal_model, cal_mode = "nonplanar", cal_out, cal_params;
  std::string cal_image_size, cal_multi, cal_tunit = "auto";
  double cal_cz = 0;
  bool cal_ransac = false;
  std::uint64_t cal_seed = 1;
  cal->add_option("--events", cal_events, "events CSV");
  cal->add_option("--model", cal_model, "target model JSON (or simulate truth file)")->required();
  cal->add_option("--mode", cal_mode, "planar|nonplanar")
      ->check(CLI::IsMember({"planar", "nonplanar"}));
  cal->add_option("--image-size", cal_image_size, "WxH (required in planar mode)");
  cal->add_option("--c-z", cal_cz, "time scaling, s per unit (default: diagonal rule)");
  cal->add_option("--params", cal_params, "detection parameter JSON");
  cal->add_option("--t-unit", cal_tunit, "auto|s|us")->check(CLI::IsMember({"auto", "s", "us"}));
  cal->add_flag("--ransac", cal_ransac, "robust minimal-case estimation");
  cal->add_option("--seed", cal_seed, "RNG seed for --ransac");
  std::string cal_init;
  cal->add_option("--init-report", cal_init,
                  "previous report used as a matching prior (needed above 8 lines when the "
                  "angle-order bootstrap fails)");
  cal->add_option("--multi", cal_multi, "directory of event CSVs calibrated jointly");
  cal->add_option("--out", cal_out, "report JSON")->required();

  // --- stereo ---
  auto* ste = app.add_subcommand("stereo", "relative pose from two calibration reports");
  std::string ste_left, ste_right, ste_out;
  ste->add_option("--left", ste_left, "left report JSON")->required();
  ste->add_option("--right", ste_right, "right report JSON")->required();
  ste->add_option("--out", ste_out, "stereo result JSON")->required();

  // --- benchmark ---
  auto* bench = app.add_subcommand("benchmark", "Monte-Carlo simulation protocols");
  std::string bench_protocol = "ablation", bench_out, bench_mode = "perfect";
  std::string bench_solver = "both";
  int bench_trials = 500, bench_threads = 0;
  std::uint64_t bench_seed = 1;
  bench->add_option("--protocol", bench_protocol, "noise|focal|lines|distortion|ablation")
      ->check(CLI::IsMember({"noise", "focal", "lines", "distortion", "ablation"}));
  bench->add_option("--trials", bench_trials, "trials per sweep point");
  bench->add_option("--seed", bench_seed, "base RNG seed");
  bench->add_option("--mode", bench_mode, "perfect|pipeline")
      ->check(CLI::IsMember({"perfect", "pipeline"}));
  bench->add_option("--solver", bench_solver, "planar|nonplanar|both")
      ->check(CLI::IsMember({"planar", "nonplanar", "both"}));
  bench->add_option("--threads", bench_threads, "worker threads (0 = hardware)");
  bench->add_option("--out", bench_out, "CSV table")->required();

  CLI11_PARSE(app, argc, argv);

  const auto parse_tunit = [](const std::string& s) {
    if (s == "s") return TimeUnit::seconds;
    if (s == "us") return TimeUnit::microseconds;
    return TimeUnit::auto_detect;
  };

  if (sim->parsed()) {
    SceneSpec scene;
    if (!sim_scene.empty()) {
      scene = scene_from_json(load_json(sim_scene), sim_seed);
    } else {
      json spec{{"n_lines", sim_lines},
                {"planar", sim_mode == "planar"},
                {"distortion", {{"k1", sim_k1}, {"k2", sim_k1}}},
                {"min_pairwise_angle_deg", 10.0},
                {"min_midpoint_dist_px", 40.0}};
      scene = scene_from_json(spec, sim_seed);
    }
    const MotionSpec motion =
        sim_motion.empty() ? motion_from_json(json::object()) : motion_from_json(load_json(sim_motion));
    const GeneratedCluster gen = generate_cluster(scene, motion, sim_sigma, sim_cz, sim_seed);
    write_events(sim_out, gen.cluster);
    if (!sim_truth.empty()) {
      write_truth(sim_truth, scene, motion, sim_sigma, gen.cluster.c_z, sim_seed);
    }
    std::cout << "wrote " << gen.cluster.size() << " events to " << sim_out << "\n";
    return 0;
  }

  if (det->parsed()) {
    std::vector<std::string> warnings;
    EventCluster cluster = read_events(det_events, parse_tunit(det_tunit), &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    if (det_cz > 0) cluster.c_z = det_cz;
    const DetectionResult detection =
        detect_lines(cluster, detect_params_from_json(det_params));
    write_detected_lines(det_out, detection, cluster);
    std::cout << "detected " << detection.pairs.size() << " line pairs ("
              << detection.segments.size() << " segments) -> " << det_out << "\n";
    return 0;
  }

  if (cal->parsed()) {
    const TargetModel model = model_from_file(cal_model);
    const CalibMode mode = cal_mode == "planar" ? CalibMode::planar : CalibMode::nonplanar;
    std::optional<std::array<int, 2>> image_size;
    if (!cal_image_size.empty()) image_size = parse_image_size(cal_image_size);
    if (mode == CalibMode::planar && !image_size) {
      throw InvalidInputError("--image-size is required in planar mode");
    }
    const DetectParams params = detect_params_from_json(cal_params);

    std::vector<fs::path> event_files;
    if (!cal_multi.empty()) {
      for (const auto& entry : fs::directory_iterator(cal_multi)) {
        if (entry.path().extension() == ".csv") event_files.push_back(entry.path());
      }
      std::sort(event_files.begin(), event_files.end());
      if (event_files.empty()) throw InvalidInputError("--multi: no .csv files in " + cal_multi);
    } else {
      if (cal_events.empty()) throw InvalidInputError("--events is required without --multi");
      event_files.push_back(cal_events);
    }

    ReportMetadata metadata;
    metadata.rng_seed = cal_seed;
    metadata.input_digests["model"] = file_digest(cal_model);

    CalibrationResult result;
    if (event_files.size() == 1) {
      std::vector<std::string> warnings;
      EventCluster cluster = read_events(event_files[0], parse_tunit(cal_tunit), &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      if (cal_cz > 0) cluster.c_z = cal_cz;
      metadata.input_digests["events"] = file_digest(event_files[0]);
      CalibrationResult prior;
      const bool has_prior = !cal_init.empty();
      if (has_prior) prior = read_report(cal_init).result;
      result = calibrate_cluster(cluster, model, mode, image_size, params, cal_ransac, cal_seed,
                                 has_prior ? &prior : nullptr)
                   .result;
    } else {
      // joint refinement across clusters with shared intrinsics
      std::vector<RefinementProblem> problems;
      for (const fs::path& file : event_files) {
        EventCluster cluster = read_events(file, parse_tunit(cal_tunit));
        if (cal_cz > 0) cluster.c_z = cal_cz;
        metadata.input_digests[file.filename().string()] = file_digest(file);
        const auto outcome = calibrate_cluster(cluster, model, mode, image_size, params,
                                               cal_ransac, cal_seed, nullptr);
        // keep the per-cluster solve as one problem block each
        const DetectionResult detection = detect_lines(cluster, params);
        SliceDetections slices = slice_detections(detection);
        slices.start = trim_to(detection, std::move(slices.start), model.lines.size());
        const auto matches =
            match_lines(slices.start, model.lines, outcome.result.intrinsics,
                        outcome.result.distortion, outcome.result.poses.front());
        problems.push_back(make_problem(matches, outcome.result, RefineOptions{}));
        problems.back().pose_timestamps = {cluster.t_start};
      }
      result = optimize_multi(problems);
    }

    write_report(cal_out, result, metadata);
    std::cout << "fx " << result.intrinsics.fx << " fy " << result.intrinsics.fy << " cx "
              << result.intrinsics.cx << " cy " << result.intrinsics.cy << " k1 "
              << result.distortion.k1 << " k2 " << result.distortion.k2 << " rms "
              << result.rms_residual << " px -> " << cal_out << "\n";
    if (!result.converged) {
      throw NonConvergenceError("refinement did not converge; report written to " + cal_out);
    }
    return 0;
  }

  if (ste->parsed()) {
    const LoadedReport left = read_report(ste_left);
    const LoadedReport right = read_report(ste_right);
    const StereoResult result = stereo_calibrate(left.result, right.result);
    write_stereo_result(ste_out, result);
    std::cout << "R_r2l (deg) [" << result.rotation_angles_deg.transpose() << "]  T_r2l (cm) ["
              << result.T_r2l_cm.transpose() << "] -> " << ste_out << "\n";
    return 0;
  }

  if (bench->parsed()) {
    MonteCarloConfig config;
    if (bench_protocol == "noise") config.protocol = Protocol::noise;
    if (bench_protocol == "focal") config.protocol = Protocol::focal;
    if (bench_protocol == "lines") config.protocol = Protocol::lines;
    if (bench_protocol == "distortion") config.protocol = Protocol::distortion;
    if (bench_protocol == "ablation") config.protocol = Protocol::ablation;
    config.trials = bench_trials;
    config.seed = bench_seed;
    config.threads = bench_threads;
    config.mode =
        bench_mode == "pipeline" ? BenchMode::full_pipeline : BenchMode::perfect_detection;
    config.run_planar = bench_solver != "nonplanar";
    config.run_nonplanar = bench_solver != "planar";
    const auto rows = monte_carlo(config);
    write_text_file(bench_out, benchmark_csv(rows));
    std::cout << "wrote " << rows.size() << " rows to " << bench_out << "\n";
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const InvalidInputError& err) {
    std::cerr << json{{"error", {{"type", "invalid_input"}, {"message", err.what()}}}}.dump()
              << "\n";
    return 2;
  } catch (const DegenerateGeometryError& err) {
    std::cerr << json{{"error", {{"type", "degenerate_geometry"}, {"message", err.what()}}}}.dump()
              << "\n";
    return 3;
  } catch (const NonConvergenceError& err) {
    std::cerr << json{{"error", {{"type", "non_convergence"}, {"message", err.what()}}}}.dump()
              << "\n";
    return 4;
  } catch (const std::exception& err) {
    std::cerr << json{{"error", {{"type", "internal"}, {"message", err.what()}}}}.dump() << "\n";
    return 2;
  }
}
