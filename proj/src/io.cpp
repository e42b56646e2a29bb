#include "evcal/io.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace evcal {

using nlohmann::json;

namespace {

std::string read_whole_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_whole_file(path));
  } catch (const json::parse_error& err) {
    throw InvalidInputError(path.string() + ": " + err.what());
  }
}

void dump_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json line2d_to_json(const Line2D& l) {
  return json{{"a", l.a},
              {"b", l.b},
              {"c", l.c},
              {"p", {l.p.x(), l.p.y()}},
              {"q", {l.q.x(), l.q.y()}},
              {"timestamp", l.timestamp}};
}

json pose_to_json(const Pose& pose, double timestamp) {
  json R = json::array();
  for (int r = 0; r < 3; ++r) R.push_back({pose.R(r, 0), pose.R(r, 1), pose.R(r, 2)});
  return json{{"R", R}, {"T", {pose.T.x(), pose.T.y(), pose.T.z()}}, {"timestamp", timestamp}};
}

Pose pose_from_json(const json& j) {
  Pose pose;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pose.R(r, c) = j.at("R").at(r).at(c).get<double>();
  }
  for (int i = 0; i < 3; ++i) pose.T(i) = j.at("T").at(i).get<double>();
  return pose;
}

}  // namespace

EventCluster read_events(const std::filesystem::path& path, TimeUnit unit,
                         std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw InvalidInputError(path.string() + ": empty file");
  // header: x,y,t,p (tolerating whitespace)
  {
    std::string header = line;
    header.erase(std::remove_if(header.begin(), header.end(),
                                [](unsigned char c) { return std::isspace(c); }),
                 header.end());
    if (header != "x,y,t,p") {
      throw InvalidInputError(path.string() + ": expected header 'x,y,t,p', got '" + line + "'");
    }
  }

  EventCluster cluster;
  bool all_integral = true;
  double t_max_raw = 0;
  int line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    double v[4];
    const char* ptr = line.c_str();
    const char* end = ptr + line.size();
    bool ok = true;
    for (int f = 0; f < 4 && ok; ++f) {
      while (ptr < end && (*ptr == ' ' || *ptr == '\t')) ++ptr;
      auto [next, ec] = std::from_chars(ptr, end, v[f]);
      if (ec != std::errc()) {
        ok = false;
        break;
      }
      ptr = next;
      while (ptr < end && (*ptr == ' ' || *ptr == '\t')) ++ptr;
      if (f < 3) {
        ok = ptr < end && *ptr == ',';
        if (ok) ++ptr;
      }
    }
    if (!ok || ptr != end || !std::isfinite(v[0]) || !std::isfinite(v[1]) ||
        !std::isfinite(v[2])) {
      if (warnings) {
        warnings->push_back("line " + std::to_string(line_number) + ": malformed row rejected");
      }
      continue;
    }
    all_integral = all_integral && v[2] == std::floor(v[2]);
    t_max_raw = std::max(t_max_raw, v[2]);
    cluster.events.push_back({v[0], v[1], v[2], std::int8_t(v[3] != 0 ? 1 : 0)});
  }
  if (cluster.empty()) throw InvalidInputError(path.string() + ": no events");

  const bool microseconds =
      unit == TimeUnit::microseconds ||
      (unit == TimeUnit::auto_detect && all_integral && t_max_raw >= 1000.0);
  if (microseconds) {
    for (Event& e : cluster.events) e.t *= 1e-6;
  }

  bool sorted = true;
  for (std::size_t i = 1; i < cluster.size(); ++i) {
    if (cluster.events[i].t < cluster.events[i - 1].t - 1e-12) {
      sorted = false;
      break;
    }
  }
  if (!sorted) {
    if (warnings) warnings->push_back("timestamps not monotonic; sorted");
    std::stable_sort(cluster.events.begin(), cluster.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
  }
  cluster.t_start = cluster.events.front().t;
  cluster.t_end = cluster.events.back().t;
  cluster.c_z = default_c_z(cluster.t_start, cluster.t_end);
  return cluster;
}

void write_events(const std::filesystem::path& path, const EventCluster& cluster) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot write " + path.string());
  out << "x,y,t,p\n";
  char buf[128];
  for (const Event& e : cluster.events) {
    const int n = std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%d\n", e.x, e.y, e.t,
                                int(e.polarity));
    out.write(buf, n);
  }
}

TargetModel read_target_model(const std::filesystem::path& path) {
  const json j = parse_json_file(path);
  TargetModel model;
  model.planar = j.value("planar", false);
  model.units = j.value("units", "m");
  std::set<int> ids;
  for (const json& lj : j.at("lines")) {
    Line3D line;
    line.id = lj.value("id", int(model.lines.size()));
    for (int i = 0; i < 3; ++i) {
      line.P(i) = lj.at("P").at(i).get<double>();
      line.Q(i) = lj.at("Q").at(i).get<double>();
    }
    if (line.length() <= 0) {
      throw InvalidInputError(path.string() + ": line " + std::to_string(line.id) +
                              " has coincident endpoints");
    }
    if (!ids.insert(line.id).second) {
      throw InvalidInputError(path.string() + ": duplicate line id " + std::to_string(line.id));
    }
    model.lines.push_back(line);
  }
  if (model.lines.empty()) throw InvalidInputError(path.string() + ": no lines");

  if (model.planar && model.lines.size() >= 2) {
    // coplanarity within 1e-6 of the declared units
    Vec3 mean = Vec3::Zero();
    for (const Line3D& l : model.lines) mean += l.P + l.Q;
    mean /= 2.0 * double(model.lines.size());
    Mat3 scatter = Mat3::Zero();
    for (const Line3D& l : model.lines) {
      for (const Vec3* X : {&l.P, &l.Q}) {
        const Vec3 d = *X - mean;
        scatter += d * d.transpose();
      }
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
    const Vec3 n = eig.eigenvectors().col(0);
    for (const Line3D& l : model.lines) {
      for (const Vec3* X : {&l.P, &l.Q}) {
        if (std::abs(n.dot(*X - mean)) > 1e-6) {
          throw InvalidInputError(path.string() +
                                  ": planar flag set but lines are not coplanar within 1e-6");
        }
      }
    }
  }
  return model;
}

void write_target_model(const std::filesystem::path& path, const TargetModel& model) {
  json lines = json::array();
  for (const Line3D& l : model.lines) {
    lines.push_back(json{{"id", l.id},
                         {"P", {l.P.x(), l.P.y(), l.P.z()}},
                         {"Q", {l.Q.x(), l.Q.y(), l.Q.z()}}});
  }
  dump_json_file(path, json{{"units", model.units}, {"planar", model.planar}, {"lines", lines}});
}

void write_report(const std::filesystem::path& path, const CalibrationResult& result,
                  const ReportMetadata& metadata) {
  json poses = json::array();
  for (std::size_t i = 0; i < result.poses.size(); ++i) {
    const double t = i < result.pose_timestamps.size() ? result.pose_timestamps[i] : 0.0;
    poses.push_back(pose_to_json(result.poses[i], t));
  }
  const json j{
      {"schema_version", 1},
      {"tool", {{"name", "evcal"}, {"version", metadata.tool_version}}},
      {"intrinsics",
       {{"fx", result.intrinsics.fx},
        {"fy", result.intrinsics.fy},
        {"cx", result.intrinsics.cx},
        {"cy", result.intrinsics.cy}}},
      {"distortion",
       {{"k1", result.distortion.k1},
        {"k2", result.distortion.k2},
        {"k3", result.distortion.k3},
        {"k4", result.distortion.k4},
        {"k5", result.distortion.k5}}},
      {"poses", poses},
      {"residuals", {{"rms", result.rms_residual}, {"per_line", result.per_line_residuals}}},
      {"converged", result.converged},
      {"iterations", result.iterations},
      {"rng_seed", metadata.rng_seed},
      {"input_digests", metadata.input_digests},
  };
  dump_json_file(path, j);
}

LoadedReport read_report(const std::filesystem::path& path) {
  const json j = parse_json_file(path);
  if (j.value("schema_version", 0) != 1) {
    throw InvalidInputError(path.string() + ": unsupported report schema");
  }
  LoadedReport loaded;
  CalibrationResult& r = loaded.result;
  const json& K = j.at("intrinsics");
  r.intrinsics = {K.at("fx"), K.at("fy"), K.at("cx"), K.at("cy")};
  const json& d = j.at("distortion");
  r.distortion = {d.at("k1"), d.at("k2"), d.at("k3"), d.at("k4"), d.at("k5")};
  for (const json& pj : j.at("poses")) {
    r.poses.push_back(pose_from_json(pj));
    r.pose_timestamps.push_back(pj.value("timestamp", 0.0));
  }
  r.rms_residual = j.at("residuals").at("rms").get<double>();
  r.per_line_residuals = j.at("residuals").at("per_line").get<std::vector<double>>();
  r.converged = j.value("converged", true);
  r.iterations = j.value("iterations", 0);
  loaded.metadata.tool_version = j.at("tool").at("version").get<std::string>();
  loaded.metadata.rng_seed = j.value("rng_seed", std::uint64_t(0));
  if (j.contains("input_digests")) {
    loaded.metadata.input_digests =
        j.at("input_digests").get<std::map<std::string, std::string>>();
  }
  return loaded;
}

void write_detected_lines(const std::filesystem::path& path, const DetectionResult& detection,
                          const EventCluster& cluster) {
  json pairs = json::array();
  for (const DetectedLinePair& pair : detection.pairs) {
    const int seg = pair.segment_index;
    const std::size_t size =
        seg >= 0 && seg < int(detection.segments.size())
            ? detection.segments[seg].member_events.size()
            : 0;
    pairs.push_back(json{{"segment_size", size},
                         {"start", line2d_to_json(pair.line_start)},
                         {"end", line2d_to_json(pair.line_end)}});
  }
  json diagnostics = json::array();
  for (const SegmentDiagnostic& d : detection.diagnostics) {
    diagnostics.push_back(json{{"segment", d.segment_index}, {"message", d.message}});
  }
  dump_json_file(path, json{{"schema_version", 1},
                            {"c_z", cluster.c_z},
                            {"t_start", cluster.t_start},
                            {"t_end", cluster.t_end},
                            {"events_after_denoise", detection.denoised.size()},
                            {"pairs", pairs},
                            {"diagnostics", diagnostics}});
}

void write_stereo_result(const std::filesystem::path& path, const StereoResult& result) {
  json R = json::array();
  for (int r = 0; r < 3; ++r) R.push_back({result.R_r2l(r, 0), result.R_r2l(r, 1), result.R_r2l(r, 2)});
  auto intrinsics_json = [](const CalibrationResult& c) {
    return json{{"fx", c.intrinsics.fx},
                {"fy", c.intrinsics.fy},
                {"cx", c.intrinsics.cx},
                {"cy", c.intrinsics.cy},
                {"k1", c.distortion.k1},
                {"k2", c.distortion.k2}};
  };
  dump_json_file(
      path,
      json{{"schema_version", 1},
           {"R_r2l", R},
           {"T_r2l_cm",
            {result.T_r2l_cm.x(), result.T_r2l_cm.y(), result.T_r2l_cm.z()}},
           {"rotation_angles_deg",
            {result.rotation_angles_deg.x(), result.rotation_angles_deg.y(),
             result.rotation_angles_deg.z()}},
           {"left", intrinsics_json(result.left)},
           {"right", intrinsics_json(result.right)}});
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot write " + path.string());
  out << contents;
}

std::string file_digest(const std::filesystem::path& path) {
  const std::string data = read_whole_file(path);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace evcal
