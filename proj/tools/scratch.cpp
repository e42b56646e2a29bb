// Throwaway exploration harness (not installed, removed before release).
#include <chrono>
#include <cstdio>
#include <map>
#include <random>

#include "evcal/camera.hpp"
#include "evcal/event_geometry.hpp"
#include "evcal/simulator.hpp"

using namespace evcal;

static std::vector<int> relabel(const EventCluster& orig, const std::vector<int>& labels,
                                const EventCluster& filtered) {
  std::map<std::tuple<double, double, double>, int> lut;
  for (std::size_t i = 0; i < orig.size(); ++i)
    lut[{orig.events[i].x, orig.events[i].y, orig.events[i].t}] = labels[i];
  std::vector<int> out;
  for (const auto& e : filtered.events) out.push_back(lut.at({e.x, e.y, e.t}));
  return out;
}

int main(int argc, char** argv) {
  const int n_lines = argc > 1 ? atoi(argv[1]) : 5;
  const double sigma = argc > 2 ? atof(argv[2]) : 1.0;
  const double k1 = argc > 3 ? atof(argv[3]) : 0.0;
  const double cz = argc > 4 ? atof(argv[4]) : -1.0;
  const unsigned seed = argc > 5 ? atoi(argv[5]) : 42;

  SceneSampleOptions so;
  so.n_lines = n_lines;
  so.planar = true;
  so.distortion.k1 = k1;
  so.distortion.k2 = k1;
  so.min_pairwise_angle_deg = 10;
  so.min_midpoint_dist_px = 40;
  std::mt19937_64 rng(seed);
  SceneSpec scene = sample_scene(so, rng);

  MotionSpec motion;
  motion.omega = Vec3(0, 0, 1);
  motion.nu = Vec3(1, 1, 0);
  motion.duration = 0.05;

  GeneratedCluster gen = generate_cluster(scene, motion, sigma, cz, seed);
  printf("events: %zu  c_z=%g  z-extent=%g\n", gen.cluster.size(), gen.cluster.c_z,
         (gen.cluster.t_end - gen.cluster.t_start) / gen.cluster.c_z);

  // image-motion statistics
  for (int i = 0; i < n_lines; ++i) {
    const auto& [s, e] = gen.truth_lines[i];
    printf("line %d: |p move| %.1f px  |q move| %.1f px  len %.0f\n", i, (e.p - s.p).norm(),
           (e.q - s.q).norm(), (s.q - s.p).norm());
  }

  DetectParams params;
  params.boundary_band_fraction = 0.05;
  auto t0 = std::chrono::steady_clock::now();
  DetectionResult det = detect_lines(gen.cluster, params);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
  printf("denoised: %zu (removed %zu)  segments: %zu  pairs: %zu  [%lld ms]\n",
         det.denoised.size(), gen.cluster.size() - det.denoised.size(), det.segments.size(),
         det.pairs.size(), (long long)ms);
  for (auto& d : det.diagnostics) printf("  diag seg %d: %s\n", d.segment_index, d.message.c_str());

  // purity
  auto labels = relabel(gen.cluster, gen.labels, det.denoised);
  for (std::size_t s = 0; s < det.segments.size(); ++s) {
    std::map<int, int> hist;
    for (int idx : det.segments[s].member_events) hist[labels[idx]]++;
    int best = 0, total = 0, best_label = -1;
    for (auto& [l, c] : hist) {
      total += c;
      if (c > best) best = c, best_label = l;
    }
    printf("segment %zu: %d events, purity %.3f (line %d)\n", s, total, double(best) / total,
           best_label);
  }

  // match detected pairs to truth
  for (const auto& pair : det.pairs) {
    double best_angle = 1e9, best_ep = 1e9;
    int best_line = -1;
    for (int i = 0; i < n_lines; ++i) {
      const Line2D& gt = gen.truth_lines[i].first;
      double ca = std::abs(gt.direction().dot(pair.line_start.direction()));
      double ang = std::acos(std::min(1.0, ca)) * 180 / M_PI;
      double mid = std::abs(gt.signed_distance(pair.line_start.midpoint()));
      if (ang + mid < best_angle + best_ep) {
        best_angle = ang;
        best_ep = mid;
        best_line = i;
      }
    }
    const Line2D& gt = gen.truth_lines[best_line].first;
    double e1 = std::min((pair.line_start.p - gt.p).norm() + (pair.line_start.q - gt.q).norm(),
                         (pair.line_start.p - gt.q).norm() + (pair.line_start.q - gt.p).norm()) /
                2;
    printf("pair(seg %d) -> line %d: angle %.3f deg, mid-dist %.3f px, ep-err %.2f px\n",
           pair.segment_index, best_line, best_angle, best_ep, e1);
  }
  return 0;
}
