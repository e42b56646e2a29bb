#pragma once

// Shared fixtures for the test suites: deterministic scenes and clusters plus
// label bookkeeping across the denoise filter.

#include <map>
#include <random>
#include <tuple>
#include <vector>

#include "evcal/event_geometry.hpp"
#include "evcal/simulator.hpp"

namespace evcal::test {

// z-extent used by the detection tests: 0.05 s mapped to 400 spatial units.
inline constexpr double kDetectCz = 0.05 / 400.0;

inline SceneSpec detection_scene(int n_lines, double k1, unsigned seed, bool planar = true) {
  SceneSampleOptions options;
  options.n_lines = n_lines;
  options.planar = planar;
  options.min_pairwise_angle_deg = 10;
  options.min_midpoint_dist_px = 40;
  options.distortion.k1 = k1;
  options.distortion.k2 = k1;
  std::mt19937_64 rng(seed);
  return sample_scene(options, rng);
}

inline MotionSpec paper_motion() {
  MotionSpec motion;
  motion.omega = Vec3(0, 0, 1);
  motion.nu = Vec3(1, 1, 0);
  motion.duration = 0.05;
  return motion;
}

inline DetectParams detection_params() {
  DetectParams params;
  params.boundary_band_fraction = 0.05;
  params.denoise_std_ratio = 3.0;
  return params;
}

// Generating-line label for each event of a filtered cluster, looked up by
// exact coordinates in the original.
inline std::vector<int> relabel(const EventCluster& original, const std::vector<int>& labels,
                                const EventCluster& filtered) {
  std::map<std::tuple<double, double, double>, int> lut;
  for (std::size_t i = 0; i < original.size(); ++i) {
    lut[{original.events[i].x, original.events[i].y, original.events[i].t}] = labels[i];
  }
  std::vector<int> out;
  out.reserve(filtered.size());
  for (const Event& e : filtered.events) out.push_back(lut.at({e.x, e.y, e.t}));
  return out;
}

struct SegmentStats {
  double purity = 0;  // fraction of members from the dominant line
  int dominant_line = -1;
};

inline SegmentStats segment_stats(const PlaneSegment& segment, const std::vector<int>& labels) {
  std::map<int, int> hist;
  for (int idx : segment.member_events) hist[labels[idx]]++;
  SegmentStats stats;
  int total = 0, best = 0;
  for (const auto& [label, count] : hist) {
    total += count;
    if (count > best) {
      best = count;
      stats.dominant_line = label;
    }
  }
  stats.purity = total > 0 ? double(best) / total : 0.0;
  return stats;
}

inline double line_angle_deg(const Line2D& a, const Line2D& b) {
  const double d = std::abs(a.direction().dot(b.direction()));
  return std::acos(std::min(1.0, d)) * 180.0 / M_PI;
}

// A ground-truth line counts as recovered when some detected pair matches it
// in angle and perpendicular offset at the start slice.
inline bool truth_recovered(const std::pair<Line2D, Line2D>& truth,
                            const std::vector<DetectedLinePair>& pairs,
                            double angle_gate_deg = 5.0, double dist_gate_px = 5.0) {
  for (const DetectedLinePair& pr : pairs) {
    if (line_angle_deg(truth.first, pr.line_start) < angle_gate_deg &&
        std::abs(truth.first.signed_distance(pr.line_start.midpoint())) < dist_gate_px) {
      return true;
    }
  }
  return false;
}

}  // namespace evcal::test
