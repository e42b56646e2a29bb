#pragma once

#include <string>
#include <vector>

#include "evcal/types.hpp"

namespace evcal {

// A segmented planar subset of the event cloud in (x, y, t/c_z) space.
struct PlaneSegment {
  std::vector<int> member_events;  // indices into the cluster
  Vec3 normal = Vec3::UnitZ();
  Vec3 centroid = Vec3::Zero();
  Vec3 v_x = Vec3::UnitX();  // in-plane axes, v_y = v_x x normal
  Vec3 v_y = Vec3::UnitY();
};

struct DetectedLinePair {
  Line2D line_start;
  Line2D line_end;
  int segment_index = -1;
};

struct DetectParams {
  int k_neighbors = 16;
  double angle_thresh_deg = 10.0;
  double dist_thresh = 2.0;  // spatial units (px-equivalent)
  int min_segment_size = 50;
  double denoise_std_ratio = 2.0;
  double boundary_band_fraction = 0.10;
  double min_temporal_extent = 3.0;   // spatial units along the time direction
  double pairing_max_angle_deg = 30;  // start/end lines beyond this are rejected
};

// Statistical outlier removal in (x, y, t/c_z) space: drops events whose mean
// k-NN distance exceeds the global mean + std_ratio * std. Preserves order.
EventCluster denoise(const EventCluster& cluster, int k, double std_ratio);

struct NormalEstimate {
  Vec3 n = Vec3::Zero();  // unit, sign-normalized to positive t (tie: positive x)
  double curvature = 0;   // lambda_min / trace
  bool degenerate = false;
};

struct NormalField {
  std::vector<NormalEstimate> estimates;
  std::vector<std::vector<int>> neighbors;  // k nearest, excluding the event itself
};

NormalField estimate_normals(const EventCluster& cluster, int k);

std::vector<PlaneSegment> segment_planes(const EventCluster& cluster, const NormalField& normals,
                                         double angle_thresh_deg, double dist_thresh,
                                         int min_size);

struct ProjectedSegment {
  std::vector<Vec2> points;       // in-plane coordinates of the member events
  std::vector<int> member_events; // cluster indices aligned with points
  Vec3 origin;                    // = segment centroid
  Vec3 v_x, v_y, normal;

  Vec3 back_project(const Vec2& p) const { return origin + p.x() * v_x + p.y() * v_y; }
  Vec2 project(const Vec3& P) const {
    const Vec3 d = P - origin;
    return {d.dot(v_x), d.dot(v_y)};
  }
};

ProjectedSegment project_segment(const EventCluster& cluster, const PlaneSegment& segment);

// A fitted line in plane coordinates with its support interval.
struct PlaneLine {
  Vec2 point = Vec2::Zero();
  Vec2 dir = Vec2::UnitX();
  double s_min = 0, s_max = 0;
};

struct BoundaryLines {
  PlaneLine low;   // temporal edge at the early side
  PlaneLine high;  // temporal edge at the late side
  double temporal_extent = 0;
  // Supporting points of each band, as indices into the projected point set
  // (= positions in the segment's member list). The back-projection refits
  // the boundary in the spatial domain from these.
  std::vector<int> low_members, high_members;
};

// time_dir is the in-plane direction along which time increases (unit).
BoundaryLines detect_boundary_lines(const std::vector<Vec2>& points, const Vec2& time_dir,
                                    double band_fraction, double min_temporal_extent);

DetectedLinePair back_project_lines(const ProjectedSegment& frame, const BoundaryLines& boundary,
                                    const EventCluster& cluster, int segment_index = -1);

struct SegmentDiagnostic {
  int segment_index = -1;
  std::string message;
};

struct DetectionResult {
  std::vector<DetectedLinePair> pairs;
  std::vector<PlaneSegment> segments;        // aligned with pair.segment_index
  std::vector<SegmentDiagnostic> diagnostics;
  EventCluster denoised;
};

// Full pipeline: denoise, normals, plane segmentation, per-segment projection
// and boundary detection, back-projection to the two time slices.
// Per-segment failures land in diagnostics; the rest of the result is kept.
DetectionResult detect_lines(const EventCluster& cluster, const DetectParams& params = {});

}  // namespace evcal
