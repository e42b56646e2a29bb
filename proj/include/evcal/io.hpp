#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evcal/event_geometry.hpp"
#include "evcal/linear_calib.hpp"
#include "evcal/simulator.hpp"
#include "evcal/stereo.hpp"
#include "evcal/types.hpp"

namespace evcal {

inline constexpr const char* kToolVersion = "0.1.0";

enum class TimeUnit { auto_detect, seconds, microseconds };

// CSV with header x,y,t,p. Timestamps in seconds, or integer microseconds
// (auto-detected unless forced). Malformed rows are skipped and reported in
// *warnings with their line numbers; non-monotonic timestamps sort with a
// warning.
EventCluster read_events(const std::filesystem::path& path,
                         TimeUnit unit = TimeUnit::auto_detect,
                         std::vector<std::string>* warnings = nullptr);

void write_events(const std::filesystem::path& path, const EventCluster& cluster);

struct TargetModel {
  std::vector<Line3D> lines;
  bool planar = false;
  std::string units = "m";
};

TargetModel read_target_model(const std::filesystem::path& path);
void write_target_model(const std::filesystem::path& path, const TargetModel& model);

struct ReportMetadata {
  std::string tool_version = kToolVersion;
  std::uint64_t rng_seed = 0;
  std::map<std::string, std::string> input_digests;
};

void write_report(const std::filesystem::path& path, const CalibrationResult& result,
                  const ReportMetadata& metadata);

struct LoadedReport {
  CalibrationResult result;
  ReportMetadata metadata;
};

LoadedReport read_report(const std::filesystem::path& path);

void write_detected_lines(const std::filesystem::path& path, const DetectionResult& detection,
                          const EventCluster& cluster);

void write_stereo_result(const std::filesystem::path& path, const StereoResult& result);

void write_text_file(const std::filesystem::path& path, const std::string& contents);

// FNV-1a 64-bit digest of the file contents, hex encoded.
std::string file_digest(const std::filesystem::path& path);

}  // namespace evcal
