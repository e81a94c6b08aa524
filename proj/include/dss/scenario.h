#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dss/dynamics.h"

namespace dss {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

enum class PolylineType { kLaneCenter, kRoadEdge };

std::string_view PolylineTypeName(PolylineType type);

struct Polyline {
  PolylineType type = PolylineType::kLaneCenter;
  std::vector<Point2> points;
  bool operator==(const Polyline&) const = default;
};

struct Roadgraph {
  std::vector<Polyline> polylines;
  double lane_half_width = 2.0;
  bool operator==(const Roadgraph&) const = default;
};

struct AgentTrack {
  double length = 4.5;
  double width = 2.0;
  std::vector<AgentState> states;  // one per timestep 0..L
  std::vector<std::uint8_t> valid;

  bool operator==(const AgentTrack&) const = default;
  // Position at the last valid timestep.
  Point2 LastValidPosition() const;
};

struct Scenario {
  Roadgraph roadgraph;
  std::vector<AgentTrack> tracks;
  int ego_index = 0;
  double dt = kDefaultDt;
  int horizon = 90;  // L: number of steps; tracks hold L + 1 states
  Point2 destination;
  std::vector<int> traffic_lights;  // reserved, always empty

  bool operator==(const Scenario&) const = default;
  const AgentTrack& ego() const { return tracks.at(ego_index); }
};

inline constexpr int kScenarioFormatVersion = 1;
inline constexpr int kMaxAgents = 16;

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Empty result means the scenario satisfies every invariant.
std::vector<std::string> Validate(const Scenario& scenario);

std::string SerializeScenario(const Scenario& scenario);
Scenario ParseScenario(std::string_view text);
Scenario LoadScenario(const std::filesystem::path& path);
void SaveScenario(const Scenario& scenario, const std::filesystem::path& path);

enum class ScenarioKind { kStraight, kCurve, kIntersection, kObstacleLane };

std::string_view ScenarioKindName(ScenarioKind kind);
ScenarioKind ParseScenarioKind(std::string_view name);

Scenario GenerateSynthetic(ScenarioKind kind, std::uint64_t seed);

struct RoadPoint {
  Point2 point;
  double distance = 0.0;
  int polyline = 0;
  int index = 0;
};

// The `count` closest polyline vertices, nearest first (ties broken by
// polyline index, then vertex index). Short results are padded with copies
// of the farthest returned point.
std::vector<RoadPoint> NearestRoadgraphPoints(Point2 pos,
                                              const Roadgraph& roadgraph,
                                              int count);

}  // namespace dss
