#pragma once

// Non-differentiable critics: box overlap, offroad detection and
// displacement metrics.

#include <span>
#include <stdexcept>

#include "dss/dynamics.h"
#include "dss/scenario.h"

namespace dss {

struct OrientedBox {
  Point2 center;
  double yaw = 0.0;
  double length = 1.0;
  double width = 1.0;
};

struct EventLabels {
  bool collision = false;
  bool offroad = false;
  bool operator==(const EventLabels&) const = default;
};

// Separating-axis test over the four edge normals. Touching counts.
bool ObbOverlap(const OrientedBox& a, const OrientedBox& b);

OrientedBox AgentBox(const AgentState& s, double length, double width);

// True iff `agent_index` overlaps any other valid agent in `state`.
bool CollisionFlag(const SimState& state, int agent_index);
bool CollisionFlag(const AgentState& self, int self_index,
                   const SimState& world);

// Distance from `p` to the nearest lane-center segment; +inf if the graph
// has no lane centers.
double LaneCenterDistance(Point2 p, const Roadgraph& roadgraph);

// True iff the box center lies farther than lane_half_width from every
// lane-center segment.
bool OffroadFlag(const AgentState& state, double length, double width,
                 const Roadgraph& roadgraph);

EventLabels DetectEvents(const SimState& state, int agent_index);
EventLabels DetectEvents(const AgentState& self, int self_index,
                         const SimState& world);

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mean Euclidean distance between corresponding points.
double Ade(std::span<const Point2> traj, std::span<const Point2> expert);

}  // namespace dss
