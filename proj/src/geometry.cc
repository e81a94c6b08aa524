#include "dss/geometry.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dss {
namespace {

struct Axes {
  double ux, uy;  // length direction
  double vx, vy;  // width direction
};

Axes BoxAxes(const OrientedBox& b) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  return {c, s, -s, c};
}

// Half-extent of box `b` projected on unit axis (ax, ay).
double Radius(const OrientedBox& b, const Axes& e, double ax, double ay) {
  return 0.5 * b.length * std::abs(e.ux * ax + e.uy * ay) +
         0.5 * b.width * std::abs(e.vx * ax + e.vy * ay);
}

double SegmentDistance(Point2 p, Point2 a, Point2 b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
    t = std::clamp(t, 0.0, 1.0);
  }
  const double cx = a.x + t * dx - p.x;
  const double cy = a.y + t * dy - p.y;
  return std::hypot(cx, cy);
}

}  // namespace

bool ObbOverlap(const OrientedBox& a, const OrientedBox& b) {
  const Axes ea = BoxAxes(a);
  const Axes eb = BoxAxes(b);
  const double dx = b.center.x - a.center.x;
  const double dy = b.center.y - a.center.y;
  const double axes[4][2] = {
      {ea.ux, ea.uy}, {ea.vx, ea.vy}, {eb.ux, eb.uy}, {eb.vx, eb.vy}};
  for (const auto& ax : axes) {
    const double dist = std::abs(dx * ax[0] + dy * ax[1]);
    if (dist > Radius(a, ea, ax[0], ax[1]) + Radius(b, eb, ax[0], ax[1])) {
      return false;
    }
  }
  return true;
}

OrientedBox AgentBox(const AgentState& s, double length, double width) {
  return {{s.x, s.y}, s.yaw, length, width};
}

bool CollisionFlag(const AgentState& self, int self_index,
                   const SimState& world) {
  const Scenario& sc = *world.scenario;
  const AgentTrack& me = sc.tracks[self_index];
  const OrientedBox mine = AgentBox(self, me.length, me.width);
  for (int j = 0; j < world.num_agents(); ++j) {
    if (j == self_index || !world.valid[j]) continue;
    const AgentTrack& other = sc.tracks[j];
    if (ObbOverlap(mine, AgentBox(world.agents[j], other.length,
                                  other.width))) {
      return true;
    }
  }
  return false;
}

bool CollisionFlag(const SimState& state, int agent_index) {
  if (!state.valid[agent_index]) return false;
  return CollisionFlag(state.agents[agent_index], agent_index, state);
}

double LaneCenterDistance(Point2 p, const Roadgraph& roadgraph) {
  double best = std::numeric_limits<double>::infinity();
  for (const Polyline& line : roadgraph.polylines) {
    if (line.type != PolylineType::kLaneCenter) continue;
    for (std::size_t i = 0; i + 1 < line.points.size(); ++i) {
      best = std::min(best,
                      SegmentDistance(p, line.points[i], line.points[i + 1]));
    }
  }
  return best;
}

bool OffroadFlag(const AgentState& state, double /*length*/,
                 double /*width*/, const Roadgraph& roadgraph) {
  return LaneCenterDistance({state.x, state.y}, roadgraph) >
         roadgraph.lane_half_width;
}

EventLabels DetectEvents(const AgentState& self, int self_index,
                         const SimState& world) {
  const AgentTrack& me = world.scenario->tracks[self_index];
  return {CollisionFlag(self, self_index, world),
          OffroadFlag(self, me.length, me.width, world.scenario->roadgraph)};
}

EventLabels DetectEvents(const SimState& state, int agent_index) {
  return DetectEvents(state.agents[agent_index], agent_index, state);
}

double Ade(std::span<const Point2> traj, std::span<const Point2> expert) {
  if (traj.size() != expert.size() || traj.empty()) {
    throw MetricError("Ade: trajectories must have equal, non-zero length");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    sum += std::hypot(traj[t].x - expert[t].x, traj[t].y - expert[t].y);
  }
  return sum / static_cast<double>(traj.size());
}

}  // namespace dss
