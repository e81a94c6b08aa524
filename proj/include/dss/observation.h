#pragma once

// Body-frame featurization shared by the policy and the event classifier.
//
// Layout (all spatial features in the observing agent's frame):
//   [0]                      own speed
//   [1, 2]                   destination
//   [3, 3 + 2R)              R nearest roadgraph vertices
//   [3 + 2R, 3 + 2R + 5A)    A nearest agents: dx, dy, speed, heading delta,
//                            validity (padded slots are all zero)

#include <algorithm>
#include <cmath>
#include <vector>

#include "dss/dynamics.h"
#include "dss/grad.h"
#include "dss/scenario.h"

namespace dss {

struct ObsConfig {
  int roadgraph_points = 16;
  int neighbors = 8;

  int size() const { return 3 + 2 * roadgraph_points + 5 * neighbors; }
  int roadgraph_offset() const { return 3; }
  int neighbor_offset() const { return 3 + 2 * roadgraph_points; }
  bool operator==(const ObsConfig&) const = default;
};

template <class S>
struct ObservationT {
  std::vector<S> features;
};
using Observation = ObservationT<double>;

// A constant carried by the same representation as `like`.
inline double Lift(double /*like*/, double v) { return v; }
inline grad::Var Lift(const grad::Var& like, double v) {
  return grad::MakeConstant(*like.tape(), v);
}

// Where each agent is heading: the ego uses the scenario destination, other
// agents the end of their own log.
inline Point2 DestinationOf(const Scenario& sc, int agent) {
  return agent == sc.ego_index ? sc.destination
                               : sc.tracks[agent].LastValidPosition();
}

// `self` overrides world.agents[self_index], so the observing agent's state
// may be recorded while everyone else is plain.
template <class S>
ObservationT<S> Observe(const AgentStateT<S>& self, int self_index,
                        const SimState& world, const ObsConfig& cfg) {
  using std::cos;
  using std::sin;
  const Scenario& sc = *world.scenario;
  const double sx = Value(self.x);
  const double sy = Value(self.y);
  const S c = cos(self.yaw);
  const S s = sin(self.yaw);

  ObservationT<S> obs;
  obs.features.reserve(cfg.size());
  auto push_local = [&](double px, double py) {
    const S dx = px - self.x;
    const S dy = py - self.y;
    obs.features.push_back(c * dx + s * dy);
    obs.features.push_back(c * dy - s * dx);
  };

  obs.features.push_back(self.speed);
  const Point2 dest = DestinationOf(sc, self_index);
  push_local(dest.x, dest.y);

  for (const RoadPoint& rp : NearestRoadgraphPoints(
           {sx, sy}, sc.roadgraph, cfg.roadgraph_points)) {
    push_local(rp.point.x, rp.point.y);
  }

  struct Near {
    double d2;
    int index;
  };
  std::vector<Near> near;
  for (int j = 0; j < world.num_agents(); ++j) {
    if (j == self_index || !world.valid[j]) continue;
    const double dx = world.agents[j].x - sx;
    const double dy = world.agents[j].y - sy;
    near.push_back({dx * dx + dy * dy, j});
  }
  std::sort(near.begin(), near.end(), [](const Near& a, const Near& b) {
    return a.d2 != b.d2 ? a.d2 < b.d2 : a.index < b.index;
  });
  for (int k = 0; k < cfg.neighbors; ++k) {
    if (k < static_cast<int>(near.size())) {
      const AgentState& o = world.agents[near[k].index];
      push_local(o.x, o.y);
      obs.features.push_back(Lift(self.x, o.speed));
      obs.features.push_back(WrapAngle(o.yaw - self.yaw));
      obs.features.push_back(Lift(self.x, 1.0));
    } else {
      for (int f = 0; f < 5; ++f) obs.features.push_back(Lift(self.x, 0.0));
    }
  }
  return obs;
}

inline Observation Observe(const SimState& state, int agent_index,
                           const ObsConfig& cfg) {
  return Observe(state.agents[agent_index], agent_index, state, cfg);
}

}  // namespace dss
