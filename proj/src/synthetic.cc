// Synthetic scenario suite. Expert logs come from a scripted pure-pursuit
// driver that runs the same bicycle model as the simulator.

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dss/geometry.h"
#include "dss/rng.h"
#include "dss/scenario.h"

namespace dss {
namespace {

constexpr double kLaneHalfWidth = 2.0;
constexpr double kLookahead = 6.0;
constexpr int kHorizon = 90;
constexpr double kCarLength = 4.5;
constexpr double kCarWidth = 2.0;

using Path = std::vector<Point2>;

// Appends 1 m-spaced samples of a straight run.
void AddStraight(Path& path, double& heading, double length) {
  Point2 p = path.back();
  const int n = static_cast<int>(std::round(length));
  for (int i = 0; i < n; ++i) {
    p = {p.x + std::cos(heading), p.y + std::sin(heading)};
    path.push_back(p);
  }
}

// Appends an arc of given radius; positive `turn` is counter-clockwise.
void AddArc(Path& path, double& heading, double radius, double length,
            double turn_sign) {
  const Point2 start = path.back();
  const double cx = start.x - turn_sign * radius * std::sin(heading);
  const double cy = start.y + turn_sign * radius * std::cos(heading);
  const double phi0 = std::atan2(start.y - cy, start.x - cx);
  const int n = static_cast<int>(std::round(length));
  for (int i = 1; i <= n; ++i) {
    const double phi = phi0 + turn_sign * static_cast<double>(i) / radius;
    path.push_back({cx + radius * std::cos(phi), cy + radius * std::sin(phi)});
  }
  heading += turn_sign * static_cast<double>(n) / radius;
}

Point2 Tangent(const Path& path, std::size_t i) {
  const std::size_t a = i == 0 ? 0 : i - 1;
  const std::size_t b = std::min(i + 1, path.size() - 1);
  const double dx = path[b].x - path[a].x;
  const double dy = path[b].y - path[a].y;
  const double n = std::hypot(dx, dy);
  return {dx / n, dy / n};
}

// Shifts each vertex along the left normal by offset(i).
template <class F>
Path Offset(const Path& path, F offset) {
  Path out;
  out.reserve(path.size());
  for (std::size_t i = 0; i < path.size(); ++i) {
    const Point2 t = Tangent(path, i);
    const double d = offset(i);
    out.push_back({path[i].x - t.y * d, path[i].y + t.x * d});
  }
  return out;
}

Path OffsetBy(const Path& path, double d) {
  return Offset(path, [d](std::size_t) { return d; });
}

Path Reversed(Path p) {
  std::reverse(p.begin(), p.end());
  return p;
}

double Heading(const Path& path, std::size_t i) {
  const Point2 t = Tangent(path, i);
  return std::atan2(t.y, t.x);
}

// Speed target as a function of (time index, current state).
using SpeedRule = std::function<double(int, const AgentState&)>;

struct Driver {
  Path path;
  std::size_t progress = 0;

  Action Control(const AgentState& s, double target_speed,
                 const VehicleParams& vp) {
    // Closest vertex, searched forward from the last one.
    double best = std::numeric_limits<double>::infinity();
    const std::size_t end = std::min(path.size(), progress + 40);
    for (std::size_t i = progress; i < end; ++i) {
      const double d = std::hypot(path[i].x - s.x, path[i].y - s.y);
      if (d < best) {
        best = d;
        progress = i;
      }
    }
    // Lookahead point along the path, extrapolated past its end.
    Point2 target = path.back();
    double walked = 0.0;
    bool found = false;
    for (std::size_t i = progress; i + 1 < path.size(); ++i) {
      const double seg = std::hypot(path[i + 1].x - path[i].x,
                                    path[i + 1].y - path[i].y);
      if (walked + seg >= kLookahead) {
        const double f = (kLookahead - walked) / seg;
        target = {path[i].x + f * (path[i + 1].x - path[i].x),
                  path[i].y + f * (path[i + 1].y - path[i].y)};
        found = true;
        break;
      }
      walked += seg;
    }
    if (!found) {
      const Point2 t = Tangent(path, path.size() - 1);
      const double rest = kLookahead - walked;
      target = {path.back().x + t.x * rest, path.back().y + t.y * rest};
    }
    const double dx = target.x - s.x;
    const double dy = target.y - s.y;
    const double ld = std::max(std::hypot(dx, dy), 1e-6);
    const double alpha = WrapAngle(std::atan2(dy, dx) - s.yaw);
    Action a;
    a.steer = std::atan(2.0 * vp.wheelbase * std::sin(alpha) / ld);
    a.accel = std::clamp(2.0 * (target_speed - s.speed), -6.0, 3.0);
    return ClampAction(a, vp);
  }
};

AgentTrack Drive(const Path& path, std::size_t start_index, double speed,
                 const SpeedRule& rule, double dt) {
  const VehicleParams vp;
  Driver driver{path, start_index};
  AgentTrack track;
  track.length = kCarLength;
  track.width = kCarWidth;
  AgentState s{path[start_index].x, path[start_index].y,
               Heading(path, start_index), speed};
  track.states.push_back(s);
  for (int t = 0; t < kHorizon; ++t) {
    const double target = rule ? rule(t, s) : speed;
    s = StepAgent(s, driver.Control(s, target, vp), dt, vp);
    track.states.push_back(s);
  }
  track.valid.assign(track.states.size(), 1);
  return track;
}

AgentTrack Parked(Point2 p, double yaw, double length) {
  AgentTrack track;
  track.length = length;
  track.width = kCarWidth;
  track.states.assign(kHorizon + 1, AgentState{p.x, p.y, yaw, 0.0});
  track.valid.assign(kHorizon + 1, 1);
  return track;
}

Polyline Line(PolylineType type, const Path& p) { return {type, p}; }

// Ego lane plus an opposing lane on its left, bounded by two road edges.
void AddTwoLaneRoad(Roadgraph& rg, const Path& center) {
  rg.polylines.push_back(Line(PolylineType::kLaneCenter, center));
  rg.polylines.push_back(Line(PolylineType::kLaneCenter,
                              Reversed(OffsetBy(center, 2 * kLaneHalfWidth))));
  rg.polylines.push_back(
      Line(PolylineType::kRoadEdge, OffsetBy(center, -kLaneHalfWidth)));
  rg.polylines.push_back(Line(PolylineType::kRoadEdge,
                              Reversed(OffsetBy(center, 3 * kLaneHalfWidth))));
}

// Lead car in the ego lane and oncoming traffic in the opposing lane.
void AddTraffic(Scenario& sc, const Path& center, std::size_t ego_start,
                double ego_speed, Rng& rng) {
  if (rng.Bernoulli(0.5)) {
    const std::size_t start = ego_start + 20 + rng.Index(20);
    const double v = ego_speed + rng.Uniform(0.5, 3.0);
    sc.tracks.push_back(Drive(center, start, v, nullptr, sc.dt));
  }
  const Path oncoming = Reversed(OffsetBy(center, 2 * kLaneHalfWidth));
  const int count = rng.Index(5);
  for (int i = 0; i < count; ++i) {
    const std::size_t start = 10 + rng.Index(static_cast<int>(
                                       oncoming.size() / 2));
    sc.tracks.push_back(
        Drive(oncoming, start, rng.Uniform(5.0, 12.0), nullptr, sc.dt));
  }
}

// Rotates and translates the whole scene.
void Transform(Scenario& sc, double angle, Point2 shift) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  auto map = [&](Point2 p) {
    return Point2{c * p.x - s * p.y + shift.x, s * p.x + c * p.y + shift.y};
  };
  for (Polyline& line : sc.roadgraph.polylines) {
    for (Point2& p : line.points) p = map(p);
  }
  for (AgentTrack& tr : sc.tracks) {
    for (AgentState& st : tr.states) {
      const Point2 q = map({st.x, st.y});
      st.x = q.x;
      st.y = q.y;
      st.yaw = WrapAngle(st.yaw + angle);
    }
  }
}

bool ExpertIsClean(const Scenario& sc) {
  SimState state = InitialState(sc);
  for (int t = 0; t <= sc.horizon; ++t) {
    for (std::size_t i = 0; i < sc.tracks.size(); ++i) {
      state.agents[i] = sc.tracks[i].states[t];
      state.valid[i] = sc.tracks[i].valid[t];
    }
    state.t = t;
    const EventLabels ev = DetectEvents(state, sc.ego_index);
    if (ev.collision || ev.offroad) return false;
  }
  return true;
}

Path MainRoad(ScenarioKind kind, Rng& rng) {
  Path path{{-30.0, 0.0}};
  double heading = 0.0;
  if (kind == ScenarioKind::kCurve) {
    AddStraight(path, heading, 30.0 + rng.Uniform(0.0, 20.0));
    const double radius = rng.Uniform(40.0, 100.0);
    const double sign = rng.Bernoulli(0.5) ? 1.0 : -1.0;
    const double arc = std::min(170.0, 0.9 * std::numbers::pi * radius);
    AddArc(path, heading, radius, arc, sign);
    AddStraight(path, heading, 40.0);
  } else {
    AddStraight(path, heading, 190.0);
  }
  return path;
}

Scenario BuildLaneScenario(ScenarioKind kind, Rng& rng) {
  Scenario sc;
  sc.roadgraph.lane_half_width = kLaneHalfWidth;
  const Path center = MainRoad(kind, rng);
  AddTwoLaneRoad(sc.roadgraph, center);
  const std::size_t ego_start = 30;  // x = 0 on the unrotated road
  const double speed = rng.Uniform(5.0, 12.0);
  sc.tracks.push_back(Drive(center, ego_start, speed, nullptr, sc.dt));
  AddTraffic(sc, center, ego_start, speed, rng);
  return sc;
}

Scenario BuildObstacleLane(Rng& rng) {
  Scenario sc;
  sc.roadgraph.lane_half_width = kLaneHalfWidth;
  const Path center = MainRoad(ScenarioKind::kStraight, rng);
  AddTwoLaneRoad(sc.roadgraph, center);
  const std::size_t ego_start = 30;
  const double speed = rng.Uniform(5.0, 12.0);
  const double travel = speed * kHorizon * sc.dt;

  // Stopped vehicles poking into the right side of the ego lane.
  std::vector<double> stations;
  const int count = 1 + rng.Index(3);
  double s = ego_start + rng.Uniform(25.0, 40.0);
  for (int i = 0; i < count && s < ego_start + travel - 10.0; ++i) {
    stations.push_back(s);
    s += rng.Uniform(28.0, 45.0);
  }
  if (stations.empty()) stations.push_back(ego_start + 0.6 * travel);
  constexpr double kObstacleOffset = -1.4;
  constexpr double kNudge = 1.2;
  auto bump = [&](std::size_t i) {
    double d = 0.0;
    for (double st : stations) {
      const double u = std::abs(static_cast<double>(i) - st);
      double w = 0.0;
      if (u <= 8.0) {
        w = 1.0;
      } else if (u < 22.0) {
        const double r = (22.0 - u) / 14.0;
        w = r * r * (3.0 - 2.0 * r);
      }
      d = std::max(d, kNudge * w);
    }
    return d;
  };
  const Path nudged = Offset(center, bump);
  sc.tracks.push_back(Drive(nudged, ego_start, speed, nullptr, sc.dt));
  for (double st : stations) {
    const std::size_t i = static_cast<std::size_t>(std::round(st));
    const Point2 t = Tangent(center, i);
    const Point2 p{center[i].x - t.y * kObstacleOffset,
                   center[i].y + t.x * kObstacleOffset};
    sc.tracks.push_back(Parked(p, Heading(center, i), rng.Uniform(4.2, 5.0)));
  }
  const Path oncoming = Reversed(OffsetBy(center, 2 * kLaneHalfWidth));
  const int cars = rng.Index(3);
  for (int i = 0; i < cars; ++i) {
    const std::size_t start = 10 + rng.Index(static_cast<int>(
                                       oncoming.size() / 2));
    sc.tracks.push_back(
        Drive(oncoming, start, rng.Uniform(5.0, 12.0), nullptr, sc.dt));
  }
  return sc;
}

// The crossing car reaches the conflict zone about when a constant-speed ego
// would; the expert yields at a stop line until it has cleared.
Scenario BuildIntersection(Rng& rng) {
  Scenario sc;
  sc.roadgraph.lane_half_width = kLaneHalfWidth;
  const double speed = rng.Uniform(6.0, 12.0);
  const double arrive = rng.Uniform(2.5, 4.0);
  const double ego_x0 = -speed * arrive;

  Path center{{ego_x0 - 30.0, 0.0}};
  double heading = 0.0;
  AddStraight(center, heading, 30.0 - ego_x0 + 160.0);
  AddTwoLaneRoad(sc.roadgraph, center);
  const std::size_t ego_start = 30;

  const double cross_speed = rng.Uniform(6.0, 10.0);
  const double cross_arrive = arrive + rng.Uniform(-0.3, 0.5);
  const double cross_y0 = -cross_speed * cross_arrive;
  Path crossing{{0.0, cross_y0 - 30.0}};
  double ch = std::numbers::pi / 2.0;
  AddStraight(crossing, ch, 30.0 - cross_y0 + 120.0);
  sc.roadgraph.polylines.push_back(Line(PolylineType::kLaneCenter, crossing));
  sc.roadgraph.polylines.push_back(
      Line(PolylineType::kRoadEdge, OffsetBy(crossing, -kLaneHalfWidth)));
  sc.roadgraph.polylines.push_back(
      Line(PolylineType::kRoadEdge, OffsetBy(crossing, kLaneHalfWidth)));
  AgentTrack crosser = Drive(crossing, 30, cross_speed, nullptr, sc.dt);

  const double stop_x = -(kCarWidth / 2 + kCarLength / 2 + 2.0);
  const double clear_y = kCarWidth / 2 + kCarLength / 2 + 1.5;
  SpeedRule yield = [&, passed = false](int t, const AgentState& s) mutable {
    const AgentState& c = crosser.states[t];
    const bool cleared = c.y > clear_y;
    passed = passed || s.x > stop_x + 0.5;
    if (cleared || passed) return speed;
    const double room = std::max(0.0, stop_x - s.x);
    return std::min(speed, std::sqrt(2.0 * 3.0 * room));
  };
  sc.tracks.push_back(Drive(center, ego_start, speed, yield, sc.dt));
  sc.tracks.push_back(std::move(crosser));
  return sc;
}

}  // namespace

std::string_view ScenarioKindName(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kStraight: return "straight";
    case ScenarioKind::kCurve: return "curve";
    case ScenarioKind::kIntersection: return "intersection";
    case ScenarioKind::kObstacleLane: return "obstacle_lane";
  }
  return "unknown";
}

ScenarioKind ParseScenarioKind(std::string_view name) {
  for (ScenarioKind k :
       {ScenarioKind::kStraight, ScenarioKind::kCurve,
        ScenarioKind::kIntersection, ScenarioKind::kObstacleLane}) {
    if (ScenarioKindName(k) == name) return k;
  }
  throw ScenarioError("unknown scenario kind: " + std::string(name));
}

Scenario GenerateSynthetic(ScenarioKind kind, std::uint64_t seed) {
  Rng rng(HashSeed({0x5ce7a410ULL, static_cast<std::uint64_t>(kind), seed}));
  for (int attempt = 0;; ++attempt) {
    Scenario sc;
    switch (kind) {
      case ScenarioKind::kStraight:
      case ScenarioKind::kCurve:
        sc = BuildLaneScenario(kind, rng);
        break;
      case ScenarioKind::kIntersection:
        sc = BuildIntersection(rng);
        break;
      case ScenarioKind::kObstacleLane:
        sc = BuildObstacleLane(rng);
        break;
    }
    sc.horizon = kHorizon;
    sc.dt = kDefaultDt;
    sc.ego_index = 0;
    Transform(sc, rng.Uniform(-std::numbers::pi, std::numbers::pi),
              {rng.Uniform(-200.0, 200.0), rng.Uniform(-200.0, 200.0)});
    sc.destination = sc.ego().LastValidPosition();
    // Retry draws whose expert log is not event-free.
    if (ExpertIsClean(sc) || attempt > 50) return sc;
  }
}

}  // namespace dss
