#include "dss/scenario.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace dss {

using nlohmann::json;

std::string_view PolylineTypeName(PolylineType type) {
  return type == PolylineType::kLaneCenter ? "lane_center" : "road_edge";
}

Point2 AgentTrack::LastValidPosition() const {
  for (std::size_t t = states.size(); t-- > 0;) {
    if (valid[t]) return {states[t].x, states[t].y};
  }
  return {};
}

namespace {

bool Finite(const AgentState& s) {
  return std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.yaw) &&
         std::isfinite(s.speed);
}

// Heading of polyline `line` at its first vertex.
Point2 FirstDirection(const Polyline& line) {
  const double dx = line.points[1].x - line.points[0].x;
  const double dy = line.points[1].y - line.points[0].y;
  const double n = std::hypot(dx, dy);
  return {dx / n, dy / n};
}

}  // namespace

std::vector<std::string> Validate(const Scenario& sc) {
  std::vector<std::string> v;
  auto fail = [&](std::string msg) { v.push_back(std::move(msg)); };

  if (!(sc.dt > 0.0)) fail("dt: must be positive");
  if (sc.horizon < 1) fail("horizon: must be at least 1");
  if (sc.tracks.empty()) fail("agents: at least one agent required");
  if (static_cast<int>(sc.tracks.size()) > kMaxAgents) {
    fail("agents: more than " + std::to_string(kMaxAgents) + " agents");
  }
  if (!(sc.roadgraph.lane_half_width > 0.0)) {
    fail("roadgraph.lane_half_width: must be positive");
  }
  if (!sc.traffic_lights.empty()) fail("traffic_lights: reserved, must be empty");

  int lane_centers = 0;
  for (std::size_t i = 0; i < sc.roadgraph.polylines.size(); ++i) {
    const Polyline& line = sc.roadgraph.polylines[i];
    const std::string where = "roadgraph.polylines[" + std::to_string(i) + "]";
    if (line.points.size() < 2) {
      fail(where + ".points: needs at least 2 points");
      continue;
    }
    for (std::size_t k = 0; k < line.points.size(); ++k) {
      const Point2& p = line.points[k];
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        fail(where + ".points[" + std::to_string(k) + "]: non-finite");
      }
      if (k > 0 && p == line.points[k - 1]) {
        fail(where + ".points[" + std::to_string(k) +
             "]: duplicates previous point");
      }
    }
    if (line.type == PolylineType::kLaneCenter) ++lane_centers;
  }
  if (lane_centers == 0) fail("roadgraph: no lane_center polyline");

  // Every lane center needs a road edge on each side near its start.
  const double reach = 4.0 * sc.roadgraph.lane_half_width + 1.0;
  for (std::size_t i = 0; i < sc.roadgraph.polylines.size(); ++i) {
    const Polyline& lane = sc.roadgraph.polylines[i];
    if (lane.type != PolylineType::kLaneCenter || lane.points.size() < 2 ||
        lane.points[0] == lane.points[1]) {
      continue;
    }
    const Point2 dir = FirstDirection(lane);
    const Point2 o = lane.points[0];
    bool left = false;
    bool right = false;
    for (const Polyline& edge : sc.roadgraph.polylines) {
      if (edge.type != PolylineType::kRoadEdge) continue;
      for (const Point2& p : edge.points) {
        const double dx = p.x - o.x;
        const double dy = p.y - o.y;
        if (std::hypot(dx, dy) > reach) continue;
        const double side = dir.x * dy - dir.y * dx;
        if (side > 0.0) left = true;
        if (side < 0.0) right = true;
      }
    }
    if (!left || !right) {
      fail("roadgraph.polylines[" + std::to_string(i) +
           "]: lane_center not bounded by road_edge on both sides");
    }
  }

  if (sc.ego_index < 0 ||
      sc.ego_index >= static_cast<int>(sc.tracks.size())) {
    fail("ego_index: out of range");
  }
  for (std::size_t i = 0; i < sc.tracks.size(); ++i) {
    const AgentTrack& tr = sc.tracks[i];
    const std::string where = "agents[" + std::to_string(i) + "]";
    if (!(tr.length > 0.0)) fail(where + ".length: must be positive");
    if (!(tr.width > 0.0)) fail(where + ".width: must be positive");
    if (static_cast<int>(tr.states.size()) != sc.horizon + 1) {
      fail(where + ".states: expected horizon + 1 entries");
    }
    if (tr.valid.size() != tr.states.size()) {
      fail(where + ".valid: length differs from states");
    }
    for (std::size_t t = 0; t < tr.states.size() && t < tr.valid.size(); ++t) {
      if (tr.valid[t] && !Finite(tr.states[t])) {
        fail(where + ".states[" + std::to_string(t) + "]: non-finite");
      }
    }
  }
  if (sc.ego_index >= 0 &&
      sc.ego_index < static_cast<int>(sc.tracks.size())) {
    const AgentTrack& ego = sc.ego();
    if (ego.valid.empty() || !ego.valid[0]) {
      fail("agents[ego_index].valid[0]: ego must be valid at t=0");
    }
    if (!(sc.destination == ego.LastValidPosition())) {
      fail("destination: differs from last valid ego position");
    }
  }
  return v;
}

// Serialization ---------------------------------------------------------------

std::string SerializeScenario(const Scenario& sc) {
  json j;
  j["version"] = kScenarioFormatVersion;
  j["dt"] = sc.dt;
  j["horizon"] = sc.horizon;
  j["ego_index"] = sc.ego_index;
  j["destination"] = {sc.destination.x, sc.destination.y};
  json polylines = json::array();
  for (const Polyline& line : sc.roadgraph.polylines) {
    json pts = json::array();
    for (const Point2& p : line.points) pts.push_back({p.x, p.y});
    polylines.push_back(
        {{"type", std::string(PolylineTypeName(line.type))}, {"points", pts}});
  }
  j["roadgraph"] = {{"lane_half_width", sc.roadgraph.lane_half_width},
                    {"polylines", polylines}};
  json agents = json::array();
  for (const AgentTrack& tr : sc.tracks) {
    json states = json::array();
    for (const AgentState& s : tr.states) {
      states.push_back({s.x, s.y, s.yaw, s.speed});
    }
    json valid = json::array();
    for (std::uint8_t v : tr.valid) valid.push_back(v != 0);
    agents.push_back({{"length", tr.length},
                      {"width", tr.width},
                      {"states", states},
                      {"valid", valid}});
  }
  j["agents"] = agents;
  j["traffic_lights"] = json::array();
  return j.dump(1);
}

namespace {

[[noreturn]] void SchemaError(const std::string& path, const std::string& msg) {
  throw ScenarioError("schema violation at " + path + ": " + msg);
}

const json& Field(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) SchemaError(path + "." + key, "missing");
  return *it;
}

void RejectUnknown(const json& obj, std::initializer_list<const char*> keys,
                   const std::string& path) {
  if (!obj.is_object()) SchemaError(path, "expected object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) SchemaError(path + "." + it.key(), "unknown key");
  }
}

double Number(const json& j, const std::string& path) {
  if (!j.is_number()) SchemaError(path, "expected number");
  return j.get<double>();
}

int Integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) SchemaError(path, "expected integer");
  return j.get<int>();
}

std::vector<double> Numbers(const json& j, std::size_t n,
                            const std::string& path) {
  if (!j.is_array() || j.size() != n) {
    SchemaError(path, "expected array of " + std::to_string(n) + " numbers");
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(Number(j[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

}  // namespace

Scenario ParseScenario(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ScenarioError(std::string("malformed JSON: ") + e.what());
  }
  const std::string root = "$";
  RejectUnknown(j,
                {"version", "dt", "horizon", "ego_index", "destination",
                 "roadgraph", "agents", "traffic_lights"},
                root);
  const int version = Integer(Field(j, "version", root), "$.version");
  if (version != kScenarioFormatVersion) {
    SchemaError("$.version", "unsupported version " + std::to_string(version));
  }
  Scenario sc;
  sc.dt = Number(Field(j, "dt", root), "$.dt");
  sc.horizon = Integer(Field(j, "horizon", root), "$.horizon");
  sc.ego_index = Integer(Field(j, "ego_index", root), "$.ego_index");
  const auto dest = Numbers(Field(j, "destination", root), 2, "$.destination");
  sc.destination = {dest[0], dest[1]};

  const json& rg = Field(j, "roadgraph", root);
  RejectUnknown(rg, {"lane_half_width", "polylines"}, "$.roadgraph");
  sc.roadgraph.lane_half_width =
      Number(Field(rg, "lane_half_width", "$.roadgraph"),
             "$.roadgraph.lane_half_width");
  const json& lines = Field(rg, "polylines", "$.roadgraph");
  if (!lines.is_array()) SchemaError("$.roadgraph.polylines", "expected array");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string path = "$.roadgraph.polylines[" + std::to_string(i) + "]";
    RejectUnknown(lines[i], {"type", "points"}, path);
    const json& type = Field(lines[i], "type", path);
    Polyline line;
    if (type == "lane_center") {
      line.type = PolylineType::kLaneCenter;
    } else if (type == "road_edge") {
      line.type = PolylineType::kRoadEdge;
    } else {
      SchemaError(path + ".type", "expected lane_center or road_edge");
    }
    const json& pts = Field(lines[i], "points", path);
    if (!pts.is_array()) SchemaError(path + ".points", "expected array");
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const auto p =
          Numbers(pts[k], 2, path + ".points[" + std::to_string(k) + "]");
      line.points.push_back({p[0], p[1]});
    }
    sc.roadgraph.polylines.push_back(std::move(line));
  }

  const json& agents = Field(j, "agents", root);
  if (!agents.is_array()) SchemaError("$.agents", "expected array");
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const std::string path = "$.agents[" + std::to_string(i) + "]";
    RejectUnknown(agents[i], {"length", "width", "states", "valid"}, path);
    AgentTrack tr;
    tr.length = Number(Field(agents[i], "length", path), path + ".length");
    tr.width = Number(Field(agents[i], "width", path), path + ".width");
    const json& states = Field(agents[i], "states", path);
    if (!states.is_array()) SchemaError(path + ".states", "expected array");
    for (std::size_t t = 0; t < states.size(); ++t) {
      const auto s =
          Numbers(states[t], 4, path + ".states[" + std::to_string(t) + "]");
      tr.states.push_back({s[0], s[1], s[2], s[3]});
    }
    const json& valid = Field(agents[i], "valid", path);
    if (!valid.is_array()) SchemaError(path + ".valid", "expected array");
    for (std::size_t t = 0; t < valid.size(); ++t) {
      if (!valid[t].is_boolean()) {
        SchemaError(path + ".valid[" + std::to_string(t) + "]",
                    "expected boolean");
      }
      tr.valid.push_back(valid[t].get<bool>() ? 1 : 0);
    }
    sc.tracks.push_back(std::move(tr));
  }
  const json& lights = Field(j, "traffic_lights", root);
  if (!lights.is_array() || !lights.empty()) {
    SchemaError("$.traffic_lights", "reserved; must be an empty array");
  }

  const auto violations = Validate(sc);
  if (!violations.empty()) {
    std::string msg = "invalid scenario:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw ScenarioError(msg);
  }
  return sc;
}

Scenario LoadScenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseScenario(buf.str());
}

void SaveScenario(const Scenario& scenario, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ScenarioError("cannot write " + path.string());
  out << SerializeScenario(scenario) << '\n';
  if (!out) throw ScenarioError("write failed for " + path.string());
}

// Nearest points --------------------------------------------------------------

std::vector<RoadPoint> NearestRoadgraphPoints(Point2 pos,
                                              const Roadgraph& roadgraph,
                                              int count) {
  // Bounded insertion on squared distance. Points arrive in (polyline, index)
  // order, so a strict comparison keeps earlier points first among ties.
  std::vector<RoadPoint> best;
  if (count <= 0) return best;
  best.reserve(count);
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < roadgraph.polylines.size(); ++i) {
    const auto& pts = roadgraph.polylines[i].points;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const double dx = pts[k].x - pos.x;
      const double dy = pts[k].y - pos.y;
      const double d2 = dx * dx + dy * dy;
      const bool full = static_cast<int>(best.size()) == count;
      if (full && !(d2 < worst)) continue;
      const RoadPoint rp{pts[k], d2, static_cast<int>(i), static_cast<int>(k)};
      if (full) best.pop_back();
      auto at = std::upper_bound(
          best.begin(), best.end(), d2,
          [](double v, const RoadPoint& b) { return v < b.distance; });
      best.insert(at, rp);
      if (static_cast<int>(best.size()) == count) worst = best.back().distance;
    }
  }
  for (RoadPoint& p : best) p.distance = std::sqrt(p.distance);
  if (!best.empty()) {
    const RoadPoint last = best.back();
    while (static_cast<int>(best.size()) < count) best.push_back(last);
  }
  return best;
}

}  // namespace dss
