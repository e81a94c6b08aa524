#pragma once

// Kinematic bicycle model stepped at a fixed interval. All agent-level
// functions are templated on the scalar so the same code runs on plain
// doubles and on recorded grad::Var values.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "dss/grad.h"

namespace dss {

struct Scenario;

struct VehicleParams {
  double wheelbase = 2.8;
  double max_speed = 30.0;
  double min_accel = -8.0;
  double max_accel = 6.0;
  double max_steer = 0.6;
};

inline constexpr double kDefaultDt = 0.1;

template <class S>
struct AgentStateT {
  S x{};
  S y{};
  S yaw{};
  S speed{};
};
using AgentState = AgentStateT<double>;

template <class S>
struct ActionT {
  S accel{};
  S steer{};
};
using Action = ActionT<double>;

inline bool operator==(const AgentState& a, const AgentState& b) {
  return a.x == b.x && a.y == b.y && a.yaw == b.yaw && a.speed == b.speed;
}
inline bool operator==(const Action& a, const Action& b) {
  return a.accel == b.accel && a.steer == b.steer;
}

class DynamicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Number of whole turns to subtract so the result lands in (-pi, pi].
inline double WrapTurns(double theta) {
  return std::ceil((theta - std::numbers::pi) / (2.0 * std::numbers::pi));
}

inline double WrapAngle(double theta) {
  return theta - 2.0 * std::numbers::pi * WrapTurns(theta);
}

// Recorded wrap is a constant shift, so its local derivative is 1.
inline grad::Var WrapAngle(grad::Var theta) {
  const double turns = WrapTurns(theta.value());
  if (turns == 0.0) return theta;
  return theta - 2.0 * std::numbers::pi * turns;
}

template <class S>
ActionT<S> ClampAction(const ActionT<S>& a, const VehicleParams& vp) {
  return {Clamp(a.accel, vp.min_accel, vp.max_accel),
          Clamp(a.steer, -vp.max_steer, vp.max_steer)};
}

// One semi-implicit Euler step: speed first, then heading using the new
// speed, then position using the new speed and heading.
template <class S>
AgentStateT<S> StepAgent(const AgentStateT<S>& s, const ActionT<S>& a,
                         double dt, const VehicleParams& vp) {
  using std::cos;
  using std::sin;
  using std::tan;
  if (!(dt > 0.0) || !(vp.wheelbase > 0.0)) {
    throw DynamicsError("StepAgent: dt and wheelbase must be positive");
  }
  if (!std::isfinite(Value(s.x)) || !std::isfinite(Value(s.y)) ||
      !std::isfinite(Value(s.yaw)) || !std::isfinite(Value(s.speed)) ||
      !std::isfinite(Value(a.accel)) || !std::isfinite(Value(a.steer))) {
    throw DynamicsError("StepAgent: non-finite input");
  }
  AgentStateT<S> n;
  n.speed = Clamp(s.speed + a.accel * dt, 0.0, vp.max_speed);
  n.yaw = WrapAngle(s.yaw + n.speed * (dt / vp.wheelbase) * tan(a.steer));
  n.x = s.x + n.speed * cos(n.yaw) * dt;
  n.y = s.y + n.speed * sin(n.yaw) * dt;
  return n;
}

// Full world snapshot during an episode.
struct SimState {
  std::vector<AgentState> agents;
  std::vector<std::uint8_t> valid;
  int t = 0;
  const Scenario* scenario = nullptr;

  int num_agents() const { return static_cast<int>(agents.size()); }
};

// Other agents either follow their own (already chosen) actions or copy the
// logged states of the scenario.
struct ReplayLog {};
using PolicyActions = std::vector<Action>;
using OtherAgentMode = std::variant<PolicyActions, ReplayLog>;

// Initial world state from the scenario's logs at t = 0.
SimState InitialState(const Scenario& scenario);

// Advances the world one step. In PolicyActions mode the vector holds one
// action per agent; the ego entry is ignored.
SimState StepSim(const SimState& state, const Action& ego_action,
                 const OtherAgentMode& others, const VehicleParams& vp);

}  // namespace dss
