#include "dss/dynamics.h"

#include <string>

#include "dss/scenario.h"

namespace dss {

SimState InitialState(const Scenario& scenario) {
  SimState s;
  s.scenario = &scenario;
  s.t = 0;
  for (const AgentTrack& track : scenario.tracks) {
    s.agents.push_back(track.states.at(0));
    s.valid.push_back(track.valid.at(0));
  }
  return s;
}

SimState StepSim(const SimState& state, const Action& ego_action,
                 const OtherAgentMode& others, const VehicleParams& vp) {
  const Scenario& sc = *state.scenario;
  if (state.t >= sc.horizon) {
    throw DynamicsError("StepSim: episode already at its final step");
  }
  const double dt = sc.dt;
  const int ego = sc.ego_index;
  SimState next = state;
  next.t = state.t + 1;

  if (const auto* actions = std::get_if<PolicyActions>(&others)) {
    if (static_cast<int>(actions->size()) != state.num_agents()) {
      throw DynamicsError("StepSim: expected " +
                          std::to_string(state.num_agents()) +
                          " agent actions, got " +
                          std::to_string(actions->size()));
    }
    for (int i = 0; i < state.num_agents(); ++i) {
      if (i == ego || !state.valid[i]) continue;
      next.agents[i] = StepAgent(state.agents[i],
                                 ClampAction((*actions)[i], vp), dt, vp);
    }
  } else {
    for (int i = 0; i < state.num_agents(); ++i) {
      if (i == ego) continue;
      const AgentTrack& track = sc.tracks[i];
      if (next.t >= static_cast<int>(track.states.size())) {
        throw DynamicsError("StepSim: missing log entry for agent " +
                            std::to_string(i) + " at t=" +
                            std::to_string(next.t));
      }
      next.agents[i] = track.states[next.t];
      next.valid[i] = track.valid[next.t];
    }
  }
  next.agents[ego] =
      StepAgent(state.agents[ego], ClampAction(ego_action, vp), dt, vp);
  return next;
}

}  // namespace dss
