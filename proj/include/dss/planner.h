#pragma once

// Test-time search: K imagined multi-agent rollouts from the current state,
// a differentiable loss per rollout, a gradient step on the first M ego
// actions, and a softmax-weighted average of the refined actions. The
// control loop re-plans every M executed steps.

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dss/classifier.h"
#include "dss/dynamics.h"
#include "dss/grad.h"
#include "dss/policy.h"
#include "dss/scenario.h"

namespace dss {

class PlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PlanConfig {
  int rollouts = 8;  // K
  int horizon = 10;  // T, imagined steps
  int execute = 3;   // M, actions returned per plan
  // Gradient step size per action dimension (accel, steer).
  std::array<double, 2> step_size = {0.0, 0.0};
  double temperature = 0.01;
  // Per-step loss weight gamma^(t-1); 1 gives the plain average.
  double discount = 1.0;
  int grad_steps = 1;
  // Rollout 0 follows the mixture mode; the others sample.
  bool mean_first = true;
  std::uint64_t seed = 0;
  // Run the K rollouts on an OpenMP team. Results do not depend on it.
  bool parallel = true;
};

// Throws PlanError naming the first violated constraint.
void ValidatePlanConfig(const PlanConfig& cfg);

// One recurrent state per agent.
using HiddenStates = std::vector<std::vector<double>>;

HiddenStates ZeroHiddens(const PolicyParams& policy, int num_agents);

// How one rollout draws actions.
struct RolloutSpec {
  bool mean = true;
  std::uint64_t noise_seed = 0;
};

std::vector<RolloutSpec> MakeRolloutSpecs(const PlanConfig& cfg,
                                          std::uint64_t plan_index);

struct ImaginedRollout {
  int start_t = 0;
  int ego_index = 0;
  std::vector<SimState> states;     // s_0 .. s_T
  std::vector<Action> ego_actions;  // a_0 .. a_{T-1}
  // Filled only for recorded rollouts: the ego's states s_0 .. s_T and the
  // zero-valued leaves added to a_0 .. a_{M-1}, whose adjoints are the
  // action gradients.
  std::vector<AgentStateT<grad::Var>> ego;
  std::vector<ActionT<grad::Var>> leaves;
  long policy_calls = 0;
  long sim_steps = 0;

  int horizon() const { return static_cast<int>(ego_actions.size()); }
};

struct ImagineOptions {
  int horizon = 1;
  RolloutSpec spec;
  // When set, the ego branch is recorded here and `leaves` get
  // `gradient_steps` entries.
  grad::Tape* tape = nullptr;
  int gradient_steps = 0;
  // Ego actions replacing the policy's for the first prefix.size() steps.
  std::span<const Action> prefix;
  // Values of the leaves (zero when missing); lets finite differences
  // perturb exactly what the gradient is taken against.
  std::span<const Action> leaf_values;
};

// Every valid agent acts through the policy. Other agents' actions are plain
// values, so adjoints reach only the ego branch. Hidden states are copied.
ImaginedRollout ImagineRollout(const SimState& s0, const HiddenStates& hiddens,
                               const PolicyParams& policy,
                               const ImagineOptions& opts);

// Differentiable per-rollout objective.
class RolloutLoss {
 public:
  virtual ~RolloutLoss() = default;
  virtual double Evaluate(const ImaginedRollout& r, double discount) const = 0;
  // Same value, recorded on the rollout's tape.
  virtual grad::Var Record(grad::Tape& tape, const ImaginedRollout& r,
                           double discount) const = 0;
};

// Ego positions indexed by absolute timestep.
std::vector<Point2> ExpertPositions(const Scenario& sc);

// Mean squared distance between imagined ego positions s_1..s_T and the
// expert at the same absolute timesteps.
class TrackingLoss : public RolloutLoss {
 public:
  explicit TrackingLoss(std::vector<Point2> expert)
      : expert_(std::move(expert)) {}
  double Evaluate(const ImaginedRollout& r, double discount) const override;
  grad::Var Record(grad::Tape& tape, const ImaginedRollout& r,
                   double discount) const override;

 private:
  void CheckCoverage(const ImaginedRollout& r) const;
  std::vector<Point2> expert_;
};

// Average over s_1..s_T of M_c p(collision) + M_o p(offroad), where the
// gates are the boolean detectors on the imagined state (held constant) and
// the probabilities come from the frozen classifier.
class ClassifierGuidedLoss : public RolloutLoss {
 public:
  explicit ClassifierGuidedLoss(const ClassifierParams& classifier)
      : classifier_(classifier) {}
  double Evaluate(const ImaginedRollout& r, double discount) const override;
  grad::Var Record(grad::Tape& tape, const ImaginedRollout& r,
                   double discount) const override;

 private:
  const ClassifierParams& classifier_;
};

// exp(-(l_k - min l) / tau), normalized. Non-finite losses get weight 0.
std::vector<double> SoftmaxWeights(std::span<const double> losses,
                                   double temperature);

struct RolloutResult {
  bool valid = false;
  std::string error;
  double loss = 0.0;
  // Refined actions a_t - eta * g_t, clamped, for t < M.
  std::vector<Action> refined;
  std::vector<std::array<double, 2>> gradients;
  double gradient_norm = 0.0;
  bool collision = false;  // in imagination
  bool offroad = false;
};

struct PlanDiagnostics {
  long policy_calls = 0;
  long backward_calls = 0;
  long sim_steps = 0;
  int invalid_rollouts = 0;
  int collision_rollouts = 0;
  int offroad_rollouts = 0;
};

struct PlanResult {
  std::vector<Action> actions;  // M weighted, clamped actions
  std::vector<double> weights;
  std::vector<double> losses;
  std::vector<RolloutResult> rollouts;
  PlanDiagnostics diagnostics;
};

PlanResult Plan(const SimState& s0, const HiddenStates& hiddens,
                const PolicyParams& policy, const RolloutLoss& loss,
                const PlanConfig& cfg, std::uint64_t plan_index = 0);

// Same as Plan with cfg.parallel forced off.
PlanResult PlanSerial(const SimState& s0, const HiddenStates& hiddens,
                      const PolicyParams& policy, const RolloutLoss& loss,
                      const PlanConfig& cfg, std::uint64_t plan_index = 0);

// Plan with explicit rollouts; cfg.rollouts and cfg.mean_first are ignored.
PlanResult PlanWithSpecs(const SimState& s0, const HiddenStates& hiddens,
                         const PolicyParams& policy, const RolloutLoss& loss,
                         const PlanConfig& cfg,
                         std::span<const RolloutSpec> specs);

struct ControlResult {
  std::vector<AgentState> ego_states;  // s_0 .. s_L
  std::vector<Point2> trajectory;      // ego positions s_1 .. s_L
  double ade = 0.0;
  bool collision = false;
  bool offroad = false;
  int plan_calls = 0;
  long policy_calls = 0;  // inside planning
  long hidden_calls = 0;  // advancing recurrent states along the log
  long backward_calls = 0;
  // Sum over plan calls of K * N_valid * T_effective.
  long expected_policy_calls = 0;
  double plan_time_s = 0.0;
};

// Plans, executes M actions with other agents replaying their logs, and
// re-plans until the horizon. T and M shrink near the end.
ControlResult ControlLoop(const Scenario& sc, const PolicyParams& policy,
                          const RolloutLoss& loss, const PlanConfig& cfg);

// Plain policy rollout: mode-component mean at every step, other agents
// replaying their logs.
ControlResult PolicyRollout(const Scenario& sc, const PolicyParams& policy);

}  // namespace dss
