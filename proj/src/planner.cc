#include "dss/planner.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "dss/geometry.h"
#include "dss/observation.h"
#include "dss/rng.h"

namespace dss {

void ValidatePlanConfig(const PlanConfig& cfg) {
  if (cfg.rollouts < 1) throw PlanError("rollouts must be at least 1");
  if (cfg.horizon < 1) throw PlanError("horizon must be at least 1");
  if (cfg.execute < 1 || cfg.execute > cfg.horizon) {
    throw PlanError("execute must lie in [1, horizon]");
  }
  if (!(cfg.step_size[0] >= 0.0) || !(cfg.step_size[1] >= 0.0)) {
    throw PlanError("step_size must be non-negative");
  }
  if (!(cfg.temperature > 0.0)) throw PlanError("temperature must be positive");
  if (!(cfg.discount > 0.0 && cfg.discount <= 1.0)) {
    throw PlanError("discount must lie in (0, 1]");
  }
  if (cfg.grad_steps < 1) throw PlanError("grad_steps must be at least 1");
}

HiddenStates ZeroHiddens(const PolicyParams& policy, int num_agents) {
  return HiddenStates(num_agents,
                      std::vector<double>(policy.config.hidden, 0.0));
}

std::vector<RolloutSpec> MakeRolloutSpecs(const PlanConfig& cfg,
                                          std::uint64_t plan_index) {
  std::vector<RolloutSpec> specs(cfg.rollouts);
  for (int k = 0; k < cfg.rollouts; ++k) {
    specs[k].mean = cfg.mean_first && k == 0;
    specs[k].noise_seed =
        HashSeed({cfg.seed, plan_index, static_cast<std::uint64_t>(k)});
  }
  return specs;
}

namespace {

// Mode mean or a sampled component, drawing from `rng` in the same order
// whichever representation the mixture is in.
template <class S>
ActionT<S> ChooseAction(const MixtureT<S>& mix, const Mixture& values,
                        bool mean, Rng& rng, const VehicleParams& vp) {
  if (mean) return MeanAction(mix, vp);
  const int c = DrawComponent(values, rng.Uniform());
  const double n0 = rng.Normal();
  const double n1 = rng.Normal();
  return SampleAction(mix, c, {n0, n1}, vp);
}

}  // namespace

ImaginedRollout ImagineRollout(const SimState& s0, const HiddenStates& hiddens,
                               const PolicyParams& policy,
                               const ImagineOptions& opts) {
  if (opts.horizon < 1) throw PlanError("imagination horizon must be >= 1");
  if (opts.gradient_steps > opts.horizon ||
      static_cast<int>(opts.prefix.size()) > opts.horizon ||
      static_cast<int>(opts.leaf_values.size()) > opts.gradient_steps) {
    throw PlanError("gradient steps and prefix must fit in the horizon");
  }
  if (opts.gradient_steps > 0 && opts.tape == nullptr) {
    throw PlanError("gradients need a tape");
  }
  if (static_cast<int>(hiddens.size()) != s0.num_agents()) {
    throw PlanError("one hidden state per agent is required");
  }
  const Scenario& sc = *s0.scenario;
  const VehicleParams& vp = policy.config.vehicle;
  const ObsConfig& oc = policy.config.obs;
  const int n = s0.num_agents();
  const int ego = sc.ego_index;
  grad::Tape* tape = opts.tape;

  ImaginedRollout r;
  r.start_t = s0.t;
  r.ego_index = ego;
  r.states.reserve(opts.horizon + 1);
  r.states.push_back(s0);
  HiddenStates h = hiddens;
  std::vector<grad::Var> ego_hidden;
  if (tape != nullptr) {
    const AgentState& e = s0.agents[ego];
    r.ego.push_back({grad::MakeConstant(*tape, e.x),
                     grad::MakeConstant(*tape, e.y),
                     grad::MakeConstant(*tape, e.yaw),
                     grad::MakeConstant(*tape, e.speed)});
    for (double v : h[ego]) ego_hidden.push_back(grad::MakeConstant(*tape, v));
  }
  Rng rng(opts.spec.noise_seed);
  PolicyActions actions(n);

  for (int t = 0; t < opts.horizon; ++t) {
    const SimState& s = r.states.back();
    Action ego_action;
    ActionT<grad::Var> ego_recorded;
    for (int j = 0; j < n; ++j) {
      if (!s.valid[j]) continue;
      ++r.policy_calls;
      if (j == ego && tape != nullptr) {
        const auto obs = Observe(r.ego.back(), ego, s, oc);
        auto out = PolicyStep(*tape, policy, ego_hidden, obs);
        ego_hidden = std::move(out.hidden);
        ego_recorded = ChooseAction(out.mixture, ValueOf(out.mixture),
                                    opts.spec.mean, rng, vp);
        continue;
      }
      const PolicyOutput out = PolicyStep(policy, h[j], Observe(s, j, oc));
      h[j] = out.hidden;
      const Action a =
          ChooseAction(out.mixture, out.mixture, opts.spec.mean, rng, vp);
      if (j == ego) {
        ego_action = a;
      } else {
        actions[j] = a;
      }
    }

    if (t < static_cast<int>(opts.prefix.size())) {
      ego_action = ClampAction(opts.prefix[t], vp);
      if (tape != nullptr) {
        ego_recorded = {grad::MakeConstant(*tape, ego_action.accel),
                        grad::MakeConstant(*tape, ego_action.steer)};
      }
    }
    if (tape != nullptr) {
      if (t < opts.gradient_steps) {
        const Action v = t < static_cast<int>(opts.leaf_values.size())
                             ? opts.leaf_values[t]
                             : Action{};
        const ActionT<grad::Var> leaf{grad::MakeVariable(*tape, v.accel),
                                      grad::MakeVariable(*tape, v.steer)};
        r.leaves.push_back(leaf);
        // Not re-clamped: the leaf must carry a gradient at the bounds.
        ego_recorded = {ego_recorded.accel + leaf.accel,
                        ego_recorded.steer + leaf.steer};
      }
      ego_action = {ego_recorded.accel.value(), ego_recorded.steer.value()};
      r.ego.push_back(StepAgent(r.ego.back(), ego_recorded, sc.dt, vp));
    }
    r.ego_actions.push_back(ego_action);
    SimState next = StepSim(s, ego_action, actions, vp);
    ++r.sim_steps;
    if (tape != nullptr) {
      const auto& e = r.ego.back();
      next.agents[ego] = {e.x.value(), e.y.value(), e.yaw.value(),
                          e.speed.value()};
    }
    r.states.push_back(std::move(next));
  }
  return r;
}

// Losses ---------------------------------------------------------------------

std::vector<Point2> ExpertPositions(const Scenario& sc) {
  std::vector<Point2> out;
  for (const AgentState& s : sc.ego().states) out.push_back({s.x, s.y});
  return out;
}

namespace {

template <class S>
S SquaredDistance(const AgentStateT<S>& s, Point2 p) {
  const S dx = s.x - p.x;
  const S dy = s.y - p.y;
  return dx * dx + dy * dy;
}

}  // namespace

void TrackingLoss::CheckCoverage(const ImaginedRollout& r) const {
  if (r.start_t + r.horizon() >= static_cast<int>(expert_.size())) {
    throw PlanError("tracking loss: imagination runs past the expert log");
  }
}

double TrackingLoss::Evaluate(const ImaginedRollout& r,
                              double discount) const {
  CheckCoverage(r);
  const int T = r.horizon();
  double total = 0.0;
  double w = 1.0;
  for (int t = 1; t <= T; ++t) {
    total += w * SquaredDistance(r.states[t].agents[r.ego_index],
                                 expert_[r.start_t + t]);
    w *= discount;
  }
  return total / T;
}

grad::Var TrackingLoss::Record(grad::Tape& /*tape*/,
                               const ImaginedRollout& r,
                               double discount) const {
  CheckCoverage(r);
  if (static_cast<int>(r.ego.size()) != r.horizon() + 1) {
    throw PlanError("tracking loss: rollout was not recorded");
  }
  const int T = r.horizon();
  std::vector<grad::Var> terms;
  double w = 1.0;
  for (int t = 1; t <= T; ++t) {
    terms.push_back(w * SquaredDistance(r.ego[t], expert_[r.start_t + t]));
    w *= discount;
  }
  if (terms.size() == 1) return terms[0] / static_cast<double>(T);
  return grad::Sum(terms) / static_cast<double>(T);
}

double ClassifierGuidedLoss::Evaluate(const ImaginedRollout& r,
                                      double discount) const {
  const int T = r.horizon();
  double total = 0.0;
  double w = 1.0;
  for (int t = 1; t <= T; ++t) {
    const EventLabels gates = DetectEvents(r.states[t], r.ego_index);
    if (gates.collision || gates.offroad) {
      const EventProbabilities p = ClassifierPredict(
          classifier_, Observe(r.states[t], r.ego_index,
                               classifier_.config.obs));
      if (gates.collision) total += w * p.collision;
      if (gates.offroad) total += w * p.offroad;
    }
    w *= discount;
  }
  return total / T;
}

grad::Var ClassifierGuidedLoss::Record(grad::Tape& tape,
                                       const ImaginedRollout& r,
                                       double discount) const {
  if (static_cast<int>(r.ego.size()) != r.horizon() + 1) {
    throw PlanError("guided loss: rollout was not recorded");
  }
  const int T = r.horizon();
  std::vector<grad::Var> terms;
  double w = 1.0;
  for (int t = 1; t <= T; ++t) {
    const EventLabels gates = DetectEvents(r.states[t], r.ego_index);
    if (gates.collision || gates.offroad) {
      const auto obs = Observe(r.ego[t], r.ego_index, r.states[t],
                               classifier_.config.obs);
      const auto p = ClassifierPredict(tape, classifier_, obs);
      if (gates.collision) terms.push_back(w * p[0]);
      if (gates.offroad) terms.push_back(w * p[1]);
    }
    w *= discount;
  }
  if (terms.empty()) return grad::MakeConstant(tape, 0.0);
  if (terms.size() == 1) return terms[0] / static_cast<double>(T);
  return grad::Sum(terms) / static_cast<double>(T);
}

std::vector<double> SoftmaxWeights(std::span<const double> losses,
                                   double temperature) {
  if (!(temperature > 0.0)) throw PlanError("temperature must be positive");
  double lowest = std::numeric_limits<double>::infinity();
  for (double l : losses) {
    if (std::isfinite(l)) lowest = std::min(lowest, l);
  }
  if (!std::isfinite(lowest)) throw PlanError("no rollout has a finite loss");
  std::vector<double> w(losses.size(), 0.0);
  double sum = 0.0;
  for (std::size_t k = 0; k < losses.size(); ++k) {
    if (!std::isfinite(losses[k])) continue;
    w[k] = std::exp(-(losses[k] - lowest) / temperature);
    sum += w[k];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Planning -------------------------------------------------------------------

namespace {

struct RolloutWork {
  RolloutResult result;
  long policy_calls = 0;
  long backward_calls = 0;
  long sim_steps = 0;
};

void MarkEvents(const ImaginedRollout& r, RolloutResult& out) {
  for (std::size_t t = 1; t < r.states.size(); ++t) {
    const EventLabels e = DetectEvents(r.states[t], r.ego_index);
    out.collision = out.collision || e.collision;
    out.offroad = out.offroad || e.offroad;
  }
}

RolloutWork RunRollout(const SimState& s0, const HiddenStates& hiddens,
                       const PolicyParams& policy, const RolloutLoss& loss,
                       const PlanConfig& cfg, const RolloutSpec& spec) {
  RolloutWork work;
  RolloutResult& res = work.result;
  const VehicleParams& vp = policy.config.vehicle;
  const int m = cfg.execute;
  const bool refine = cfg.step_size[0] > 0.0 || cfg.step_size[1] > 0.0;
  try {
    if (!refine) {
      ImagineOptions opts;
      opts.horizon = cfg.horizon;
      opts.spec = spec;
      const ImaginedRollout r = ImagineRollout(s0, hiddens, policy, opts);
      work.policy_calls += r.policy_calls;
      work.sim_steps += r.sim_steps;
      res.loss = loss.Evaluate(r, cfg.discount);
      res.refined.assign(r.ego_actions.begin(), r.ego_actions.begin() + m);
      res.gradients.assign(m, {0.0, 0.0});
      MarkEvents(r, res);
    } else {
      std::vector<Action> prefix;
      // Reused across rollouts on this thread to keep its capacity.
      thread_local grad::Tape tape;
      for (int step = 0; step < cfg.grad_steps; ++step) {
        tape.Reset();
        ImagineOptions opts;
        opts.horizon = cfg.horizon;
        opts.spec = spec;
        opts.tape = &tape;
        opts.gradient_steps = m;
        opts.prefix = prefix;
        const ImaginedRollout r = ImagineRollout(s0, hiddens, policy, opts);
        work.policy_calls += r.policy_calls;
        work.sim_steps += r.sim_steps;
        const grad::Var l = loss.Record(tape, r, cfg.discount);
        res.loss = l.value();
        const grad::Adjoints adj = tape.Backward(l.ref());
        ++work.backward_calls;
        res.refined.resize(m);
        res.gradients.resize(m);
        double norm2 = 0.0;
        for (int t = 0; t < m; ++t) {
          const double ga = adj[r.leaves[t].accel.ref()];
          const double gs = adj[r.leaves[t].steer.ref()];
          res.gradients[t] = {ga, gs};
          norm2 += ga * ga + gs * gs;
          const Action& a = r.ego_actions[t];
          res.refined[t] = ClampAction(
              Action{a.accel - cfg.step_size[0] * ga,
                     a.steer - cfg.step_size[1] * gs},
              vp);
        }
        res.gradient_norm = std::sqrt(norm2);
        if (step + 1 == cfg.grad_steps) {
          res.collision = res.offroad = false;
          MarkEvents(r, res);
        }
        prefix = res.refined;
      }
    }
    if (!std::isfinite(res.loss) || !std::isfinite(res.gradient_norm)) {
      throw PlanError("non-finite loss or gradient");
    }
    res.valid = true;
  } catch (const std::exception& e) {
    res.valid = false;
    res.error = e.what();
  }
  return work;
}

}  // namespace

PlanResult PlanWithSpecs(const SimState& s0, const HiddenStates& hiddens,
                         const PolicyParams& policy, const RolloutLoss& loss,
                         const PlanConfig& cfg,
                         std::span<const RolloutSpec> specs) {
  ValidatePlanConfig(cfg);
  if (specs.empty()) throw PlanError("at least one rollout is required");
  const int k_count = static_cast<int>(specs.size());
  std::vector<RolloutWork> work(k_count);

#pragma omp parallel for schedule(dynamic) if (cfg.parallel)
  for (int k = 0; k < k_count; ++k) {
    work[k] = RunRollout(s0, hiddens, policy, loss, cfg, specs[k]);
  }

  PlanResult out;
  out.losses.resize(k_count);
  for (int k = 0; k < k_count; ++k) {
    const RolloutWork& w = work[k];
    out.diagnostics.policy_calls += w.policy_calls;
    out.diagnostics.backward_calls += w.backward_calls;
    out.diagnostics.sim_steps += w.sim_steps;
    if (!w.result.valid) {
      ++out.diagnostics.invalid_rollouts;
      out.losses[k] = std::numeric_limits<double>::quiet_NaN();
    } else {
      out.losses[k] = w.result.loss;
      out.diagnostics.collision_rollouts += w.result.collision;
      out.diagnostics.offroad_rollouts += w.result.offroad;
    }
    out.rollouts.push_back(w.result);
  }
  if (out.diagnostics.invalid_rollouts == k_count) {
    throw PlanError("all rollouts are invalid; first error: " +
                    out.rollouts[0].error);
  }
  out.weights = SoftmaxWeights(out.losses, cfg.temperature);
  const VehicleParams& vp = policy.config.vehicle;
  for (int t = 0; t < cfg.execute; ++t) {
    Action a;
    bool first = true;
    for (int k = 0; k < k_count; ++k) {
      if (!out.rollouts[k].valid) continue;
      const Action term{out.weights[k] * out.rollouts[k].refined[t].accel,
                        out.weights[k] * out.rollouts[k].refined[t].steer};
      if (first) {
        a = term;
        first = false;
      } else {
        a.accel += term.accel;
        a.steer += term.steer;
      }
    }
    out.actions.push_back(ClampAction(a, vp));
  }
  return out;
}

PlanResult Plan(const SimState& s0, const HiddenStates& hiddens,
                const PolicyParams& policy, const RolloutLoss& loss,
                const PlanConfig& cfg, std::uint64_t plan_index) {
  ValidatePlanConfig(cfg);
  const auto specs = MakeRolloutSpecs(cfg, plan_index);
  return PlanWithSpecs(s0, hiddens, policy, loss, cfg, specs);
}

PlanResult PlanSerial(const SimState& s0, const HiddenStates& hiddens,
                      const PolicyParams& policy, const RolloutLoss& loss,
                      const PlanConfig& cfg, std::uint64_t plan_index) {
  PlanConfig serial = cfg;
  serial.parallel = false;
  return Plan(s0, hiddens, policy, loss, serial, plan_index);
}

// Control loop ----------------------------------------------------------------

namespace {

void AdvanceHiddens(const SimState& s, const PolicyParams& policy,
                    HiddenStates& h, long& calls) {
  for (int j = 0; j < s.num_agents(); ++j) {
    if (!s.valid[j]) continue;
    h[j] = PolicyStep(policy, h[j], Observe(s, j, policy.config.obs)).hidden;
    ++calls;
  }
}

void Finish(const Scenario& sc, ControlResult& res) {
  const std::vector<Point2> expert = ExpertPositions(sc);
  res.ade = Ade(res.trajectory,
                std::span<const Point2>(expert).subspan(1, sc.horizon));
}

void Record(const SimState& s, ControlResult& res) {
  const AgentState& e = s.agents[s.scenario->ego_index];
  res.ego_states.push_back(e);
  if (s.t == 0) return;
  res.trajectory.push_back({e.x, e.y});
  const EventLabels ev = DetectEvents(s, s.scenario->ego_index);
  res.collision = res.collision || ev.collision;
  res.offroad = res.offroad || ev.offroad;
}

}  // namespace

ControlResult ControlLoop(const Scenario& sc, const PolicyParams& policy,
                          const RolloutLoss& loss, const PlanConfig& cfg) {
  ValidatePlanConfig(cfg);
  const auto start = std::chrono::steady_clock::now();
  ControlResult res;
  SimState s = InitialState(sc);
  HiddenStates h = ZeroHiddens(policy, s.num_agents());
  Record(s, res);
  while (s.t < sc.horizon) {
    PlanConfig step_cfg = cfg;
    step_cfg.horizon = std::min(cfg.horizon, sc.horizon - s.t);
    step_cfg.execute = std::min(cfg.execute, step_cfg.horizon);
    const PlanResult plan = Plan(s, h, policy, loss, step_cfg, res.plan_calls);
    long valid = 0;
    for (std::uint8_t v : s.valid) valid += v;
    const bool refine = cfg.step_size[0] > 0.0 || cfg.step_size[1] > 0.0;
    res.expected_policy_calls += static_cast<long>(step_cfg.rollouts) *
                                 valid * step_cfg.horizon *
                                 (refine ? step_cfg.grad_steps : 1);
    ++res.plan_calls;
    res.policy_calls += plan.diagnostics.policy_calls;
    res.backward_calls += plan.diagnostics.backward_calls;
    for (const Action& a : plan.actions) {
      AdvanceHiddens(s, policy, h, res.hidden_calls);
      s = StepSim(s, a, ReplayLog{}, policy.config.vehicle);
      Record(s, res);
    }
  }
  Finish(sc, res);
  res.plan_time_s = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - start)
                        .count();
  return res;
}

ControlResult PolicyRollout(const Scenario& sc, const PolicyParams& policy) {
  ControlResult res;
  SimState s = InitialState(sc);
  HiddenStates h = ZeroHiddens(policy, s.num_agents());
  const int ego = sc.ego_index;
  Record(s, res);
  while (s.t < sc.horizon) {
    const PolicyOutput out =
        PolicyStep(policy, h[ego], Observe(s, ego, policy.config.obs));
    h[ego] = out.hidden;
    ++res.policy_calls;
    s = StepSim(s, MeanAction(out.mixture, policy.config.vehicle), ReplayLog{},
                policy.config.vehicle);
    Record(s, res);
  }
  Finish(sc, res);
  return res;
}

}  // namespace dss
