#include "dss/policy.h"

#include <cmath>
#include <limits>

#include "dss/checkpoint.h"
#include "dss/rng.h"

namespace dss {

using nlohmann::json;

PolicyLayout MakePolicyLayout(const PolicyConfig& cfg) {
  PolicyLayout l;
  std::size_t cursor = 0;
  const int w = cfg.encoder_width;
  const int h = cfg.hidden;
  l.encoder1 = nn::AddDense(cursor, "encoder1", w, cfg.obs.size());
  l.encoder2 = nn::AddDense(cursor, "encoder2", w, w);
  l.update_gate = nn::AddDense(cursor, "update_gate", h, w + h);
  l.reset_gate = nn::AddDense(cursor, "reset_gate", h, w + h);
  l.candidate = nn::AddDense(cursor, "candidate", h, w + h);
  l.head = nn::AddDense(cursor, "head", 5 * kComponents, h);
  l.total = cursor;
  return l;
}

PolicyParams PolicyParams::Zeros(const PolicyConfig& cfg) {
  return {cfg, std::vector<double>(MakePolicyLayout(cfg).total, 0.0)};
}

PolicyParams PolicyParams::Initialize(const PolicyConfig& cfg,
                                      std::uint64_t seed) {
  PolicyParams p = Zeros(cfg);
  const PolicyLayout l = MakePolicyLayout(cfg);
  std::uint64_t k = 0;
  for (const nn::Dense* d : l.layers()) {
    const double gain = d == &l.head ? 0.1 : 1.0;
    nn::InitDense(*d, p.values, HashSeed({seed, k++}), gain);
  }
  // Initial spread: softplus(b) = 0.1 in scaled units.
  const double raw_std = std::log(std::exp(0.1) - 1.0);
  for (int i = 3 * kComponents; i < 5 * kComponents; ++i) {
    p.values[l.head.bias + i] = raw_std;
  }
  return p;
}

Mixture ValueOf(const MixtureT<grad::Var>& m) {
  Mixture out;
  for (int k = 0; k < kComponents; ++k) {
    out.logits[k] = m.logits[k].value();
    for (int d = 0; d < 2; ++d) {
      out.means[k][d] = m.means[k][d].value();
      out.stds[k][d] = m.stds[k][d].value();
    }
  }
  return out;
}

std::array<double, kComponents> ComponentProbabilities(const Mixture& mix) {
  double top = mix.logits[0];
  for (double l : mix.logits) top = std::max(top, l);
  std::array<double, kComponents> p{};
  double sum = 0.0;
  for (int k = 0; k < kComponents; ++k) {
    p[k] = std::exp(mix.logits[k] - top);
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

void CheckFinite(const Mixture& m, std::span<const double> hidden) {
  bool ok = true;
  for (int k = 0; k < kComponents; ++k) {
    ok = ok && std::isfinite(m.logits[k]);
    for (int d = 0; d < 2; ++d) {
      ok = ok && std::isfinite(m.means[k][d]) && std::isfinite(m.stds[k][d]);
    }
  }
  for (double h : hidden) ok = ok && std::isfinite(h);
  if (!ok) throw PolicyError("policy produced a non-finite output");
}

void CheckInputs(const PolicyParams& params, std::size_t hidden,
                 std::size_t features) {
  if (static_cast<int>(hidden) != params.config.hidden ||
      static_cast<int>(features) != params.config.obs.size()) {
    throw PolicyError("policy input has the wrong dimension");
  }
}

}  // namespace

PolicyOutput PolicyStep(const PolicyParams& params,
                        std::span<const double> hidden,
                        const Observation& obs) {
  CheckInputs(params, hidden.size(), obs.features.size());
  const PolicyLayout layout = MakePolicyLayout(params.config);
  nn::PlainBackend backend(params.values);
  PolicyOutput out = PolicyForward(layout, params.config, backend, hidden,
                                   std::span<const double>(obs.features));
  CheckFinite(out.mixture, out.hidden);
  return out;
}

PolicyOutputT<grad::Var> PolicyStep(grad::Tape& tape,
                                    const PolicyParams& params,
                                    std::span<const grad::Var> hidden,
                                    const ObservationT<grad::Var>& obs) {
  CheckInputs(params, hidden.size(), obs.features.size());
  const PolicyLayout layout = MakePolicyLayout(params.config);
  nn::FrozenBackend backend(tape, params.values);
  return PolicyForward(layout, params.config, backend, hidden,
                       std::span<const grad::Var>(obs.features));
}

int DrawComponent(const Mixture& mix, double uniform) {
  const auto p = ComponentProbabilities(mix);
  double acc = 0.0;
  for (int k = 0; k < kComponents; ++k) {
    acc += p[k];
    if (uniform < acc) return k;
  }
  return kComponents - 1;
}

int SelectComponentNearExpert(const Mixture& mix, const AgentState& ego,
                              Point2 expert_next, double dt,
                              const VehicleParams& vp) {
  return SelectComponentNearExpert(mix, ego, {expert_next.x, expert_next.y},
                                   dt, vp, 0.0, 0.0);
}

int SelectComponentNearExpert(const Mixture& mix, const AgentState& ego,
                              const AgentState& expert_next, double dt,
                              const VehicleParams& vp, double speed_weight,
                              double yaw_weight) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kComponents; ++k) {
    const Action a = ClampAction(Action{mix.means[k][0], mix.means[k][1]}, vp);
    const AgentState next = StepAgent(ego, a, dt, vp);
    const double dx = next.x - expert_next.x;
    const double dy = next.y - expert_next.y;
    const double dv = next.speed - expert_next.speed;
    const double dh = WrapAngle(next.yaw - expert_next.yaw);
    const double d = dx * dx + dy * dy + speed_weight * dv * dv +
                     yaw_weight * dh * dh;
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

namespace {

json ConfigJson(const PolicyConfig& c) {
  return {{"roadgraph_points", c.obs.roadgraph_points},
          {"neighbors", c.obs.neighbors},
          {"encoder_width", c.encoder_width},
          {"hidden", c.hidden},
          {"accel_scale", c.accel_scale},
          {"steer_scale", c.steer_scale},
          {"feature_scale", c.feature_scale}};
}

PolicyConfig ConfigFromJson(const json& j) {
  PolicyConfig c;
  c.obs.roadgraph_points = j.at("roadgraph_points").get<int>();
  c.obs.neighbors = j.at("neighbors").get<int>();
  c.encoder_width = j.at("encoder_width").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.accel_scale = j.at("accel_scale").get<double>();
  c.steer_scale = j.at("steer_scale").get<double>();
  c.feature_scale = j.at("feature_scale").get<double>();
  return c;
}

}  // namespace

void SavePolicy(const PolicyParams& params, const std::filesystem::path& path) {
  const PolicyLayout l = MakePolicyLayout(params.config);
  const auto layers = l.layers();
  WriteCheckpoint(path, "policy", ConfigJson(params.config), layers,
                  params.values);
}

PolicyParams LoadPolicy(const std::filesystem::path& path) {
  const Checkpoint c = ReadCheckpoint(path, "policy");
  PolicyParams p;
  try {
    p.config = ConfigFromJson(c.config);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad policy config: " + e.what());
  }
  const PolicyLayout l = MakePolicyLayout(p.config);
  const auto layers = l.layers();
  CheckShapes(c, layers);
  p.values = c.values;
  return p;
}

PolicyParams LoadPolicy(const std::filesystem::path& path,
                        const PolicyConfig& expected) {
  PolicyParams p = LoadPolicy(path);
  const PolicyLayout want = MakePolicyLayout(expected);
  const Checkpoint c = ReadCheckpoint(path, "policy");
  const auto layers = want.layers();
  CheckShapes(c, layers);
  return p;
}

}  // namespace dss
