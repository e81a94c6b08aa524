#pragma once

// Recurrent stochastic driving policy: perceptron encoder, gated recurrent
// cell and a six-component Gaussian mixture head over (accel, steer).

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "dss/dynamics.h"
#include "dss/grad.h"
#include "dss/nn.h"
#include "dss/observation.h"

namespace dss {

inline constexpr int kComponents = 6;
inline constexpr double kStdFloor = 1e-3;

struct PolicyConfig {
  ObsConfig obs;
  int encoder_width = 128;
  int hidden = 128;
  // Head outputs are multiplied by these before becoming physical units.
  double accel_scale = 2.0;
  double steer_scale = 0.1;
  // Input features are multiplied by this.
  double feature_scale = 0.1;
  VehicleParams vehicle;

  bool operator==(const PolicyConfig& o) const {
    return obs == o.obs && encoder_width == o.encoder_width &&
           hidden == o.hidden && accel_scale == o.accel_scale &&
           steer_scale == o.steer_scale && feature_scale == o.feature_scale;
  }
};

struct PolicyLayout {
  nn::Dense encoder1;
  nn::Dense encoder2;
  nn::Dense update_gate;
  nn::Dense reset_gate;
  nn::Dense candidate;
  nn::Dense head;
  std::size_t total = 0;

  std::vector<const nn::Dense*> layers() const {
    return {&encoder1, &encoder2, &update_gate, &reset_gate, &candidate,
            &head};
  }
};

PolicyLayout MakePolicyLayout(const PolicyConfig& cfg);

struct PolicyParams {
  PolicyConfig config;
  std::vector<double> values;

  static PolicyParams Initialize(const PolicyConfig& cfg, std::uint64_t seed);
  static PolicyParams Zeros(const PolicyConfig& cfg);
};

template <class S>
struct MixtureT {
  std::array<S, kComponents> logits;
  std::array<std::array<S, 2>, kComponents> means;  // (accel, steer)
  std::array<std::array<S, 2>, kComponents> stds;
};
using Mixture = MixtureT<double>;

Mixture ValueOf(const MixtureT<grad::Var>& m);

// Softmax over the logits.
std::array<double, kComponents> ComponentProbabilities(const Mixture& mix);

template <class S>
struct PolicyOutputT {
  MixtureT<S> mixture;
  std::vector<S> hidden;
};
using PolicyOutput = PolicyOutputT<double>;

template <class Backend>
PolicyOutputT<typename Backend::Scalar> PolicyForward(
    const PolicyLayout& layout, const PolicyConfig& cfg, Backend& backend,
    std::span<const typename Backend::Scalar> hidden,
    std::span<const typename Backend::Scalar> features) {
  using S = typename Backend::Scalar;
  std::vector<S> x(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    x[i] = features[i] * cfg.feature_scale;
  }
  std::vector<S> e1, e2;
  backend.Apply(layout.encoder1, x, e1);
  for (S& v : e1) v = nn::Tanh(v);
  backend.Apply(layout.encoder2, e1, e2);
  for (S& v : e2) v = nn::Tanh(v);

  std::vector<S> xh(e2);
  xh.insert(xh.end(), hidden.begin(), hidden.end());
  std::vector<S> z, r, n;
  backend.Apply(layout.update_gate, xh, z);
  backend.Apply(layout.reset_gate, xh, r);
  const std::size_t h = hidden.size();
  for (std::size_t i = 0; i < h; ++i) {
    z[i] = nn::Sigmoid(z[i]);
    xh[e2.size() + i] = nn::Sigmoid(r[i]) * hidden[i];
  }
  backend.Apply(layout.candidate, xh, n);

  PolicyOutputT<S> out;
  out.hidden.resize(h);
  for (std::size_t i = 0; i < h; ++i) {
    out.hidden[i] = (1.0 - z[i]) * nn::Tanh(n[i]) + z[i] * hidden[i];
  }

  std::vector<S> head;
  backend.Apply(layout.head, out.hidden, head);
  const double scale[2] = {cfg.accel_scale, cfg.steer_scale};
  for (int k = 0; k < kComponents; ++k) {
    out.mixture.logits[k] = head[k];
    for (int d = 0; d < 2; ++d) {
      out.mixture.means[k][d] = head[kComponents + 2 * k + d] * scale[d];
      out.mixture.stds[k][d] =
          nn::Softplus(head[3 * kComponents + 2 * k + d]) * scale[d] +
          kStdFloor;
    }
  }
  return out;
}

class PolicyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Plain evaluation; throws PolicyError on non-finite output.
PolicyOutput PolicyStep(const PolicyParams& params,
                        std::span<const double> hidden,
                        const Observation& obs);

// Recorded evaluation with frozen parameters.
PolicyOutputT<grad::Var> PolicyStep(grad::Tape& tape,
                                    const PolicyParams& params,
                                    std::span<const grad::Var> hidden,
                                    const ObservationT<grad::Var>& obs);

// means[c] + stds[c] * noise, clamped to the action bounds.
template <class S>
ActionT<S> SampleAction(const MixtureT<S>& mix, int component,
                        std::array<double, 2> noise,
                        const VehicleParams& vp) {
  if (component < 0 || component >= kComponents) {
    throw PolicyError("SampleAction: component out of range");
  }
  const auto& m = mix.means[component];
  const auto& s = mix.stds[component];
  return ClampAction(ActionT<S>{m[0] + s[0] * noise[0], m[1] + s[1] * noise[1]},
                     vp);
}

template <class S>
int ModeComponent(const MixtureT<S>& mix) {
  int best = 0;
  for (int k = 1; k < kComponents; ++k) {
    if (Value(mix.logits[k]) > Value(mix.logits[best])) best = k;
  }
  return best;
}

// Mean of the most probable component (ties: lowest index), clamped.
template <class S>
ActionT<S> MeanAction(const MixtureT<S>& mix, const VehicleParams& vp) {
  const auto& m = mix.means[ModeComponent(mix)];
  return ClampAction(ActionT<S>{m[0], m[1]}, vp);
}

// Inverse-CDF draw of a component from the mixture probabilities.
int DrawComponent(const Mixture& mix, double uniform);

// Probes each component mean for one step and returns the one landing
// closest to `expert_next` (ties: lowest index).
int SelectComponentNearExpert(const Mixture& mix, const AgentState& ego,
                              Point2 expert_next, double dt,
                              const VehicleParams& vp);
// Same probes scored by the weighted squared state error: position, plus
// `speed_weight` times speed and `yaw_weight` times heading.
int SelectComponentNearExpert(const Mixture& mix, const AgentState& ego,
                              const AgentState& expert_next, double dt,
                              const VehicleParams& vp, double speed_weight,
                              double yaw_weight);

void SavePolicy(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams LoadPolicy(const std::filesystem::path& path);
// Rejects checkpoints whose shapes differ from `expected`.
PolicyParams LoadPolicy(const std::filesystem::path& path,
                        const PolicyConfig& expected);

}  // namespace dss
