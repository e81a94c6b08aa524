#pragma once

// Multi-label event classifier p(collision | s), p(offroad | s) over the
// policy's observation features.

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "dss/grad.h"
#include "dss/nn.h"
#include "dss/observation.h"

namespace dss {

struct ClassifierConfig {
  ObsConfig obs;
  int width = 64;
  double feature_scale = 0.1;
};

struct ClassifierLayout {
  nn::Dense hidden1;
  nn::Dense hidden2;
  nn::Dense output;  // logits: collision, offroad
  std::size_t total = 0;

  std::vector<const nn::Dense*> layers() const {
    return {&hidden1, &hidden2, &output};
  }
};

ClassifierLayout MakeClassifierLayout(const ClassifierConfig& cfg);

struct ClassifierParams {
  ClassifierConfig config;
  std::vector<double> values;

  static ClassifierParams Initialize(const ClassifierConfig& cfg,
                                     std::uint64_t seed);
  static ClassifierParams Zeros(const ClassifierConfig& cfg);
};

template <class Backend>
std::array<typename Backend::Scalar, 2> ClassifierLogits(
    const ClassifierLayout& layout, const ClassifierConfig& cfg,
    Backend& backend, std::span<const typename Backend::Scalar> features) {
  using S = typename Backend::Scalar;
  std::vector<S> x(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    x[i] = features[i] * cfg.feature_scale;
  }
  std::vector<S> a, b, out;
  backend.Apply(layout.hidden1, x, a);
  for (S& v : a) v = nn::Tanh(v);
  backend.Apply(layout.hidden2, a, b);
  for (S& v : b) v = nn::Tanh(v);
  backend.Apply(layout.output, b, out);
  return {out[0], out[1]};
}

struct EventProbabilities {
  double collision = 0.5;
  double offroad = 0.5;
};

EventProbabilities ClassifierPredict(const ClassifierParams& params,
                                     const Observation& obs);

// Recorded prediction; parameters are constants, so adjoints reach only the
// observation (and through it the actions that produced it).
std::array<grad::Var, 2> ClassifierPredict(grad::Tape& tape,
                                           const ClassifierParams& params,
                                           const ObservationT<grad::Var>& obs);

void SaveClassifier(const ClassifierParams& params,
                    const std::filesystem::path& path);
ClassifierParams LoadClassifier(const std::filesystem::path& path);

}  // namespace dss
