#include "dss/classifier.h"

#include <stdexcept>

#include "dss/checkpoint.h"
#include "dss/rng.h"

namespace dss {

using nlohmann::json;

ClassifierLayout MakeClassifierLayout(const ClassifierConfig& cfg) {
  ClassifierLayout l;
  std::size_t cursor = 0;
  l.hidden1 = nn::AddDense(cursor, "hidden1", cfg.width, cfg.obs.size());
  l.hidden2 = nn::AddDense(cursor, "hidden2", cfg.width, cfg.width);
  l.output = nn::AddDense(cursor, "output", 2, cfg.width);
  l.total = cursor;
  return l;
}

ClassifierParams ClassifierParams::Zeros(const ClassifierConfig& cfg) {
  return {cfg, std::vector<double>(MakeClassifierLayout(cfg).total, 0.0)};
}

ClassifierParams ClassifierParams::Initialize(const ClassifierConfig& cfg,
                                              std::uint64_t seed) {
  ClassifierParams p = Zeros(cfg);
  const ClassifierLayout l = MakeClassifierLayout(cfg);
  std::uint64_t k = 0;
  for (const nn::Dense* d : l.layers()) {
    nn::InitDense(*d, p.values, HashSeed({seed, 0xc1a55ULL, k++}));
  }
  return p;
}

namespace {

void CheckDim(const ClassifierParams& params, std::size_t n) {
  if (static_cast<int>(n) != params.config.obs.size()) {
    throw std::invalid_argument("classifier input has the wrong dimension");
  }
}

}  // namespace

EventProbabilities ClassifierPredict(const ClassifierParams& params,
                                     const Observation& obs) {
  CheckDim(params, obs.features.size());
  const ClassifierLayout l = MakeClassifierLayout(params.config);
  nn::PlainBackend backend(params.values);
  const auto logits = ClassifierLogits(l, params.config, backend,
                                       std::span<const double>(obs.features));
  return {nn::Sigmoid(logits[0]), nn::Sigmoid(logits[1])};
}

std::array<grad::Var, 2> ClassifierPredict(
    grad::Tape& tape, const ClassifierParams& params,
    const ObservationT<grad::Var>& obs) {
  CheckDim(params, obs.features.size());
  const ClassifierLayout l = MakeClassifierLayout(params.config);
  nn::FrozenBackend backend(tape, params.values);
  const auto logits = ClassifierLogits(
      l, params.config, backend, std::span<const grad::Var>(obs.features));
  return {nn::Sigmoid(logits[0]), nn::Sigmoid(logits[1])};
}

void SaveClassifier(const ClassifierParams& params,
                    const std::filesystem::path& path) {
  const ClassifierLayout l = MakeClassifierLayout(params.config);
  const json cfg = {{"roadgraph_points", params.config.obs.roadgraph_points},
                    {"neighbors", params.config.obs.neighbors},
                    {"width", params.config.width},
                    {"feature_scale", params.config.feature_scale}};
  const auto layers = l.layers();
  WriteCheckpoint(path, "classifier", cfg, layers, params.values);
}

ClassifierParams LoadClassifier(const std::filesystem::path& path) {
  const Checkpoint c = ReadCheckpoint(path, "classifier");
  ClassifierParams p;
  try {
    p.config.obs.roadgraph_points = c.config.at("roadgraph_points").get<int>();
    p.config.obs.neighbors = c.config.at("neighbors").get<int>();
    p.config.width = c.config.at("width").get<int>();
    p.config.feature_scale = c.config.at("feature_scale").get<double>();
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad classifier config: " +
                          e.what());
  }
  const ClassifierLayout l = MakeClassifierLayout(p.config);
  const auto layers = l.layers();
  CheckShapes(c, layers);
  p.values = c.values;
  return p;
}

}  // namespace dss
