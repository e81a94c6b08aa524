#pragma once

// Policy training by backpropagation through the simulator, plus data
// generation and training for the event classifier.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dss/classifier.h"
#include "dss/dynamics.h"
#include "dss/geometry.h"
#include "dss/policy.h"
#include "dss/rng.h"
#include "dss/scenario.h"

namespace dss {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t size, const AdamConfig& cfg);

  // One bias-corrected update of `params` along `grad`.
  void Step(std::span<double> params, std::span<const double> grad);
  int steps() const { return steps_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  int steps_ = 0;
};

// Scales `grad` so its Euclidean norm is at most `max_norm`. Returns the
// norm before clipping.
double ClipGlobalNorm(std::span<double> grad, double max_norm);

struct TrainConfig {
  AdamConfig adam;
  int window = 20;  // steps per truncated backpropagation window
  double clip_norm = 1.0;
  int epochs = 200;
  int batch_size = 8;
  std::uint64_t seed = 0;
  // Weight of the cross-entropy pulling the logits toward the component
  // chosen for each step.
  double logit_weight = 1.0;
  // The state error adds these multiples of the squared speed (m/s) and
  // heading (rad) differences to the squared position distance.
  double speed_weight = 1.0;
  double yaw_weight = 1.0;
  bool parallel = true;
};

void ValidateTrainConfig(const TrainConfig& cfg, int horizon);

// Result of rolling the ego forward for one window from a detached state.
struct WindowResult {
  double state_loss = 0.0;     // mean weighted squared state error
  double logit_loss = 0.0;     // mean cross-entropy of the chosen component
  double loss = 0.0;           // state_loss + logit_weight * logit_loss
  double distance_sum = 0.0;   // sum of distances, for displacement error
  int steps = 0;
  std::vector<int> components;  // chosen per step
  std::vector<double> gradient;  // d loss / d params; empty if not requested
};

// Runs up to `window` steps from `state` (other agents replaying their logs),
// then advances `state` and `hidden` to the end of the window with all
// history detached.
WindowResult ApgWindow(const PolicyParams& params, SimState& state,
                       std::vector<double>& hidden, const TrainConfig& cfg,
                       Rng& noise, bool compute_gradient);

// Noise stream for one scenario window.
std::uint64_t ApgNoiseSeed(std::uint64_t seed, int epoch, int scenario,
                           int window);

struct TrainingCurveRow {
  int epoch = 0;
  double loss = 0.0;
  double ade = 0.0;            // NaN when not applicable
  double positive_rate = 0.0;  // NaN when not applicable
  double auc = 0.0;            // NaN when not applicable
};

void WriteTrainingCurve(std::span<const TrainingCurveRow> rows,
                        const std::filesystem::path& path);

PolicyParams ApgTrain(std::span<const Scenario> scenarios,
                      const PolicyParams& init, const TrainConfig& cfg,
                      std::vector<TrainingCurveRow>* curve = nullptr);

// Classifier data ---------------------------------------------------------

struct LabeledState {
  SimState state;  // the state the features came from
  Observation obs;
  EventLabels labels;
};

struct DatasetStats {
  std::size_t size = 0;
  double collision_rate = 0.0;
  double offroad_rate = 0.0;
};

DatasetStats ComputeStats(std::span<const LabeledState> data);

// Rolls the ego out with the policy's mode mean plus temporally correlated
// Gaussian action noise (scale `perturb` times the policy's action scales),
// other agents replaying their logs. Every state after the first yields one
// sample.
std::vector<LabeledState> GenerateClassifierDataset(
    const PolicyParams& policy, std::span<const Scenario> scenarios,
    double perturb, std::uint64_t seed);

struct ClassifierTrainConfig {
  ClassifierConfig classifier;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  int epochs = 30;
  int batch_size = 64;
  double holdout = 0.2;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

struct ClassifierReport {
  double auc_collision = 0.0;
  double auc_offroad = 0.0;
  double accuracy_collision = 0.0;
  double accuracy_offroad = 0.0;
  double final_loss = 0.0;
  std::size_t train_size = 0;
  std::size_t holdout_size = 0;
};

// Area under the ROC curve; tied scores count one half.
double RocAuc(std::span<const double> scores,
              std::span<const std::uint8_t> labels);

// Mean over samples of the two heads' binary cross-entropies, summed.
double ClassifierLoss(const ClassifierParams& params,
                      std::span<const LabeledState> data);

ClassifierParams TrainClassifier(std::span<const LabeledState> data,
                                 const ClassifierTrainConfig& cfg,
                                 ClassifierReport* report = nullptr,
                                 std::vector<TrainingCurveRow>* curve =
                                     nullptr);

// Held-out metrics of `params` on `data`.
ClassifierReport EvaluateClassifier(const ClassifierParams& params,
                                    std::span<const LabeledState> data);

}  // namespace dss
