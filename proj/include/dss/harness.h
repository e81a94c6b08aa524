#pragma once

// Benchmark suites, the ablation grid, metric export, run configuration and
// SVG rendering.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dss/classifier.h"
#include "dss/planner.h"
#include "dss/policy.h"
#include "dss/scenario.h"
#include "dss/training.h"

namespace dss {

class HarnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kRunConfigVersion = 1;
inline constexpr int kMetricsFormatVersion = 1;

struct NamedScenario {
  std::string id;
  Scenario scenario;
};

// Either a directory of scenario files or a synthetic generator spec.
struct ScenarioSetSpec {
  std::string dir;
  std::vector<ScenarioKind> kinds;  // cycled over the generated ids
  int count = 0;
  std::uint64_t seed = 0;
};

// Sorted by id.
std::vector<NamedScenario> LoadScenarioSet(const ScenarioSetSpec& spec);
std::vector<NamedScenario> GenerateScenarioSet(const ScenarioSetSpec& spec);

enum class LossKind { kTracking, kGuided };

struct RunConfig {
  ScenarioSetSpec scenarios;
  ScenarioSetSpec train_scenarios;
  ScenarioSetSpec classifier_scenarios;
  std::string policy_path;
  std::string classifier_path;
  LossKind loss = LossKind::kTracking;
  PlanConfig plan;
  std::uint64_t seed = 0;  // master seed; copied into every stage
  std::string output_dir = "out";
  // Write measured plan wall time; off makes suite files depend on the
  // inputs only.
  bool timing = true;
  bool parallel = true;

  PolicyConfig policy;
  TrainConfig train;
  ClassifierTrainConfig classifier_train;
  double classifier_perturb = 1.0;
  std::vector<int> k_sweep = {1, 2, 4, 8};
};

RunConfig ParseRunConfig(const std::string& text);
RunConfig LoadRunConfig(const std::filesystem::path& path);
std::string SerializeRunConfig(const RunConfig& cfg);
// Applies the master seed to every stage and checks ranges.
void FinalizeRunConfig(RunConfig& cfg);

std::string_view LossKindName(LossKind kind);
LossKind ParseLossKind(std::string_view name);

struct SuiteRow {
  std::string scenario_id;
  double ade_m = 0.0;
  bool collision = false;
  bool offroad = false;
  double plan_time_s = 0.0;
  std::string error;  // empty on success
  long policy_calls = 0;
  long backward_calls = 0;
  long expected_policy_calls = 0;
};

struct SuiteAggregates {
  int scenarios = 0;  // successful rows
  int errors = 0;
  double mean_ade_m = 0.0;
  double overlap_rate = 0.0;
  double offroad_rate = 0.0;
  long backward_calls = 0;
};

struct SuiteResult {
  std::vector<SuiteRow> rows;
  SuiteAggregates aggregates;
  bool ok() const { return aggregates.errors == 0; }
};

// Over successful rows only.
SuiteAggregates Aggregate(const std::vector<SuiteRow>& rows);

struct SuiteOptions {
  LossKind loss = LossKind::kTracking;
  PlanConfig plan;
  const ClassifierParams* classifier = nullptr;  // required for kGuided
  bool timing = true;
  bool parallel = true;
};

// Runs the control loop on every scenario; failures become error rows.
SuiteResult RunSuite(const std::vector<NamedScenario>& scenarios,
                     const PolicyParams& policy, const SuiteOptions& opts);

void ExportCsv(const SuiteResult& result, const std::filesystem::path& path);
void ExportJson(const SuiteResult& result, const std::filesystem::path& path);
std::string SuiteCsv(const SuiteResult& result);
std::string SuiteJson(const SuiteResult& result);
SuiteResult ParseSuiteJson(const std::string& text);

struct AblationCell {
  std::string name;
  PlanConfig plan;
  SuiteResult result;
};

struct AblationResult {
  std::vector<AblationCell> grid;    // the four settings
  std::vector<AblationCell> k_sweep;  // full method, one per K
};

// reactive (K=1, eta=0), reactive+gradients (K=1), simulator-as-critic
// (eta=0) and the full method, all sharing `base.seed`.
std::vector<AblationCell> AblationCells(const PlanConfig& base);

AblationResult RunAblation(const std::vector<NamedScenario>& scenarios,
                           const PolicyParams& policy,
                           const SuiteOptions& base,
                           const std::vector<int>& k_values);

// Markdown tables: the grid, then the K sweep.
std::string AblationTable(const AblationResult& result);

struct LabeledTrajectory {
  std::string label;
  std::vector<Point2> points;
  std::string color = "#d62728";
  bool dashed = false;
};

std::string RenderSvg(const Scenario& scenario,
                      const std::vector<LabeledTrajectory>& trajectories);
void WriteSvg(const Scenario& scenario,
              const std::vector<LabeledTrajectory>& trajectories,
              const std::filesystem::path& path);

// Writes `text` to `path`, creating parent directories.
void WriteFile(const std::filesystem::path& path, const std::string& text);

}  // namespace dss
