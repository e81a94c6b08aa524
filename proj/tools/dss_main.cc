// dss: scenario generation, training, evaluation, ablation, single-scenario
// planning and rendering.

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dss/harness.h"
#include "dss/planner.h"
#include "dss/policy.h"
#include "dss/training.h"

namespace fs = std::filesystem;

namespace {

using dss::RunConfig;

// Command-line overrides shared by every subcommand. Unset values leave the
// config file alone.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> scenarios;
  std::optional<std::string> policy;
  std::optional<std::string> classifier;
  std::optional<std::string> loss;
  std::optional<int> rollouts;
  std::optional<int> horizon;
  std::optional<int> execute;
  std::optional<double> eta_accel;
  std::optional<double> eta_steer;
  std::optional<double> temperature;
  bool no_timing = false;
  bool serial = false;
};

void AddCommon(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config, "run config file (JSON)")
      ->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("-o,--out", o.out, "output directory");
  app->add_flag("--no-timing", o.no_timing,
                "write 0 for plan wall time so outputs depend on inputs only");
  app->add_flag("--serial", o.serial, "disable OpenMP parallel loops");
}

void AddPlanOptions(CLI::App* app, Overrides& o) {
  app->add_option("--scenarios", o.scenarios, "directory of scenario files")
      ->check(CLI::ExistingDirectory);
  app->add_option("--policy", o.policy, "policy checkpoint")
      ->check(CLI::ExistingFile);
  app->add_option("--classifier", o.classifier, "classifier checkpoint")
      ->check(CLI::ExistingFile);
  app->add_option("--loss", o.loss, "tracking or guided")
      ->check(CLI::IsMember({"tracking", "guided"}));
  app->add_option("-K,--rollouts", o.rollouts, "imagined rollouts");
  app->add_option("-T,--horizon", o.horizon, "imagination horizon");
  app->add_option("-M,--execute", o.execute, "actions executed per plan");
  app->add_option("--eta-accel", o.eta_accel, "gradient step on accel");
  app->add_option("--eta-steer", o.eta_steer, "gradient step on steer");
  app->add_option("--temperature", o.temperature, "softmax temperature");
}

RunConfig Resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : dss::LoadRunConfig(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.scenarios) c.scenarios = dss::ScenarioSetSpec{*o.scenarios, {}, 0, 0};
  if (o.policy) c.policy_path = *o.policy;
  if (o.classifier) c.classifier_path = *o.classifier;
  if (o.loss) c.loss = dss::ParseLossKind(*o.loss);
  if (o.rollouts) c.plan.rollouts = *o.rollouts;
  if (o.horizon) c.plan.horizon = *o.horizon;
  if (o.execute) c.plan.execute = *o.execute;
  if (o.eta_accel) c.plan.step_size[0] = *o.eta_accel;
  if (o.eta_steer) c.plan.step_size[1] = *o.eta_steer;
  if (o.temperature) c.plan.temperature = *o.temperature;
  if (o.no_timing) c.timing = false;
  if (o.serial) c.parallel = false;
  dss::FinalizeRunConfig(c);
  return c;
}

void WriteResolved(const RunConfig& c) {
  dss::WriteFile(fs::path(c.output_dir) / "run_config.json",
                 dss::SerializeRunConfig(c));
}

std::vector<dss::NamedScenario> Scenarios(const dss::ScenarioSetSpec& s,
                                          const char* what) {
  if (s.dir.empty() && s.count == 0) {
    throw dss::HarnessError(std::string("no ") + what +
                            " scenarios configured");
  }
  return dss::LoadScenarioSet(s);
}

dss::PolicyParams RequirePolicy(const RunConfig& c) {
  if (c.policy_path.empty()) throw dss::HarnessError("--policy is required");
  return dss::LoadPolicy(c.policy_path);
}

std::unique_ptr<dss::ClassifierParams> MaybeClassifier(const RunConfig& c) {
  if (c.loss != dss::LossKind::kGuided) return nullptr;
  if (c.classifier_path.empty()) {
    throw dss::HarnessError("guided loss needs --classifier");
  }
  return std::make_unique<dss::ClassifierParams>(
      dss::LoadClassifier(c.classifier_path));
}

dss::SuiteOptions SuiteOpts(const RunConfig& c,
                            const dss::ClassifierParams* classifier) {
  dss::SuiteOptions o;
  o.loss = c.loss;
  o.plan = c.plan;
  o.classifier = classifier;
  o.timing = c.timing;
  o.parallel = c.parallel;
  return o;
}

std::vector<dss::Scenario> Bare(const std::vector<dss::NamedScenario>& named) {
  std::vector<dss::Scenario> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.scenario);
  return out;
}

int ReportSuite(const dss::SuiteResult& r, const std::string& label) {
  const auto& a = r.aggregates;
  std::printf("%s: %d scenarios, %d errors, mean ADE %.4f m, overlap %.4f, "
              "offroad %.4f\n",
              label.c_str(), a.scenarios, a.errors, a.mean_ade_m,
              a.overlap_rate, a.offroad_rate);
  for (const auto& row : r.rows) {
    if (!row.error.empty()) {
      std::fprintf(stderr, "  %s: %s\n", row.scenario_id.c_str(),
                   row.error.c_str());
    }
  }
  return r.ok() ? 0 : 1;
}

// Subcommands ----------------------------------------------------------------

struct GenArgs {
  std::vector<std::string> kinds = {"straight", "curve", "intersection",
                                    "obstacle_lane"};
  int count = 50;
  std::uint64_t seed = 0;
  std::string out = "scenarios";
};

int GenScenarios(const GenArgs& g) {
  dss::ScenarioSetSpec spec;
  for (const auto& k : g.kinds) spec.kinds.push_back(dss::ParseScenarioKind(k));
  spec.count = g.count;
  spec.seed = g.seed;
  const auto set = dss::GenerateScenarioSet(spec);
  fs::create_directories(g.out);
  for (const auto& n : set) {
    dss::SaveScenario(n.scenario, fs::path(g.out) / (n.id + ".json"));
  }
  std::printf("wrote %zu scenarios to %s\n", set.size(), g.out.c_str());
  return 0;
}

int TrainPolicy(const Overrides& o, std::optional<int> epochs) {
  RunConfig c = Resolve(o);
  if (epochs) c.train.epochs = *epochs;
  if (o.scenarios) c.train_scenarios = c.scenarios;
  const auto named = Scenarios(c.train_scenarios, "training");
  const auto scenarios = Bare(named);
  WriteResolved(c);
  const dss::PolicyParams init =
      dss::PolicyParams::Initialize(c.policy, dss::HashSeed({c.seed, 0x1a17}));
  std::vector<dss::TrainingCurveRow> curve;
  const dss::PolicyParams trained =
      dss::ApgTrain(scenarios, init, c.train, &curve);
  const fs::path out(c.output_dir);
  dss::SavePolicy(trained, out / "policy.json");
  dss::WriteTrainingCurve(curve, out / "policy_curve.csv");
  const auto& last = curve.back();
  std::printf("trained %d epochs on %zu scenarios: loss %.6f, ADE %.4f m\n",
              last.epoch + 1, scenarios.size(), last.loss, last.ade);
  return 0;
}

int TrainClassifierCmd(const Overrides& o, std::optional<double> perturb) {
  RunConfig c = Resolve(o);
  if (perturb) c.classifier_perturb = *perturb;
  if (o.scenarios) c.classifier_scenarios = c.scenarios;
  const dss::PolicyParams policy = RequirePolicy(c);
  c.classifier_train.classifier.obs = policy.config.obs;
  const auto named = Scenarios(c.classifier_scenarios, "classifier");
  const auto scenarios = Bare(named);
  WriteResolved(c);
  const auto data = dss::GenerateClassifierDataset(
      policy, scenarios, c.classifier_perturb, dss::HashSeed({c.seed, 0xc1a5}));
  const dss::DatasetStats stats = dss::ComputeStats(data);
  std::printf("dataset: %zu states, collision rate %.4f, offroad rate %.4f\n",
              stats.size, stats.collision_rate, stats.offroad_rate);
  dss::ClassifierReport report;
  std::vector<dss::TrainingCurveRow> curve;
  const dss::ClassifierParams params =
      dss::TrainClassifier(data, c.classifier_train, &report, &curve);
  const fs::path out(c.output_dir);
  dss::SaveClassifier(params, out / "classifier.json");
  dss::WriteTrainingCurve(curve, out / "classifier_curve.csv");
  const nlohmann::json rep = {
      {"dataset_size", stats.size},
      {"collision_rate", stats.collision_rate},
      {"offroad_rate", stats.offroad_rate},
      {"train_size", report.train_size},
      {"holdout_size", report.holdout_size},
      {"auc_collision", report.auc_collision},
      {"auc_offroad", report.auc_offroad},
      {"accuracy_collision", report.accuracy_collision},
      {"accuracy_offroad", report.accuracy_offroad},
      {"final_loss", report.final_loss}};
  dss::WriteFile(out / "classifier_report.json", rep.dump(2) + "\n");
  std::printf("held-out AUC: collision %.4f, offroad %.4f\n",
              report.auc_collision, report.auc_offroad);
  return 0;
}

int Eval(const Overrides& o) {
  const RunConfig c = Resolve(o);
  const dss::PolicyParams policy = RequirePolicy(c);
  const auto classifier = MaybeClassifier(c);
  const auto named = Scenarios(c.scenarios, "evaluation");
  WriteResolved(c);
  const dss::SuiteResult r =
      dss::RunSuite(named, policy, SuiteOpts(c, classifier.get()));
  const fs::path out(c.output_dir);
  dss::ExportCsv(r, out / "suite.csv");
  dss::ExportJson(r, out / "suite.json");
  return ReportSuite(r, "eval");
}

int Ablate(const Overrides& o) {
  const RunConfig c = Resolve(o);
  const dss::PolicyParams policy = RequirePolicy(c);
  const auto classifier = MaybeClassifier(c);
  const auto named = Scenarios(c.scenarios, "evaluation");
  WriteResolved(c);
  const dss::AblationResult r = dss::RunAblation(
      named, policy, SuiteOpts(c, classifier.get()), c.k_sweep);
  const fs::path out(c.output_dir);
  int status = 0;
  for (const auto& cell : r.grid) {
    dss::ExportCsv(cell.result, out / (cell.name + ".csv"));
    dss::ExportJson(cell.result, out / (cell.name + ".json"));
    status |= ReportSuite(cell.result, cell.name);
  }
  for (const auto& cell : r.k_sweep) {
    dss::ExportCsv(cell.result, out / (cell.name + ".csv"));
    dss::ExportJson(cell.result, out / (cell.name + ".json"));
    status |= ReportSuite(cell.result, cell.name);
  }
  const std::string table = dss::AblationTable(r);
  dss::WriteFile(out / "ablation.md", table);
  std::printf("\n%s", table.c_str());
  return status;
}

std::unique_ptr<dss::RolloutLoss> MakeLoss(
    const RunConfig& c, const dss::Scenario& sc,
    const dss::ClassifierParams* classifier) {
  if (c.loss == dss::LossKind::kGuided) {
    return std::make_unique<dss::ClassifierGuidedLoss>(*classifier);
  }
  return std::make_unique<dss::TrackingLoss>(dss::ExpertPositions(sc));
}

// Imagined rollouts of the first plan, before refinement.
std::vector<dss::LabeledTrajectory> FirstPlanImagination(
    const RunConfig& c, const dss::Scenario& sc,
    const dss::PolicyParams& policy) {
  const dss::SimState s0 = dss::InitialState(sc);
  const auto h = dss::ZeroHiddens(policy, s0.num_agents());
  std::vector<dss::LabeledTrajectory> out;
  const auto specs = dss::MakeRolloutSpecs(c.plan, 0);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    dss::ImagineOptions io;
    io.horizon = std::min(c.plan.horizon, sc.horizon);
    io.spec = specs[k];
    const dss::ImaginedRollout r = dss::ImagineRollout(s0, h, policy, io);
    dss::LabeledTrajectory t;
    t.label = k == 0 ? "imagined rollouts (first plan)" : "";
    t.color = "#ff7f0e";
    t.dashed = true;
    for (const auto& s : r.states) {
      const auto& e = s.agents[sc.ego_index];
      t.points.push_back({e.x, e.y});
    }
    out.push_back(std::move(t));
  }
  return out;
}

int PlanCmd(const Overrides& o, const std::string& scenario_path,
            bool render) {
  const RunConfig c = Resolve(o);
  const dss::PolicyParams policy = RequirePolicy(c);
  const auto classifier = MaybeClassifier(c);
  const dss::Scenario sc = dss::LoadScenario(scenario_path);
  const auto loss = MakeLoss(c, sc, classifier.get());
  WriteResolved(c);

  if (!render) {
    // Diagnostics of the first plan call.
    const dss::SimState s0 = dss::InitialState(sc);
    dss::PlanConfig first = c.plan;
    first.horizon = std::min(first.horizon, sc.horizon);
    first.execute = std::min(first.execute, first.horizon);
    const dss::PlanResult p = dss::Plan(
        s0, dss::ZeroHiddens(policy, s0.num_agents()), policy, *loss, first);
    std::printf("first plan: K=%d T=%d M=%d eta=(%g, %g) tau=%g\n",
                first.rollouts, first.horizon, first.execute,
                first.step_size[0], first.step_size[1], first.temperature);
    std::printf("%3s %12s %10s %12s %9s %7s\n", "k", "loss", "weight",
                "grad_norm", "collision", "offroad");
    for (std::size_t k = 0; k < p.rollouts.size(); ++k) {
      const auto& r = p.rollouts[k];
      if (!r.valid) {
        std::printf("%3zu invalid: %s\n", k, r.error.c_str());
        continue;
      }
      std::printf("%3zu %12.6g %10.6f %12.6g %9d %7d\n", k, r.loss,
                  p.weights[k], r.gradient_norm, r.collision, r.offroad);
    }
    for (std::size_t m = 0; m < p.actions.size(); ++m) {
      std::printf("action %zu: accel %.6f steer %.6f\n", m, p.actions[m].accel,
                  p.actions[m].steer);
    }
    std::printf("policy calls %ld, backward calls %ld, sim steps %ld\n",
                p.diagnostics.policy_calls, p.diagnostics.backward_calls,
                p.diagnostics.sim_steps);
  }

  const dss::ControlResult r = dss::ControlLoop(sc, policy, *loss, c.plan);
  const fs::path out(c.output_dir);
  std::string csv = "t,x,y,yaw,speed\n";
  for (std::size_t t = 0; t < r.ego_states.size(); ++t) {
    const auto& e = r.ego_states[t];
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g\n", t, e.x, e.y,
                  e.yaw, e.speed);
    csv += buf;
  }
  dss::WriteFile(out / "trajectory.csv", csv);

  std::vector<dss::LabeledTrajectory> trajs = FirstPlanImagination(c, sc, policy);
  dss::LabeledTrajectory executed;
  executed.label = "executed (DSS)";
  executed.points.push_back({r.ego_states[0].x, r.ego_states[0].y});
  executed.points.insert(executed.points.end(), r.trajectory.begin(),
                         r.trajectory.end());
  trajs.push_back(executed);
  dss::WriteSvg(sc, trajs, out / "scenario.svg");

  std::printf("ADE %.4f m, collision %d, offroad %d, plans %d, policy calls "
              "%ld (expected %ld), backward calls %ld",
              r.ade, r.collision, r.offroad, r.plan_calls, r.policy_calls,
              r.expected_policy_calls, r.backward_calls);
  if (c.timing) std::printf(", %.3f s", r.plan_time_s);
  std::printf("\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable simulation for search: driving planner"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-scenarios",
                                     "write synthetic scenario files");
  gen_cmd->add_option("--kind", gen.kinds, "scenario kinds, cycled")
      ->check(CLI::IsMember({"straight", "curve", "intersection",
                             "obstacle_lane"}));
  gen_cmd->add_option("--count", gen.count, "number of scenarios")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("-o,--out", gen.out, "output directory");

  Overrides train_o;
  std::optional<int> epochs;
  auto* train_cmd =
      app.add_subcommand("train-policy", "train the policy through the simulator");
  AddCommon(train_cmd, train_o);
  train_cmd->add_option("--scenarios", train_o.scenarios,
                        "directory of training scenarios")
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--epochs", epochs, "training epochs");

  Overrides cls_o;
  std::optional<double> perturb;
  auto* cls_cmd = app.add_subcommand(
      "train-classifier", "train the collision/offroad classifier");
  AddCommon(cls_cmd, cls_o);
  cls_cmd->add_option("--scenarios", cls_o.scenarios,
                      "directory of scenarios for data generation")
      ->check(CLI::ExistingDirectory);
  cls_cmd->add_option("--policy", cls_o.policy, "policy checkpoint")
      ->check(CLI::ExistingFile);
  cls_cmd->add_option("--perturb", perturb, "action noise level");

  Overrides eval_o;
  auto* eval_cmd = app.add_subcommand("eval", "run the planner on a suite");
  AddCommon(eval_cmd, eval_o);
  AddPlanOptions(eval_cmd, eval_o);

  Overrides abl_o;
  auto* abl_cmd =
      app.add_subcommand("ablate", "run the four-setting grid and K sweep");
  AddCommon(abl_cmd, abl_o);
  AddPlanOptions(abl_cmd, abl_o);

  Overrides plan_o;
  std::string plan_scenario;
  auto* plan_cmd = app.add_subcommand(
      "plan", "plan one scenario with per-rollout diagnostics");
  AddCommon(plan_cmd, plan_o);
  AddPlanOptions(plan_cmd, plan_o);
  plan_cmd->add_option("scenario", plan_scenario, "scenario file")
      ->required()
      ->check(CLI::ExistingFile);

  Overrides render_o;
  std::string render_scenario;
  auto* render_cmd =
      app.add_subcommand("render", "run one scenario and write an SVG");
  AddCommon(render_cmd, render_o);
  AddPlanOptions(render_cmd, render_o);
  render_cmd->add_option("scenario", render_scenario, "scenario file")
      ->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return GenScenarios(gen);
    if (*train_cmd) return TrainPolicy(train_o, epochs);
    if (*cls_cmd) return TrainClassifierCmd(cls_o, perturb);
    if (*eval_cmd) return Eval(eval_o);
    if (*abl_cmd) return Ablate(abl_o);
    if (*plan_cmd) return PlanCmd(plan_o, plan_scenario, false);
    if (*render_cmd) return PlanCmd(render_o, render_scenario, true);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dss: %s\n", e.what());
    return 2;
  }
  return 0;
}
