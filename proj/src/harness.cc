#include "dss/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dss {

using nlohmann::json;

void WriteFile(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessError("cannot write " + path.string());
  out << text;
  if (!out) throw HarnessError("failed writing " + path.string());
}

namespace {

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HarnessError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string Fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

// Scenario sets ---------------------------------------------------------------

std::vector<NamedScenario> GenerateScenarioSet(const ScenarioSetSpec& spec) {
  if (spec.kinds.empty()) throw HarnessError("generator needs at least 1 kind");
  if (spec.count < 1) throw HarnessError("generator count must be positive");
  std::vector<NamedScenario> out;
  for (int i = 0; i < spec.count; ++i) {
    const ScenarioKind kind = spec.kinds[i % spec.kinds.size()];
    char id[64];
    std::snprintf(id, sizeof(id), "%04d_%s", i,
                  std::string(ScenarioKindName(kind)).c_str());
    out.push_back(
        {id, GenerateSynthetic(kind, HashSeed({spec.seed,
                                               static_cast<std::uint64_t>(i)}))});
  }
  return out;
}

std::vector<NamedScenario> LoadScenarioSet(const ScenarioSetSpec& spec) {
  if (spec.dir.empty()) return GenerateScenarioSet(spec);
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(spec.dir, ec)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  if (ec) throw HarnessError("cannot list " + spec.dir + ": " + ec.message());
  std::sort(files.begin(), files.end());
  std::vector<NamedScenario> out;
  for (const auto& f : files) {
    out.push_back({f.stem().string(), LoadScenario(f)});
  }
  if (out.empty()) throw HarnessError("no scenario files in " + spec.dir);
  return out;
}

// Run configuration ------------------------------------------------------------

std::string_view LossKindName(LossKind kind) {
  return kind == LossKind::kTracking ? "tracking" : "guided";
}

LossKind ParseLossKind(std::string_view name) {
  if (name == "tracking") return LossKind::kTracking;
  if (name == "guided") return LossKind::kGuided;
  throw HarnessError("unknown loss: " + std::string(name));
}

namespace {

// Rejects keys outside `allowed` so typos do not pass silently.
void CheckKeys(const json& j, const std::string& where,
               std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw HarnessError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw HarnessError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void Get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json SetToJson(const ScenarioSetSpec& s) {
  if (!s.dir.empty()) return {{"dir", s.dir}};
  json kinds = json::array();
  for (ScenarioKind k : s.kinds) kinds.push_back(ScenarioKindName(k));
  return {{"kinds", kinds}, {"count", s.count}, {"seed", s.seed}};
}

ScenarioSetSpec SetFromJson(const json& j, const std::string& where) {
  CheckKeys(j, where, {"dir", "kinds", "count", "seed"});
  ScenarioSetSpec s;
  Get(j, "dir", s.dir);
  Get(j, "count", s.count);
  Get(j, "seed", s.seed);
  if (j.contains("kinds")) {
    for (const auto& k : j.at("kinds")) {
      s.kinds.push_back(ParseScenarioKind(k.get<std::string>()));
    }
  }
  return s;
}

json PlanToJson(const PlanConfig& p) {
  return {{"rollouts", p.rollouts},
          {"horizon", p.horizon},
          {"execute", p.execute},
          {"step_size", {p.step_size[0], p.step_size[1]}},
          {"temperature", p.temperature},
          {"discount", p.discount},
          {"grad_steps", p.grad_steps},
          {"mean_first", p.mean_first}};
}

PlanConfig PlanFromJson(const json& j) {
  CheckKeys(j, "plan",
            {"rollouts", "horizon", "execute", "step_size", "temperature",
             "discount", "grad_steps", "mean_first"});
  PlanConfig p;
  Get(j, "rollouts", p.rollouts);
  Get(j, "horizon", p.horizon);
  Get(j, "execute", p.execute);
  if (j.contains("step_size")) {
    const auto& s = j.at("step_size");
    if (!s.is_array() || s.size() != 2) {
      throw HarnessError("plan.step_size: expected [accel, steer]");
    }
    p.step_size = {s[0].get<double>(), s[1].get<double>()};
  }
  Get(j, "temperature", p.temperature);
  Get(j, "discount", p.discount);
  Get(j, "grad_steps", p.grad_steps);
  Get(j, "mean_first", p.mean_first);
  return p;
}

json AdamToJson(const AdamConfig& a) {
  return {{"learning_rate", a.learning_rate},
          {"beta1", a.beta1},
          {"beta2", a.beta2},
          {"epsilon", a.epsilon}};
}

void AdamFromJson(const json& j, AdamConfig& a) {
  Get(j, "learning_rate", a.learning_rate);
  Get(j, "beta1", a.beta1);
  Get(j, "beta2", a.beta2);
  Get(j, "epsilon", a.epsilon);
}

}  // namespace

std::string SerializeRunConfig(const RunConfig& c) {
  json j;
  j["format"] = "dss-run-config";
  j["version"] = kRunConfigVersion;
  j["seed"] = c.seed;
  j["scenarios"] = SetToJson(c.scenarios);
  j["train_scenarios"] = SetToJson(c.train_scenarios);
  j["classifier_scenarios"] = SetToJson(c.classifier_scenarios);
  j["policy_path"] = c.policy_path;
  j["classifier_path"] = c.classifier_path;
  j["loss"] = LossKindName(c.loss);
  j["plan"] = PlanToJson(c.plan);
  j["output_dir"] = c.output_dir;
  j["timing"] = c.timing;
  j["parallel"] = c.parallel;
  j["policy"] = {{"encoder_width", c.policy.encoder_width},
                 {"hidden", c.policy.hidden},
                 {"roadgraph_points", c.policy.obs.roadgraph_points},
                 {"neighbors", c.policy.obs.neighbors}};
  j["train"] = {{"adam", AdamToJson(c.train.adam)},
                {"window", c.train.window},
                {"clip_norm", c.train.clip_norm},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"logit_weight", c.train.logit_weight},
                {"speed_weight", c.train.speed_weight},
                {"yaw_weight", c.train.yaw_weight}};
  j["classifier_train"] = {{"adam", AdamToJson(c.classifier_train.adam)},
                           {"width", c.classifier_train.classifier.width},
                           {"epochs", c.classifier_train.epochs},
                           {"batch_size", c.classifier_train.batch_size},
                           {"holdout", c.classifier_train.holdout},
                           {"clip_norm", c.classifier_train.clip_norm},
                           {"perturb", c.classifier_perturb}};
  j["k_sweep"] = c.k_sweep;
  return j.dump(2) + "\n";
}

RunConfig ParseRunConfig(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw HarnessError(std::string("run config: ") + e.what());
  }
  try {
    CheckKeys(j, "run config",
              {"format", "version", "seed", "scenarios", "train_scenarios",
               "classifier_scenarios", "policy_path", "classifier_path",
               "loss", "plan", "output_dir", "timing", "parallel", "policy",
               "train", "classifier_train", "k_sweep"});
    if (j.value("format", "") != "dss-run-config") {
      throw HarnessError("run config: format must be 'dss-run-config'");
    }
    if (j.value("version", 0) != kRunConfigVersion) {
      throw HarnessError("run config: unsupported version");
    }
    RunConfig c;
    Get(j, "seed", c.seed);
    if (j.contains("scenarios")) {
      c.scenarios = SetFromJson(j["scenarios"], "scenarios");
    }
    if (j.contains("train_scenarios")) {
      c.train_scenarios = SetFromJson(j["train_scenarios"], "train_scenarios");
    }
    if (j.contains("classifier_scenarios")) {
      c.classifier_scenarios =
          SetFromJson(j["classifier_scenarios"], "classifier_scenarios");
    }
    Get(j, "policy_path", c.policy_path);
    Get(j, "classifier_path", c.classifier_path);
    if (j.contains("loss")) c.loss = ParseLossKind(j["loss"].get<std::string>());
    if (j.contains("plan")) c.plan = PlanFromJson(j["plan"]);
    Get(j, "output_dir", c.output_dir);
    Get(j, "timing", c.timing);
    Get(j, "parallel", c.parallel);
    if (j.contains("policy")) {
      const json& p = j["policy"];
      CheckKeys(p, "policy",
                {"encoder_width", "hidden", "roadgraph_points", "neighbors"});
      Get(p, "encoder_width", c.policy.encoder_width);
      Get(p, "hidden", c.policy.hidden);
      Get(p, "roadgraph_points", c.policy.obs.roadgraph_points);
      Get(p, "neighbors", c.policy.obs.neighbors);
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      CheckKeys(t, "train",
                {"adam", "window", "clip_norm", "epochs", "batch_size",
                 "logit_weight", "speed_weight", "yaw_weight"});
      if (t.contains("adam")) AdamFromJson(t["adam"], c.train.adam);
      Get(t, "window", c.train.window);
      Get(t, "clip_norm", c.train.clip_norm);
      Get(t, "epochs", c.train.epochs);
      Get(t, "batch_size", c.train.batch_size);
      Get(t, "logit_weight", c.train.logit_weight);
      Get(t, "speed_weight", c.train.speed_weight);
      Get(t, "yaw_weight", c.train.yaw_weight);
    }
    if (j.contains("classifier_train")) {
      const json& t = j["classifier_train"];
      CheckKeys(t, "classifier_train",
                {"adam", "width", "epochs", "batch_size", "holdout",
                 "clip_norm", "perturb"});
      if (t.contains("adam")) AdamFromJson(t["adam"], c.classifier_train.adam);
      Get(t, "width", c.classifier_train.classifier.width);
      Get(t, "epochs", c.classifier_train.epochs);
      Get(t, "batch_size", c.classifier_train.batch_size);
      Get(t, "holdout", c.classifier_train.holdout);
      Get(t, "clip_norm", c.classifier_train.clip_norm);
      Get(t, "perturb", c.classifier_perturb);
    }
    Get(j, "k_sweep", c.k_sweep);
    return c;
  } catch (const json::exception& e) {
    throw HarnessError(std::string("run config: ") + e.what());
  }
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  return ParseRunConfig(ReadFile(path));
}

void FinalizeRunConfig(RunConfig& c) {
  c.plan.seed = c.seed;
  c.plan.parallel = c.parallel;
  c.train.seed = c.seed;
  c.train.parallel = c.parallel;
  c.classifier_train.seed = c.seed;
  c.classifier_train.classifier.obs = c.policy.obs;
  try {
    ValidatePlanConfig(c.plan);
  } catch (const PlanError& e) {
    throw HarnessError(std::string("plan: ") + e.what());
  }
  for (int k : c.k_sweep) {
    if (k < 1) throw HarnessError("k_sweep entries must be positive");
  }
  if (!(c.classifier_perturb >= 0.0)) {
    throw HarnessError("classifier perturb must be non-negative");
  }
}

// Suites -------------------------------------------------------------------------

SuiteAggregates Aggregate(const std::vector<SuiteRow>& rows) {
  SuiteAggregates a;
  double ade = 0.0;
  int collisions = 0, offroads = 0;
  for (const SuiteRow& r : rows) {
    if (!r.error.empty()) {
      ++a.errors;
      continue;
    }
    ++a.scenarios;
    ade += r.ade_m;
    collisions += r.collision;
    offroads += r.offroad;
    a.backward_calls += r.backward_calls;
  }
  if (a.scenarios > 0) {
    a.mean_ade_m = ade / a.scenarios;
    a.overlap_rate = static_cast<double>(collisions) / a.scenarios;
    a.offroad_rate = static_cast<double>(offroads) / a.scenarios;
  }
  return a;
}

SuiteResult RunSuite(const std::vector<NamedScenario>& scenarios,
                     const PolicyParams& policy, const SuiteOptions& opts) {
  if (opts.loss == LossKind::kGuided && opts.classifier == nullptr) {
    throw HarnessError("guided loss needs a classifier");
  }
  ValidatePlanConfig(opts.plan);
  const int n = static_cast<int>(scenarios.size());
  std::vector<SuiteRow> rows(n);
#pragma omp parallel for schedule(dynamic) if (opts.parallel)
  for (int i = 0; i < n; ++i) {
    SuiteRow& row = rows[i];
    row.scenario_id = scenarios[i].id;
    try {
      const Scenario& sc = scenarios[i].scenario;
      ControlResult r;
      if (opts.loss == LossKind::kTracking) {
        const TrackingLoss loss(ExpertPositions(sc));
        r = ControlLoop(sc, policy, loss, opts.plan);
      } else {
        const ClassifierGuidedLoss loss(*opts.classifier);
        r = ControlLoop(sc, policy, loss, opts.plan);
      }
      row.ade_m = r.ade;
      row.collision = r.collision;
      row.offroad = r.offroad;
      row.plan_time_s = opts.timing ? r.plan_time_s : 0.0;
      row.policy_calls = r.policy_calls;
      row.backward_calls = r.backward_calls;
      row.expected_policy_calls = r.expected_policy_calls;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  }
  std::sort(rows.begin(), rows.end(), [](const SuiteRow& a, const SuiteRow& b) {
    return a.scenario_id < b.scenario_id;
  });
  SuiteResult res;
  res.rows = std::move(rows);
  res.aggregates = Aggregate(res.rows);
  return res;
}

std::string SuiteCsv(const SuiteResult& result) {
  if (result.rows.empty()) throw HarnessError("suite has no scenarios");
  std::string out = "scenario_id,ade_m,collision,offroad,plan_time_s\n";
  for (const SuiteRow& r : result.rows) {
    if (!r.error.empty()) {
      out += r.scenario_id + ",,,,\n";
      continue;
    }
    out += r.scenario_id + "," + Fmt("%.9g", r.ade_m) + "," +
           (r.collision ? "1" : "0") + "," + (r.offroad ? "1" : "0") + "," +
           Fmt("%.6f", r.plan_time_s) + "\n";
  }
  return out;
}

std::string SuiteJson(const SuiteResult& result) {
  if (result.rows.empty()) throw HarnessError("suite has no scenarios");
  json rows = json::array();
  for (const SuiteRow& r : result.rows) {
    json row = {{"scenario_id", r.scenario_id},
                {"ade_m", r.ade_m},
                {"collision", r.collision},
                {"offroad", r.offroad},
                {"plan_time_s", r.plan_time_s}};
    if (!r.error.empty()) row["error"] = r.error;
    rows.push_back(row);
  }
  const SuiteAggregates& a = result.aggregates;
  json j = {{"format", "dss-suite"},
            {"version", kMetricsFormatVersion},
            {"rows", rows},
            {"aggregates",
             {{"scenarios", a.scenarios},
              {"errors", a.errors},
              {"mean_ade_m", a.mean_ade_m},
              {"overlap_rate", a.overlap_rate},
              {"offroad_rate", a.offroad_rate}}}};
  return j.dump(2) + "\n";
}

SuiteResult ParseSuiteJson(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "dss-suite" ||
        j.at("version") != kMetricsFormatVersion) {
      throw HarnessError("not a version 1 suite file");
    }
    SuiteResult res;
    for (const json& r : j.at("rows")) {
      SuiteRow row;
      row.scenario_id = r.at("scenario_id").get<std::string>();
      row.ade_m = r.at("ade_m").get<double>();
      row.collision = r.at("collision").get<bool>();
      row.offroad = r.at("offroad").get<bool>();
      row.plan_time_s = r.at("plan_time_s").get<double>();
      row.error = r.value("error", "");
      res.rows.push_back(row);
    }
    const json& a = j.at("aggregates");
    res.aggregates.scenarios = a.at("scenarios").get<int>();
    res.aggregates.errors = a.at("errors").get<int>();
    res.aggregates.mean_ade_m = a.at("mean_ade_m").get<double>();
    res.aggregates.overlap_rate = a.at("overlap_rate").get<double>();
    res.aggregates.offroad_rate = a.at("offroad_rate").get<double>();
    return res;
  } catch (const json::exception& e) {
    throw HarnessError(std::string("suite file: ") + e.what());
  }
}

void ExportCsv(const SuiteResult& result, const std::filesystem::path& path) {
  WriteFile(path, SuiteCsv(result));
}

void ExportJson(const SuiteResult& result, const std::filesystem::path& path) {
  WriteFile(path, SuiteJson(result));
}

// Ablation -----------------------------------------------------------------------

std::vector<AblationCell> AblationCells(const PlanConfig& base) {
  std::vector<AblationCell> cells(4);
  cells[0].name = "reactive";
  cells[0].plan = base;
  cells[0].plan.rollouts = 1;
  cells[0].plan.step_size = {0.0, 0.0};
  cells[1].name = "reactive+gradients";
  cells[1].plan = base;
  cells[1].plan.rollouts = 1;
  cells[2].name = "simulator-as-critic";
  cells[2].plan = base;
  cells[2].plan.step_size = {0.0, 0.0};
  cells[3].name = "differentiable-simulator-as-critic";
  cells[3].plan = base;
  for (AblationCell& c : cells) {
    if (c.plan.rollouts == 1) c.plan.mean_first = true;
  }
  return cells;
}

AblationResult RunAblation(const std::vector<NamedScenario>& scenarios,
                           const PolicyParams& policy,
                           const SuiteOptions& base,
                           const std::vector<int>& k_values) {
  AblationResult res;
  for (AblationCell cell : AblationCells(base.plan)) {
    SuiteOptions o = base;
    o.plan = cell.plan;
    cell.result = RunSuite(scenarios, policy, o);
    res.grid.push_back(std::move(cell));
  }
  for (int k : k_values) {
    AblationCell cell;
    cell.name = "K=" + std::to_string(k);
    cell.plan = base.plan;
    cell.plan.rollouts = k;
    // Reuse the grid's suite when the configuration is identical.
    const AblationCell& full = res.grid.back();
    if (k == full.plan.rollouts) {
      cell.result = full.result;
    } else {
      SuiteOptions o = base;
      o.plan = cell.plan;
      cell.result = RunSuite(scenarios, policy, o);
    }
    res.k_sweep.push_back(std::move(cell));
  }
  return res;
}

std::string AblationTable(const AblationResult& result) {
  std::ostringstream s;
  s << "| setting | K | eta_accel | eta_steer | mean ADE (m) | overlap | "
       "offroad | backward calls | errors |\n";
  s << "|---|---|---|---|---|---|---|---|---|\n";
  for (const AblationCell& c : result.grid) {
    const SuiteAggregates& a = c.result.aggregates;
    s << "| " << c.name << " | " << c.plan.rollouts << " | "
      << Fmt("%g", c.plan.step_size[0]) << " | "
      << Fmt("%g", c.plan.step_size[1]) << " | " << Fmt("%.4f", a.mean_ade_m)
      << " | " << Fmt("%.4f", a.overlap_rate) << " | "
      << Fmt("%.4f", a.offroad_rate) << " | " << a.backward_calls << " | "
      << a.errors << " |\n";
  }
  if (!result.k_sweep.empty()) {
    s << "\n| Rollouts K | mean ADE (m) | overlap | offroad |\n";
    s << "|---|---|---|---|\n";
    for (const AblationCell& c : result.k_sweep) {
      const SuiteAggregates& a = c.result.aggregates;
      s << "| " << c.plan.rollouts << " | " << Fmt("%.4f", a.mean_ade_m)
        << " | " << Fmt("%.4f", a.overlap_rate) << " | "
        << Fmt("%.4f", a.offroad_rate) << " |\n";
    }
  }
  return s.str();
}

// Rendering ----------------------------------------------------------------------

namespace {

struct Bounds {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  void Add(double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    x0 = std::min(x0, x);
    y0 = std::min(y0, y);
    x1 = std::max(x1, x);
    y1 = std::max(y1, y);
  }
};

std::string Num(double v) { return Fmt("%.3f", v); }

std::string Escape(const std::string& in) {
  std::string out;
  for (char c : in) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string RenderSvg(const Scenario& sc,
                      const std::vector<LabeledTrajectory>& trajectories) {
  constexpr double kMargin = 10.0;
  constexpr double kScale = 4.0;  // pixels per meter
  Bounds b;
  for (const Polyline& pl : sc.roadgraph.polylines) {
    for (const Point2& p : pl.points) b.Add(p.x, p.y);
  }
  for (const AgentTrack& t : sc.tracks) {
    for (std::size_t i = 0; i < t.states.size(); ++i) {
      if (t.valid[i]) b.Add(t.states[i].x, t.states[i].y);
    }
  }
  for (const LabeledTrajectory& tr : trajectories) {
    for (const Point2& p : tr.points) b.Add(p.x, p.y);
  }
  if (b.x0 > b.x1) b = Bounds{0.0, 0.0, 1.0, 1.0};
  const double x0 = b.x0 - kMargin, y1 = b.y1 + kMargin;
  const double w = (b.x1 - b.x0 + 2 * kMargin) * kScale;
  const double h = (b.y1 - b.y0 + 2 * kMargin) * kScale;
  auto px = [&](double x) { return Num((x - x0) * kScale); };
  auto py = [&](double y) { return Num((y1 - y) * kScale); };
  auto path = [&](const std::vector<Point2>& pts) {
    std::string d;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      d += (i == 0 ? "M" : " L") + px(pts[i].x) + "," + py(pts[i].y);
    }
    return d;
  };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Num(w)
    << "\" height=\"" << Num(h) << "\" viewBox=\"0 0 " << Num(w) << " "
    << Num(h) << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"#f7f7f7\"/>\n";
  s << "<g id=\"roadgraph\" fill=\"none\">\n";
  for (const Polyline& pl : sc.roadgraph.polylines) {
    if (pl.points.empty()) continue;
    const bool center = pl.type == PolylineType::kLaneCenter;
    s << "<path d=\"" << path(pl.points) << "\" stroke=\""
      << (center ? "#bbbbbb" : "#444444") << "\" stroke-width=\""
      << (center ? "1" : "2") << "\""
      << (center ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
  }
  s << "</g>\n<g id=\"logs\" fill=\"none\">\n";
  for (std::size_t a = 0; a < sc.tracks.size(); ++a) {
    const AgentTrack& t = sc.tracks[a];
    std::vector<Point2> pts;
    for (std::size_t i = 0; i < t.states.size(); ++i) {
      if (t.valid[i]) pts.push_back({t.states[i].x, t.states[i].y});
    }
    if (pts.size() < 2) continue;
    const bool ego = static_cast<int>(a) == sc.ego_index;
    s << "<path d=\"" << path(pts) << "\" stroke=\""
      << (ego ? "#1f77b4" : "#9ecae1") << "\" stroke-width=\"1.5\"/>\n";
  }
  s << "</g>\n<g id=\"agents\">\n";
  for (std::size_t a = 0; a < sc.tracks.size(); ++a) {
    const AgentTrack& t = sc.tracks[a];
    if (t.states.empty() || !t.valid[0]) continue;
    const AgentState& st = t.states[0];
    const double c = std::cos(st.yaw), sn = std::sin(st.yaw);
    const double hl = t.length / 2, hw = t.width / 2;
    const double corners[4][2] = {{hl, hw}, {hl, -hw}, {-hl, -hw}, {-hl, hw}};
    s << "<polygon points=\"";
    for (int k = 0; k < 4; ++k) {
      const double x = st.x + c * corners[k][0] - sn * corners[k][1];
      const double y = st.y + sn * corners[k][0] + c * corners[k][1];
      s << (k ? " " : "") << px(x) << "," << py(y);
    }
    const bool ego = static_cast<int>(a) == sc.ego_index;
    s << "\" fill=\"" << (ego ? "#1f77b4" : "#6baed6")
      << "\" stroke=\"#08306b\" stroke-width=\"0.5\"/>\n";
  }
  s << "</g>\n<g id=\"trajectories\" fill=\"none\">\n";
  for (const LabeledTrajectory& tr : trajectories) {
    if (tr.points.empty()) continue;
    s << "<path d=\"" << path(tr.points) << "\" stroke=\"" << Escape(tr.color)
      << "\" stroke-width=\"" << (tr.dashed ? "1" : "2") << "\""
      << (tr.dashed ? " stroke-dasharray=\"3,3\"" : "") << "><title>"
      << Escape(tr.label) << "</title></path>\n";
  }
  s << "</g>\n<g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  double ly = 16.0;
  for (const LabeledTrajectory& tr : trajectories) {
    if (tr.label.empty()) continue;
    s << "<text x=\"8\" y=\"" << Num(ly) << "\" fill=\"" << Escape(tr.color)
      << "\">" << Escape(tr.label) << "</text>\n";
    ly += 14.0;
  }
  s << "</g>\n</svg>\n";
  return s.str();
}

void WriteSvg(const Scenario& scenario,
              const std::vector<LabeledTrajectory>& trajectories,
              const std::filesystem::path& path) {
  WriteFile(path, RenderSvg(scenario, trajectories));
}

}  // namespace dss
