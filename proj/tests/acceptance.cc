// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes. Tolerances are pinned here; nothing is retried.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dss/geometry.h"
#include "dss/grad.h"
#include "dss/harness.h"
#include "dss/planner.h"
#include "dss/rng.h"
#include "dss/training.h"

#ifndef DSS_SOURCE_DIR
#define DSS_SOURCE_DIR "."
#endif

namespace {

using namespace dss;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
  void Check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void Note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string Fmt(const char* f, double a, double b = 0, double c = 0,
                double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

int failures = 0;

void Report(int n, const char* name, Outcome o) {
  std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, name,
              o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

// Runs `body` and turns an escaping exception into a failure.
void Run(int n, const char* name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.Note(std::string("exception: ") + e.what());
  }
  Report(n, name, o);
}

// Shared state -------------------------------------------------------------

RunConfig Config() {
  RunConfig c = LoadRunConfig(fs::path(DSS_SOURCE_DIR) / "configs" /
                              "default.json");
  c.timing = true;
  FinalizeRunConfig(c);
  return c;
}

std::vector<Scenario> Bare(const std::vector<NamedScenario>& named) {
  std::vector<Scenario> out;
  for (const auto& n : named) out.push_back(n.scenario);
  return out;
}

// 1. Gradients ---------------------------------------------------------------

void Gradients(Outcome& o) {
  const auto start = Clock::now();
  using grad::NodeRef;
  using grad::Tape;
  using grad::Var;
  const std::vector<std::pair<const char*, grad::RecordedFunction>> prims = {
      {"add", [](Tape& t, std::span<const NodeRef> in) { return t.Add(in[0], in[1]); }},
      {"sub", [](Tape& t, std::span<const NodeRef> in) { return t.Sub(in[0], in[1]); }},
      {"mul", [](Tape& t, std::span<const NodeRef> in) { return t.Mul(in[0], in[1]); }},
      {"div", [](Tape& t, std::span<const NodeRef> in) { return t.Div(in[0], in[1]); }},
      {"sin", [](Tape& t, std::span<const NodeRef> in) { return t.Sin(in[0]); }},
      {"cos", [](Tape& t, std::span<const NodeRef> in) { return t.Cos(in[0]); }},
      {"tan", [](Tape& t, std::span<const NodeRef> in) { return t.Tan(in[0]); }},
      {"atan2", [](Tape& t, std::span<const NodeRef> in) { return t.Atan2(in[0], in[1]); }},
      {"exp", [](Tape& t, std::span<const NodeRef> in) { return t.Exp(in[0]); }},
      {"log", [](Tape& t, std::span<const NodeRef> in) { return t.Log(in[0]); }},
      {"sqrt", [](Tape& t, std::span<const NodeRef> in) { return t.Sqrt(in[0]); }},
      {"dot", [](Tape& t, std::span<const NodeRef> in) {
         return t.Dot(in.subspan(0, 1), in.subspan(1, 1));
       }},
  };
  const std::vector<double> point = {0.9, 0.4};
  double worst_prim = 0.0;
  for (const auto& [name, f] : prims) {
    const double e = grad::GradCheck(f, point, 1e-6);
    worst_prim = std::max(worst_prim, e);
    o.Check(e <= 1e-5, std::string("primitive ") + name);
  }

  const VehicleParams vp;
  const std::vector<double> sp = {3.0, -1.0, 0.7, 9.0, 1.2, 0.05};
  double worst_step = 0.0;
  for (int out = 0; out < 4; ++out) {
    const grad::RecordedFunction f = [&](Tape& t, std::span<const NodeRef> in) {
      const AgentStateT<Var> s{{&t, in[0]}, {&t, in[1]}, {&t, in[2]}, {&t, in[3]}};
      const auto n = StepAgent(s, ActionT<Var>{{&t, in[4]}, {&t, in[5]}}, 0.1, vp);
      const Var parts[4] = {n.x, n.y, n.yaw, n.speed};
      return parts[out].ref();
    };
    worst_step = std::max(worst_step, grad::GradCheck(f, sp, 1e-6));
  }
  o.Check(worst_step <= 1e-5, "one-step dynamics");

  // Full imagination: policy, dynamics and tracking loss over T = 10,
  // differentiated with respect to the first three ego actions. Other agents
  // are removed so the detached-others gradient is the full derivative.
  const RunConfig cfg = Config();
  const PolicyParams policy = PolicyParams::Initialize(cfg.policy, 31);
  double worst_roll = 0.0;
  for (ScenarioKind kind : {ScenarioKind::kCurve, ScenarioKind::kIntersection}) {
    Scenario sc = GenerateSynthetic(kind, 17);
    for (std::size_t j = 0; j < sc.tracks.size(); ++j) {
      if (static_cast<int>(j) != sc.ego_index) {
        std::fill(sc.tracks[j].valid.begin(), sc.tracks[j].valid.end(), 0);
      }
    }
    SimState s0 = InitialState(sc);
    s0.agents[sc.ego_index].y += 0.5;
    const auto h = ZeroHiddens(policy, s0.num_agents());
    const TrackingLoss loss(ExpertPositions(sc));
    for (bool mean : {true, false}) {
      auto run = [&](const std::vector<Action>& leaf, std::vector<double>* g) {
        Tape tape;
        ImagineOptions io;
        io.horizon = 10;
        io.spec = {mean, 3};
        io.tape = &tape;
        io.gradient_steps = 3;
        io.leaf_values = leaf;
        const auto r = ImagineRollout(s0, h, policy, io);
        const Var l = loss.Record(tape, r, 1.0);
        if (g != nullptr) {
          const auto adj = tape.Backward(l.ref());
          for (const auto& lf : r.leaves) {
            g->push_back(adj[lf.accel.ref()]);
            g->push_back(adj[lf.steer.ref()]);
          }
        }
        return l.value();
      };
      std::vector<double> g;
      const std::vector<Action> zero(3);
      run(zero, &g);
      for (int i = 0; i < 6; ++i) {
        const double step = i % 2 == 0 ? 1e-5 : 1e-7;
        std::vector<Action> up = zero, down = zero;
        (i % 2 == 0 ? up[i / 2].accel : up[i / 2].steer) += step;
        (i % 2 == 0 ? down[i / 2].accel : down[i / 2].steer) -= step;
        const double fd = (run(up, nullptr) - run(down, nullptr)) / (2 * step);
        worst_roll = std::max(worst_roll,
                              std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
      }
    }
  }
  o.Check(worst_roll <= 1e-4, "T=10 imagination");
  const double secs = Seconds(start);
  o.Check(secs < 60.0, "runtime under 1 min");
  o.Note(Fmt("max rel err: primitives %.2e, one step %.2e, imagination %.2e; "
             "%.1f s",
             worst_prim, worst_step, worst_roll, secs));
}

// 2. Reduction -----------------------------------------------------------------

void Reduction(Outcome& o) {
  const RunConfig cfg = Config();
  const PolicyParams policy = PolicyParams::Initialize(cfg.policy, 5);
  PlanConfig reactive;
  reactive.rollouts = 1;
  reactive.horizon = 1;
  reactive.execute = 1;
  reactive.step_size = {0.0, 0.0};
  reactive.mean_first = true;
  int plans = 0, loops = 0;
  for (int i = 0; i < 8; ++i) {
    const Scenario sc = GenerateSynthetic(static_cast<ScenarioKind>(i % 4), 50 + i);
    const SimState s0 = InitialState(sc);
    const auto h = ZeroHiddens(policy, s0.num_agents());
    const TrackingLoss loss(ExpertPositions(sc));
    const PlanResult p = Plan(s0, h, policy, loss, reactive);
    const PolicyOutput out = PolicyStep(policy, h[sc.ego_index],
                                        Observe(s0, sc.ego_index, policy.config.obs));
    const Action want = MeanAction(out.mixture, policy.config.vehicle);
    plans += p.actions.size() == 1 && p.actions[0] == want;
    const ControlResult a = ControlLoop(sc, policy, loss, reactive);
    const ControlResult b = PolicyRollout(sc, policy);
    loops += a.ego_states == b.ego_states && a.ade == b.ade &&
             a.collision == b.collision && a.offroad == b.offroad;
  }
  o.Check(plans == 8, "plan action equals policy mean action bit for bit");
  o.Check(loops == 8, "control loop equals plain policy rollout");
  o.Note(Fmt("%g/8 plan actions and %g/8 control loops bit-identical", plans,
             loops));
}

// 3. Softmax -------------------------------------------------------------------

void Softmax(Outcome& o) {
  Rng rng(3);
  double worst_sum = 0.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> l(1 + rng.Index(16));
    for (double& v : l) v = 50 * rng.Uniform();
    const auto w = SoftmaxWeights(l, std::pow(10.0, rng.Uniform(-6, 2)));
    double s = 0.0;
    for (double v : w) s += v;
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
  o.Check(worst_sum <= 1e-9, "weights sum to 1");
  const std::vector<double> two = {0.0, 1.0};
  const double w0 = SoftmaxWeights(two, 1.0)[0];
  const double want = 1.0 / (1.0 + std::exp(-1.0));
  o.Check(std::abs(w0 - want) <= 1e-9, "w_0 for losses (0, 1), tau 1");

  const RunConfig cfg = Config();
  const PolicyParams policy = PolicyParams::Initialize(cfg.policy, 8);
  double worst_gap = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Scenario sc = GenerateSynthetic(static_cast<ScenarioKind>(i), 70 + i);
    PlanConfig pc = cfg.plan;
    pc.temperature = 1e-6;
    const SimState s0 = InitialState(sc);
    const PlanResult r = Plan(s0, ZeroHiddens(policy, s0.num_agents()), policy,
                              TrackingLoss(ExpertPositions(sc)), pc);
    const auto best = std::min_element(r.losses.begin(), r.losses.end()) -
                      r.losses.begin();
    for (std::size_t t = 0; t < r.actions.size(); ++t) {
      worst_gap = std::max(
          {worst_gap,
           std::abs(r.actions[t].accel - r.rollouts[best].refined[t].accel),
           std::abs(r.actions[t].steer - r.rollouts[best].refined[t].steer)});
    }
  }
  o.Check(worst_gap <= 1e-6, "tau 1e-6 selects the argmin rollout");
  o.Note(Fmt("max |sum-1| %.1e, |w0-1/(1+e^-1)| %.1e, argmin gap %.1e",
             worst_sum, std::abs(w0 - want), worst_gap));
}

// 4. Detector oracles --------------------------------------------------------------

bool InsideBox(const OrientedBox& b, double px, double py) {
  const double dx = px - b.center.x, dy = py - b.center.y;
  const double u = std::cos(b.yaw) * dx + std::sin(b.yaw) * dy;
  const double v = -std::sin(b.yaw) * dx + std::cos(b.yaw) * dy;
  return std::abs(u) <= b.length / 2 && std::abs(v) <= b.width / 2;
}

bool SampledOverlap(const OrientedBox& a, const OrientedBox& b) {
  auto probe = [](const OrientedBox& p, const OrientedBox& q) {
    const double c = std::cos(p.yaw), s = std::sin(p.yaw);
    const double k[5][2] = {{1, 1}, {1, -1}, {-1, -1}, {-1, 1}, {1, 1}};
    for (int e = 0; e < 4; ++e) {
      for (int i = 0; i <= 200; ++i) {
        const double f = i / 200.0;
        const double u = p.length / 2 * (k[e][0] + f * (k[e + 1][0] - k[e][0]));
        const double v = p.width / 2 * (k[e][1] + f * (k[e + 1][1] - k[e][1]));
        if (InsideBox(q, p.center.x + c * u - s * v, p.center.y + s * u + c * v)) {
          return true;
        }
      }
    }
    return false;
  };
  return probe(a, b) || probe(b, a);
}

double OracleSegmentDistance(Point2 p, Point2 a, Point2 b) {
  const double ex = b.x - a.x, ey = b.y - a.y;
  const double len = std::hypot(ex, ey);
  const double da = std::hypot(p.x - a.x, p.y - a.y);
  const double db = std::hypot(p.x - b.x, p.y - b.y);
  const double along = ((p.x - a.x) * ex + (p.y - a.y) * ey) / len;
  if (along <= 0.0 || along >= len) return std::min(da, db);
  return std::abs((p.x - a.x) * ey - (p.y - a.y) * ex) / len;
}

void Detectors(Outcome& o) {
  const auto start = Clock::now();
  Rng rng(44);
  int obb_cmp = 0, obb_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const OrientedBox a{{0, 0}, rng.Uniform(-3.2, 3.2), rng.Uniform(1, 5),
                        rng.Uniform(0.5, 2.5)};
    const OrientedBox b{{rng.Uniform(-5, 5), rng.Uniform(-5, 5)},
                        rng.Uniform(-3.2, 3.2), rng.Uniform(1, 5),
                        rng.Uniform(0.5, 2.5)};
    auto resized = [](OrientedBox x, double d) {
      x.length += 2 * d;
      x.width += 2 * d;
      return x;
    };
    if (ObbOverlap(resized(a, 0.05), resized(b, 0.05)) !=
        ObbOverlap(resized(a, -0.05), resized(b, -0.05))) {
      continue;  // tangency band
    }
    ++obb_cmp;
    obb_bad += ObbOverlap(a, b) != SampledOverlap(a, b);
  }
  o.Check(obb_bad == 0, "obb_overlap vs sampling oracle");

  const Scenario sc = GenerateSynthetic(ScenarioKind::kIntersection, 9);
  const Roadgraph& rg = sc.roadgraph;
  int off_cmp = 0, off_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const AgentState s{rng.Uniform(-60, 60), rng.Uniform(-60, 60),
                       rng.Uniform(-3, 3), 5.0};
    double best = INFINITY;
    for (const Polyline& pl : rg.polylines) {
      if (pl.type != PolylineType::kLaneCenter) continue;
      for (std::size_t k = 0; k + 1 < pl.points.size(); ++k) {
        best = std::min(best, OracleSegmentDistance({s.x, s.y}, pl.points[k],
                                                    pl.points[k + 1]));
      }
    }
    if (std::abs(best - rg.lane_half_width) < 1e-9) continue;
    ++off_cmp;
    off_bad += OffroadFlag(s, 4.5, 2.0, rg) != (best > rg.lane_half_width);
  }
  o.Check(off_bad == 0, "offroad vs segment oracle");
  const double secs = Seconds(start);
  o.Check(secs < 60.0, "runtime under 1 min");
  o.Note(Fmt("obb %g/%g agree, offroad %g/%g agree", obb_cmp - obb_bad, obb_cmp,
             off_cmp - off_bad, off_cmp) +
         Fmt(", %.1f s", secs));
}

// 5. Tracking ablation ------------------------------------------------------------

struct Trained {
  PolicyParams policy;
  double train_seconds = 0.0;
};

Trained TrainShippedPolicy(const RunConfig& cfg) {
  const auto start = Clock::now();
  const auto scenarios = Bare(LoadScenarioSet(cfg.train_scenarios));
  const PolicyParams init =
      PolicyParams::Initialize(cfg.policy, HashSeed({cfg.seed, 0x1a17}));
  Trained t{ApgTrain(scenarios, init, cfg.train), 0.0};
  t.train_seconds = Seconds(start);
  return t;
}

void TrackingAblation(Outcome& o, const RunConfig& cfg, const Trained& t,
                      double* max_plan_time) {
  const auto start = Clock::now();
  const auto suite = LoadScenarioSet(cfg.scenarios);
  o.Check(suite.size() == 50, "suite has 50 scenarios");
  SuiteOptions opts;
  opts.plan = cfg.plan;
  const AblationResult r = RunAblation(suite, t.policy, opts, {1, 2, 4, 8});
  bool ok = true;
  for (const auto& c : r.grid) ok = ok && c.result.ok();
  for (const auto& c : r.k_sweep) ok = ok && c.result.ok();
  o.Check(ok, "no scenario errors");
  const double reactive = r.grid[0].result.aggregates.mean_ade_m;
  const double grads = r.grid[1].result.aggregates.mean_ade_m;
  const double critic = r.grid[2].result.aggregates.mean_ade_m;
  const double full = r.grid[3].result.aggregates.mean_ade_m;
  o.Check(grads < reactive, "reactive+gradients < reactive");
  o.Check(critic < reactive, "sim-as-critic < reactive");
  o.Check(full <= 0.5 * reactive, "full <= 0.5 x reactive");
  std::string sweep;
  for (std::size_t i = 0; i < r.k_sweep.size(); ++i) {
    const double a = r.k_sweep[i].result.aggregates.mean_ade_m;
    sweep += Fmt(i ? ", %.3f" : "%.3f", a);
    if (i > 0) {
      const double prev = r.k_sweep[i - 1].result.aggregates.mean_ade_m;
      o.Check(a <= 1.05 * prev, "ADE non-increasing over K (5% tolerance)");
    }
  }
  *max_plan_time = 0.0;
  for (const auto& row : r.grid[3].result.rows) {
    *max_plan_time = std::max(*max_plan_time, row.plan_time_s);
  }
  const double secs = Seconds(start) + t.train_seconds;
  o.Check(secs < 1800.0, "runtime under 30 min");
  o.Note(Fmt("mean ADE m: reactive %.3f, +gradients %.3f, sim-as-critic %.3f, "
             "full %.3f",
             reactive, grads, critic, full) +
         "; K=1,2,4,8: " + sweep +
         Fmt("; %.0f s incl. %.0f s training", secs, t.train_seconds));
}

// 6. Classifier guidance -------------------------------------------------------------

void Guidance(Outcome& o, const RunConfig& cfg, const Trained& t) {
  const auto start = Clock::now();
  const auto data_scenarios = Bare(LoadScenarioSet(cfg.classifier_scenarios));
  const auto data = GenerateClassifierDataset(t.policy, data_scenarios,
                                              cfg.classifier_perturb,
                                              HashSeed({cfg.seed, 0xc1a5}));
  ClassifierTrainConfig ct = cfg.classifier_train;
  ct.classifier.obs = t.policy.config.obs;
  ClassifierReport rep;
  const ClassifierParams cls = TrainClassifier(data, ct, &rep);
  o.Check(rep.auc_collision >= 0.9, "held-out AUC collision >= 0.9");
  o.Check(rep.auc_offroad >= 0.9, "held-out AUC offroad >= 0.9");

  // Near-collision suite: the two kinds with crossing or blocking traffic.
  ScenarioSetSpec spec;
  spec.kinds = {ScenarioKind::kIntersection, ScenarioKind::kObstacleLane};
  spec.count = 50;
  spec.seed = 4;
  const auto suite = GenerateScenarioSet(spec);
  SuiteOptions opts;
  opts.loss = LossKind::kGuided;
  opts.classifier = &cls;
  opts.plan = cfg.plan;
  const auto cells = AblationCells(cfg.plan);
  auto overlap = [&](const PlanConfig& pc, bool* ok) {
    SuiteOptions so = opts;
    so.plan = pc;
    const SuiteResult r = RunSuite(suite, t.policy, so);
    *ok = *ok && r.ok();
    return r.aggregates.overlap_rate;
  };
  bool ok = true;
  const double reactive = overlap(cells[0].plan, &ok);
  const double off = overlap(cells[2].plan, &ok);
  const double on = overlap(cells[3].plan, &ok);
  o.Check(ok, "no scenario errors");
  o.Check(on <= 0.7 * reactive, "guided DSS cuts overlap by >= 30%");
  o.Check(on <= off, "gradient-on overlap <= gradient-off overlap");
  const double secs = Seconds(start);
  o.Check(secs < 1800.0, "runtime under 30 min");
  o.Note(Fmt("AUC collision %.3f, offroad %.3f (%g held-out states)",
             rep.auc_collision, rep.auc_offroad,
             static_cast<double>(rep.holdout_size)) +
         Fmt("; overlap reactive %.2f, K=8 no gradient %.2f, K=8 guided %.2f",
             reactive, off, on) +
         Fmt("; %.0f s", secs));
}

// 7. Cost accounting ---------------------------------------------------------------

void Cost(Outcome& o, const RunConfig& cfg, const Trained& t,
          double max_plan_time) {
  const auto suite = LoadScenarioSet(cfg.scenarios);
  // T = M: every plan imagines T steps and L / M plans cover the log.
  PlanConfig exact = cfg.plan;
  exact.rollouts = 8;
  exact.horizon = 10;
  exact.execute = 10;
  int matched = 0, counted = 0, expected_ok = 0;
  for (const auto& n : suite) {
    const Scenario& sc = n.scenario;
    bool all_valid = true;
    for (const auto& tr : sc.tracks) {
      all_valid = all_valid && std::all_of(tr.valid.begin(), tr.valid.end(),
                                           [](std::uint8_t v) { return v; });
    }
    if (!all_valid) continue;
    ++counted;
    const long n_agents = static_cast<long>(sc.tracks.size());
    const long plans = (sc.horizon + exact.execute - 1) / exact.execute;
    const ControlResult r =
        ControlLoop(sc, t.policy, TrackingLoss(ExpertPositions(sc)), exact);
    matched += r.policy_calls == 8L * 10 * n_agents * plans;
    // Shipped M = 3: the counter matches its own accounting of shortened
    // final horizons.
    if (&n - suite.data() < 5) {
      const ControlResult s =
          ControlLoop(sc, t.policy, TrackingLoss(ExpertPositions(sc)), cfg.plan);
      expected_ok += s.policy_calls == s.expected_policy_calls;
    } else {
      ++expected_ok;
    }
  }
  o.Check(counted > 0 && matched == counted, "policy calls = K*T*N*ceil(L/M)");
  o.Check(expected_ok == counted, "counter matches expected calls at M=3");
  o.Check(max_plan_time < 1.0, "per-scenario wall time < 1 s (K=8,T=10,M=3)");
  o.Note(Fmt("%g/%g scenarios exact; slowest scenario %.3f s", matched, counted,
             max_plan_time));
}

// 8. Determinism -------------------------------------------------------------------

std::string ReadAll(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every artifact of a short pipeline, as bytes.
std::vector<std::string> Artifacts(const RunConfig& base, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig cfg = base;
  cfg.timing = false;
  cfg.train.epochs = 2;
  ScenarioSetSpec tspec = cfg.train_scenarios;
  tspec.count = 8;
  const auto train = Bare(LoadScenarioSet(tspec));
  std::vector<TrainingCurveRow> curve;
  const PolicyParams policy = ApgTrain(
      train, PolicyParams::Initialize(cfg.policy, HashSeed({cfg.seed, 0x1a17})),
      cfg.train, &curve);
  SavePolicy(policy, dir / "policy.json");
  WriteTrainingCurve(curve, dir / "policy_curve.csv");

  const auto data = GenerateClassifierDataset(policy, train, 1.0, cfg.seed);
  ClassifierTrainConfig ct = cfg.classifier_train;
  ct.classifier.obs = policy.config.obs;
  ct.epochs = 2;
  std::vector<TrainingCurveRow> ccurve;
  const ClassifierParams cls = TrainClassifier(data, ct, nullptr, &ccurve);
  SaveClassifier(cls, dir / "classifier.json");
  WriteTrainingCurve(ccurve, dir / "classifier_curve.csv");

  ScenarioSetSpec sspec = cfg.scenarios;
  sspec.count = 6;
  const auto suite = LoadScenarioSet(sspec);
  SuiteOptions so;
  so.plan = cfg.plan;
  so.timing = false;
  const SuiteResult tracking = RunSuite(suite, policy, so);
  ExportCsv(tracking, dir / "suite.csv");
  ExportJson(tracking, dir / "suite.json");
  so.loss = LossKind::kGuided;
  so.classifier = &cls;
  ExportCsv(RunSuite(suite, policy, so), dir / "guided.csv");

  const Scenario& sc = suite[0].scenario;
  const ControlResult r = ControlLoop(sc, policy, TrackingLoss(ExpertPositions(sc)),
                                      cfg.plan);
  WriteSvg(sc, {{"executed", r.trajectory}}, dir / "scenario.svg");
  WriteFile(dir / "run_config.json", SerializeRunConfig(cfg));

  std::vector<std::string> out;
  for (const char* f : {"policy.json", "policy_curve.csv", "classifier.json",
                        "classifier_curve.csv", "suite.csv", "suite.json",
                        "guided.csv", "scenario.svg", "run_config.json"}) {
    out.push_back(ReadAll(dir / f));
  }
  return out;
}

void Determinism(Outcome& o, const RunConfig& cfg) {
  const fs::path root = fs::temp_directory_path() / "dss_acceptance";
  const auto a = Artifacts(cfg, root / "a");
  const auto b = Artifacts(cfg, root / "b");
  int same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same += !a[i].empty() && a[i] == b[i];
  }
  o.Check(same == static_cast<int>(a.size()), "byte-identical artifacts");
  o.Note(Fmt("%g/%g artifacts byte-identical across two runs", same,
             static_cast<double>(a.size())));
}

}  // namespace

int main() {
  Run(1, "gradient correctness", Gradients);
  Run(2, "reduction exactness", Reduction);
  Run(3, "softmax contract", Softmax);
  Run(4, "detector oracles", Detectors);

  RunConfig cfg;
  Trained trained;
  double max_plan_time = INFINITY;
  bool have_policy = false;
  Run(5, "tracking ablation", [&](Outcome& o) {
    cfg = Config();
    trained = TrainShippedPolicy(cfg);
    have_policy = true;
    TrackingAblation(o, cfg, trained, &max_plan_time);
  });
  Run(6, "classifier guidance", [&](Outcome& o) {
    o.Check(have_policy, "trained policy available");
    if (have_policy) Guidance(o, cfg, trained);
  });
  Run(7, "cost accounting", [&](Outcome& o) {
    o.Check(have_policy, "trained policy available");
    if (have_policy) Cost(o, cfg, trained, max_plan_time);
  });
  Run(8, "determinism", [&](Outcome& o) { Determinism(o, Config()); });

  std::printf("%s: %d of 8 criteria failed\n", failures ? "FAIL" : "PASS",
              failures);
  return failures ? 1 : 0;
}
