#include "dss/training.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "dss/nn.h"
#include "dss/observation.h"

namespace dss {

// Optimizer ---------------------------------------------------------------

Adam::Adam(std::size_t size, const AdamConfig& cfg)
    : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

void Adam::Step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw TrainingError("optimizer: parameter count changed");
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, steps_);
  const double c2 = 1.0 - std::pow(cfg_.beta2, steps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
  }
}

double ClipGlobalNorm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
  return norm;
}

void ValidateTrainConfig(const TrainConfig& cfg, int horizon) {
  const AdamConfig& a = cfg.adam;
  if (!(a.learning_rate > 0.0) || !(a.beta1 > 0.0 && a.beta1 < 1.0) ||
      !(a.beta2 > 0.0 && a.beta2 < 1.0) || !(a.epsilon > 0.0)) {
    throw TrainingError("optimizer settings must be positive (betas < 1)");
  }
  if (cfg.window < 1 || cfg.window > horizon) {
    throw TrainingError("window must lie in [1, horizon]");
  }
  if (!(cfg.clip_norm > 0.0)) throw TrainingError("clip_norm must be > 0");
  if (cfg.epochs < 1 || cfg.batch_size < 1) {
    throw TrainingError("epochs and batch_size must be positive");
  }
  if (!(cfg.logit_weight >= 0.0) || !(cfg.speed_weight >= 0.0) ||
      !(cfg.yaw_weight >= 0.0)) {
    throw TrainingError("loss weights must be non-negative");
  }
}

// Policy training ------------------------------------------------------------

std::uint64_t ApgNoiseSeed(std::uint64_t seed, int epoch, int scenario,
                           int window) {
  return HashSeed({seed, 0xa96ULL, static_cast<std::uint64_t>(epoch),
                   static_cast<std::uint64_t>(scenario),
                   static_cast<std::uint64_t>(window)});
}

namespace {

// log sum exp(logits) - logits[c], shifted by the largest logit.
grad::Var CrossEntropy(const std::array<grad::Var, kComponents>& logits,
                       int c) {
  double top = logits[0].value();
  for (const grad::Var& l : logits) top = std::max(top, l.value());
  std::vector<grad::Var> e;
  for (const grad::Var& l : logits) e.push_back(grad::exp(l - top));
  return grad::log(grad::Sum(e)) + top - logits[c];
}

}  // namespace

WindowResult ApgWindow(const PolicyParams& params, SimState& state,
                       std::vector<double>& hidden, const TrainConfig& tc,
                       Rng& noise, bool compute_gradient) {
  const Scenario& sc = *state.scenario;
  const PolicyConfig& cfg = params.config;
  const VehicleParams& vp = cfg.vehicle;
  const int ego = sc.ego_index;
  const int steps = std::min(tc.window, sc.horizon - state.t);
  if (steps < 1) throw TrainingError("window starts at the end of the log");
  if (static_cast<int>(hidden.size()) != cfg.hidden) {
    throw TrainingError("hidden state has the wrong size");
  }

  thread_local grad::Tape tape;
  tape.Reset();
  nn::TrainableBackend backend(tape, params.values);
  const PolicyLayout layout = MakePolicyLayout(cfg);
  const auto& expert = sc.ego().states;

  const AgentState& e0 = state.agents[ego];
  AgentStateT<grad::Var> ego_state{
      grad::MakeConstant(tape, e0.x), grad::MakeConstant(tape, e0.y),
      grad::MakeConstant(tape, e0.yaw), grad::MakeConstant(tape, e0.speed)};
  std::vector<grad::Var> h;
  for (double v : hidden) h.push_back(grad::MakeConstant(tape, v));

  WindowResult res;
  std::vector<grad::Var> state_terms;
  std::vector<grad::Var> logit_terms;
  for (int k = 0; k < steps; ++k) {
    const auto obs = Observe(ego_state, ego, state, cfg.obs);
    auto out = PolicyForward(layout, cfg, backend, std::span<const grad::Var>(h),
                             std::span<const grad::Var>(obs.features));
    const AgentState& target = expert[state.t + 1];
    const int c = SelectComponentNearExpert(ValueOf(out.mixture),
                                            state.agents[ego], target, sc.dt,
                                            vp, tc.speed_weight,
                                            tc.yaw_weight);
    res.components.push_back(c);
    const double n0 = noise.Normal();
    const double n1 = noise.Normal();
    const ActionT<grad::Var> a = SampleAction(out.mixture, c, {n0, n1}, vp);
    ego_state = StepAgent(ego_state, a, sc.dt, vp);
    const grad::Var dx = ego_state.x - target.x;
    const grad::Var dy = ego_state.y - target.y;
    const grad::Var d2 = dx * dx + dy * dy;
    const grad::Var dv = ego_state.speed - target.speed;
    const grad::Var dh = WrapAngle(ego_state.yaw - target.yaw);
    state_terms.push_back(d2 + tc.speed_weight * (dv * dv) +
                          tc.yaw_weight * (dh * dh));
    logit_terms.push_back(CrossEntropy(out.mixture.logits, c));
    res.distance_sum += std::sqrt(d2.value());

    state = StepSim(state, Action{a.accel.value(), a.steer.value()},
                    ReplayLog{}, vp);
    state.agents[ego] = {ego_state.x.value(), ego_state.y.value(),
                         ego_state.yaw.value(), ego_state.speed.value()};
    h = std::move(out.hidden);
  }
  res.steps = steps;
  const grad::Var state_error = grad::Sum(state_terms) / steps;
  const grad::Var logit = grad::Sum(logit_terms) / steps;
  const grad::Var loss = state_error + tc.logit_weight * logit;
  res.state_loss = state_error.value();
  res.logit_loss = logit.value();
  res.loss = loss.value();
  if (!std::isfinite(res.loss)) throw TrainingError("non-finite loss");
  if (compute_gradient) {
    const grad::Adjoints adj = tape.Backward(loss.ref());
    const auto g = adj.Range(backend.first(), backend.count());
    res.gradient.assign(g.begin(), g.end());
  }
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = h[i].value();
  return res;
}

namespace {

std::vector<int> Permutation(int n, std::uint64_t seed) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(p[i], p[rng.Index(i + 1)]);
  return p;
}

std::string Context(int epoch, int scenario, int t) {
  std::ostringstream s;
  s << "epoch " << epoch << ", scenario " << scenario << ", step " << t;
  return s.str();
}

}  // namespace

PolicyParams ApgTrain(std::span<const Scenario> scenarios,
                      const PolicyParams& init, const TrainConfig& cfg,
                      std::vector<TrainingCurveRow>* curve) {
  if (scenarios.empty()) throw TrainingError("no training scenarios");
  int min_horizon = std::numeric_limits<int>::max();
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto problems = Validate(scenarios[i]);
    if (!problems.empty()) {
      throw TrainingError("scenario " + std::to_string(i) +
                          " is invalid: " + problems.front());
    }
    min_horizon = std::min(min_horizon, scenarios[i].horizon);
  }
  ValidateTrainConfig(cfg, min_horizon);

  PolicyParams params = init;
  Adam adam(params.values.size(), cfg.adam);
  const int n = static_cast<int>(scenarios.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order =
        Permutation(n, HashSeed({cfg.seed, 0x0de7ULL,
                                 static_cast<std::uint64_t>(epoch)}));
    double loss_sum = 0.0;
    int loss_count = 0;
    double distance_sum = 0.0;
    long steps = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      std::vector<SimState> states;
      std::vector<std::vector<double>> hiddens;
      for (int i = 0; i < b; ++i) {
        states.push_back(InitialState(scenarios[order[start + i]]));
        hiddens.emplace_back(params.config.hidden, 0.0);
      }
      for (int w = 0;; ++w) {
        std::vector<int> active;
        for (int i = 0; i < b; ++i) {
          if (states[i].t < states[i].scenario->horizon) active.push_back(i);
        }
        if (active.empty()) break;
        const int m = static_cast<int>(active.size());
        std::vector<WindowResult> results(m);
        std::vector<std::exception_ptr> errors(m);
        std::vector<int> start_t(m);
#pragma omp parallel for schedule(dynamic) if (cfg.parallel)
        for (int j = 0; j < m; ++j) {
          const int i = active[j];
          start_t[j] = states[i].t;
          try {
            Rng noise(ApgNoiseSeed(cfg.seed, epoch, order[start + i], w));
            results[j] =
                ApgWindow(params, states[i], hiddens[i], cfg, noise, true);
          } catch (...) {
            errors[j] = std::current_exception();
          }
        }
        for (int j = 0; j < m; ++j) {
          if (!errors[j]) continue;
          const std::string where =
              Context(epoch, order[start + active[j]], start_t[j]);
          try {
            std::rethrow_exception(errors[j]);
          } catch (const std::exception& e) {
            throw TrainingError("training diverged at " + where + ": " +
                                e.what());
          }
        }
        std::vector<double> g(params.values.size(), 0.0);
        for (int j = 0; j < m; ++j) {
          const WindowResult& r = results[j];
          for (std::size_t p = 0; p < g.size(); ++p) g[p] += r.gradient[p];
          loss_sum += r.loss;
          ++loss_count;
          distance_sum += r.distance_sum;
          steps += r.steps;
        }
        for (double& v : g) v /= m;
        for (double v : g) {
          if (!std::isfinite(v)) {
            throw TrainingError("non-finite gradient at " +
                                Context(epoch, order[start + active[0]],
                                        start_t[0]));
          }
        }
        ClipGlobalNorm(g, cfg.clip_norm);
        adam.Step(params.values, g);
      }
    }
    if (curve != nullptr) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      curve->push_back({epoch, loss_sum / loss_count,
                        distance_sum / static_cast<double>(steps), nan, nan});
    }
  }
  return params;
}

void WriteTrainingCurve(std::span<const TrainingCurveRow> rows,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,loss,ade,positive_rate,auc\n";
  auto field = [&](double v) {
    if (std::isfinite(v)) out << v;
  };
  out << std::setprecision(10);
  for (const TrainingCurveRow& r : rows) {
    out << r.epoch << ',';
    field(r.loss);
    out << ',';
    field(r.ade);
    out << ',';
    field(r.positive_rate);
    out << ',';
    field(r.auc);
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// Classifier data --------------------------------------------------------------

DatasetStats ComputeStats(std::span<const LabeledState> data) {
  DatasetStats s;
  s.size = data.size();
  if (data.empty()) return s;
  double c = 0.0, o = 0.0;
  for (const LabeledState& d : data) {
    c += d.labels.collision;
    o += d.labels.offroad;
  }
  s.collision_rate = c / data.size();
  s.offroad_rate = o / data.size();
  return s;
}

std::vector<LabeledState> GenerateClassifierDataset(
    const PolicyParams& policy, std::span<const Scenario> scenarios,
    double perturb, std::uint64_t seed) {
  constexpr double kCorrelation = 0.9;
  const double fresh = std::sqrt(1.0 - kCorrelation * kCorrelation);
  const PolicyConfig& cfg = policy.config;
  std::vector<std::vector<LabeledState>> per(scenarios.size());

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(scenarios.size()); ++i) {
    const Scenario& sc = scenarios[i];
    const int ego = sc.ego_index;
    Rng rng(HashSeed({seed, 0xda7aULL, static_cast<std::uint64_t>(i)}));
    SimState s = InitialState(sc);
    std::vector<double> h(cfg.hidden, 0.0);
    double na = 0.0, ns = 0.0;
    while (s.t < sc.horizon) {
      const PolicyOutput out = PolicyStep(policy, h, Observe(s, ego, cfg.obs));
      h = out.hidden;
      na = kCorrelation * na + fresh * rng.Normal();
      ns = kCorrelation * ns + fresh * rng.Normal();
      Action a = MeanAction(out.mixture, cfg.vehicle);
      a.accel += perturb * cfg.accel_scale * na;
      a.steer += perturb * cfg.steer_scale * ns;
      s = StepSim(s, a, ReplayLog{}, cfg.vehicle);
      LabeledState d;
      d.state = s;
      d.obs = Observe(s, ego, cfg.obs);
      d.labels = DetectEvents(s, ego);
      per[i].push_back(std::move(d));
    }
  }
  std::vector<LabeledState> all;
  for (auto& v : per) {
    for (auto& d : v) all.push_back(std::move(d));
  }
  return all;
}

// Classifier training ------------------------------------------------------

double RocAuc(std::span<const double> scores,
              std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw TrainingError("scores and labels differ in length");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  // Mann-Whitney U with mid-ranks for ties.
  double positive_rank_sum = 0.0;
  double positives = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * (static_cast<double>(i + 1) + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]]) {
        positive_rank_sum += mid;
        positives += 1.0;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(scores.size()) - positives;
  if (positives == 0.0 || negatives == 0.0) {
    throw TrainingError("AUC needs both classes");
  }
  return (positive_rank_sum - positives * (positives + 1.0) / 2.0) /
         (positives * negatives);
}

namespace {

// Stable binary cross-entropy of a logit: softplus(z) - y z.
double Bce(double z, bool y) { return nn::Softplus(z) - (y ? z : 0.0); }
grad::Var Bce(const grad::Var& z, bool y) {
  return y ? nn::Softplus(z) - z : nn::Softplus(z);
}

void CheckDims(const ClassifierConfig& cfg,
               std::span<const LabeledState> data) {
  for (const LabeledState& d : data) {
    if (static_cast<int>(d.obs.features.size()) != cfg.obs.size()) {
      throw TrainingError("sample feature count does not match classifier");
    }
  }
}

}  // namespace

double ClassifierLoss(const ClassifierParams& params,
                      std::span<const LabeledState> data) {
  if (data.empty()) throw TrainingError("empty data set");
  CheckDims(params.config, data);
  const ClassifierLayout l = MakeClassifierLayout(params.config);
  nn::PlainBackend backend(params.values);
  double total = 0.0;
  for (const LabeledState& d : data) {
    const auto z = ClassifierLogits(l, params.config, backend,
                                    std::span<const double>(d.obs.features));
    total += Bce(z[0], d.labels.collision) + Bce(z[1], d.labels.offroad);
  }
  return total / data.size();
}

ClassifierReport EvaluateClassifier(const ClassifierParams& params,
                                    std::span<const LabeledState> data) {
  if (data.empty()) throw TrainingError("empty data set");
  CheckDims(params.config, data);
  const ClassifierLayout l = MakeClassifierLayout(params.config);
  nn::PlainBackend backend(params.values);
  std::vector<double> pc, po;
  std::vector<std::uint8_t> yc, yo;
  double correct_c = 0.0, correct_o = 0.0, total = 0.0;
  for (const LabeledState& d : data) {
    const auto z = ClassifierLogits(l, params.config, backend,
                                    std::span<const double>(d.obs.features));
    pc.push_back(z[0]);
    po.push_back(z[1]);
    yc.push_back(d.labels.collision);
    yo.push_back(d.labels.offroad);
    correct_c += (z[0] > 0.0) == d.labels.collision;
    correct_o += (z[1] > 0.0) == d.labels.offroad;
    total += Bce(z[0], d.labels.collision) + Bce(z[1], d.labels.offroad);
  }
  ClassifierReport r;
  r.auc_collision = RocAuc(pc, yc);
  r.auc_offroad = RocAuc(po, yo);
  r.accuracy_collision = correct_c / data.size();
  r.accuracy_offroad = correct_o / data.size();
  r.final_loss = total / data.size();
  r.holdout_size = data.size();
  return r;
}

ClassifierParams TrainClassifier(std::span<const LabeledState> data,
                                 const ClassifierTrainConfig& cfg,
                                 ClassifierReport* report,
                                 std::vector<TrainingCurveRow>* curve) {
  if (cfg.epochs < 1 || cfg.batch_size < 1 ||
      !(cfg.holdout > 0.0 && cfg.holdout < 1.0) || !(cfg.clip_norm > 0.0)) {
    throw TrainingError("classifier training settings out of range");
  }
  CheckDims(cfg.classifier, data);
  const std::vector<int> perm =
      Permutation(static_cast<int>(data.size()),
                  HashSeed({cfg.seed, 0x5b1177ULL}));
  const std::size_t n_hold = static_cast<std::size_t>(
      std::ceil(cfg.holdout * static_cast<double>(data.size())));
  std::vector<LabeledState> hold, train;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    (i < n_hold ? hold : train).push_back(data[perm[i]]);
  }
  const DatasetStats ts = ComputeStats(train);
  const DatasetStats hs = ComputeStats(hold);
  auto single = [](double rate) { return rate == 0.0 || rate == 1.0; };
  if (train.empty() || hold.empty() || single(ts.collision_rate) ||
      single(ts.offroad_rate) || single(hs.collision_rate) ||
      single(hs.offroad_rate)) {
    throw TrainingError(
        "classifier data needs both classes for each head in the training "
        "and held-out splits");
  }

  ClassifierParams params =
      ClassifierParams::Initialize(cfg.classifier, HashSeed({cfg.seed, 1}));
  const ClassifierLayout layout = MakeClassifierLayout(cfg.classifier);
  Adam adam(params.values.size(), cfg.adam);
  const DatasetStats all = ComputeStats(data);
  double last_loss = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order =
        Permutation(static_cast<int>(train.size()),
                    HashSeed({cfg.seed, 2, static_cast<std::uint64_t>(epoch)}));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train.size();
         start += cfg.batch_size) {
      const std::size_t b =
          std::min<std::size_t>(cfg.batch_size, train.size() - start);
      thread_local grad::Tape tape;
      tape.Reset();
      nn::TrainableBackend backend(tape, params.values);
      std::vector<grad::Var> terms;
      for (std::size_t k = 0; k < b; ++k) {
        const LabeledState& d = train[order[start + k]];
        std::vector<grad::Var> x;
        for (double f : d.obs.features) x.push_back(grad::MakeConstant(tape, f));
        const auto z = ClassifierLogits(layout, cfg.classifier, backend,
                                        std::span<const grad::Var>(x));
        terms.push_back(Bce(z[0], d.labels.collision));
        terms.push_back(Bce(z[1], d.labels.offroad));
      }
      const grad::Var loss = grad::Sum(terms) / static_cast<double>(b);
      if (!std::isfinite(loss.value())) {
        throw TrainingError("classifier training diverged at epoch " +
                            std::to_string(epoch));
      }
      epoch_loss += loss.value() * b;
      const grad::Adjoints adj = tape.Backward(loss.ref());
      const auto g = adj.Range(backend.first(), backend.count());
      std::vector<double> grad(g.begin(), g.end());
      ClipGlobalNorm(grad, cfg.clip_norm);
      adam.Step(params.values, grad);
    }
    last_loss = epoch_loss / train.size();
    if (curve != nullptr) {
      const ClassifierReport r = EvaluateClassifier(params, hold);
      curve->push_back({epoch, last_loss,
                        std::numeric_limits<double>::quiet_NaN(),
                        0.5 * (all.collision_rate + all.offroad_rate),
                        0.5 * (r.auc_collision + r.auc_offroad)});
    }
  }
  if (report != nullptr) {
    *report = EvaluateClassifier(params, hold);
    report->train_size = train.size();
    report->final_loss = last_loss;
  }
  return params;
}

}  // namespace dss
