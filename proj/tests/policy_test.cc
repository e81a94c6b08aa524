#include "dss/policy.h"

#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "dss/checkpoint.h"
#include "dss/classifier.h"
#include "dss/rng.h"
#include "test_support.h"

namespace dss {
namespace {

Observation RandomObservation(const ObsConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Observation obs;
  for (int i = 0; i < cfg.size(); ++i) obs.features.push_back(20 * rng.Normal());
  return obs;
}

TEST(PolicyTest, LayoutCoversEveryParameter) {
  const PolicyConfig cfg = testing::SmallPolicyConfig();
  const PolicyLayout l = MakePolicyLayout(cfg);
  std::size_t sum = 0;
  for (const nn::Dense* d : l.layers()) sum += d->size();
  EXPECT_EQ(sum, l.total);
  EXPECT_EQ(l.encoder1.in, cfg.obs.size());
  EXPECT_EQ(l.head.out, 5 * kComponents);
  EXPECT_EQ(PolicyParams::Initialize(cfg, 1).values.size(), l.total);
}

TEST(PolicyTest, RecordedForwardIsBitIdenticalToPlain) {
  const PolicyParams p = testing::SmallPolicy();
  std::vector<double> hidden(p.config.hidden, 0.0);
  for (int step = 0; step < 5; ++step) {
    const Observation obs = RandomObservation(p.config.obs, step);
    const PolicyOutput plain = PolicyStep(p, hidden, obs);
    grad::Tape tape;
    std::vector<grad::Var> h, f;
    for (double v : hidden) h.push_back(grad::MakeVariable(tape, v));
    for (double v : obs.features) f.push_back(grad::MakeVariable(tape, v));
    const auto rec = PolicyStep(tape, p, h, ObservationT<grad::Var>{f});
    const Mixture m = ValueOf(rec.mixture);
    for (int k = 0; k < kComponents; ++k) {
      EXPECT_EQ(m.logits[k], plain.mixture.logits[k]);
      for (int d = 0; d < 2; ++d) {
        EXPECT_EQ(m.means[k][d], plain.mixture.means[k][d]);
        EXPECT_EQ(m.stds[k][d], plain.mixture.stds[k][d]);
      }
    }
    for (int i = 0; i < p.config.hidden; ++i) {
      EXPECT_EQ(rec.hidden[i].value(), plain.hidden[i]);
    }
    hidden = plain.hidden;
  }
}

TEST(PolicyTest, TrainableGradientsMatchDifferences) {
  const PolicyParams p = testing::SmallPolicy(4);
  const PolicyLayout layout = MakePolicyLayout(p.config);
  const Observation obs = RandomObservation(p.config.obs, 9);
  const std::vector<double> hidden(p.config.hidden, 0.1);
  // Scalar: mean accel of component 2 plus the first logit.
  auto evaluate = [&](const std::vector<double>& values) {
    nn::PlainBackend b(values);
    const auto out = PolicyForward(layout, p.config, b,
                                   std::span<const double>(hidden),
                                   std::span<const double>(obs.features));
    return out.mixture.means[2][0] + out.mixture.logits[0];
  };
  grad::Tape tape;
  nn::TrainableBackend backend(tape, p.values);
  std::vector<grad::Var> h, f;
  for (double v : hidden) h.push_back(grad::MakeConstant(tape, v));
  for (double v : obs.features) f.push_back(grad::MakeConstant(tape, v));
  const auto out = PolicyForward(layout, p.config, backend,
                                 std::span<const grad::Var>(h),
                                 std::span<const grad::Var>(f));
  const grad::Var y = out.mixture.means[2][0] + out.mixture.logits[0];
  EXPECT_EQ(y.value(), evaluate(p.values));
  const grad::Adjoints adj = tape.Backward(y.ref());
  for (std::size_t i = 0; i < p.values.size(); i += 37) {
    std::vector<double> up = p.values, down = p.values;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double fd = (evaluate(up) - evaluate(down)) / 2e-6;
    const double g = adj[backend.param(i)];
    EXPECT_LE(std::abs(g - fd) / std::max(1.0, std::abs(fd)), 1e-5) << i;
  }
}

TEST(PolicyTest, ProbabilitiesAreSoftmaxOfLogits) {
  Mixture m{};
  m.logits = {0.5, -1.0, 2.0, 0.0, 0.0, 3.0};
  const auto p = ComponentProbabilities(m);
  double z = 0.0;
  for (double l : m.logits) z += std::exp(l);
  double sum = 0.0;
  for (int k = 0; k < kComponents; ++k) {
    EXPECT_NEAR(p[k], std::exp(m.logits[k]) / z, 1e-15);
    sum += p[k];
  }
  EXPECT_NEAR(sum, 1.0, 1e-15);
  m.logits = {1000.0, 0, 0, 0, 0, 0};
  EXPECT_NEAR(ComponentProbabilities(m)[0], 1.0, 1e-15);
}

TEST(PolicyTest, DrawComponentFollowsProbabilities) {
  Mixture m{};
  m.logits = {0.0, 1.0, -0.5, 0.3, 0.0, -2.0};
  const auto p = ComponentProbabilities(m);
  std::array<int, kComponents> counts{};
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) {
    ++counts[DrawComponent(m, (i + 0.5) / kDraws)];
  }
  for (int k = 0; k < kComponents; ++k) {
    EXPECT_NEAR(counts[k] / double(kDraws), p[k], 2.0 / kDraws);
  }
}

TEST(PolicyTest, SampleActionMomentsMatchComponent) {
  Mixture m{};
  m.means[3] = {0.5, 0.02};
  m.stds[3] = {0.4, 0.05};
  const VehicleParams vp;
  Rng rng(17);
  constexpr int kN = 40000;
  double s[2] = {0, 0}, s2[2] = {0, 0};
  for (int i = 0; i < kN; ++i) {
    const double n0 = rng.Normal(), n1 = rng.Normal();
    const Action a = SampleAction(m, 3, {n0, n1}, vp);
    s[0] += a.accel;
    s[1] += a.steer;
    s2[0] += a.accel * a.accel;
    s2[1] += a.steer * a.steer;
  }
  for (int d = 0; d < 2; ++d) {
    const double mean = s[d] / kN;
    const double sd = std::sqrt(s2[d] / kN - mean * mean);
    // Five standard errors.
    EXPECT_NEAR(mean, m.means[3][d], 5 * m.stds[3][d] / std::sqrt(kN));
    EXPECT_NEAR(sd, m.stds[3][d], 5 * m.stds[3][d] / std::sqrt(2.0 * kN));
  }
  EXPECT_THROW(SampleAction(m, 6, {0, 0}, vp), PolicyError);
}

TEST(PolicyTest, MeanActionUsesModeWithLowestIndexTie) {
  Mixture m{};
  m.logits = {0.0, 2.0, 2.0, 0.0, 0.0, 0.0};
  m.means[1] = {1.0, 0.1};
  m.means[2] = {-1.0, -0.1};
  const Action a = MeanAction(m, VehicleParams{});
  EXPECT_EQ(a.accel, 1.0);
  EXPECT_EQ(a.steer, 0.1);
  m.means[1] = {50.0, 5.0};
  EXPECT_EQ(MeanAction(m, VehicleParams{}).accel, VehicleParams{}.max_accel);
}

TEST(PolicyTest, SelectComponentNearExpertMatchesProbeOracle) {
  const VehicleParams vp;
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Mixture m{};
    for (int k = 0; k < kComponents; ++k) {
      m.means[k] = {3 * rng.Normal(), 0.2 * rng.Normal()};
    }
    const AgentState ego{0, 0, 0.1 * rng.Normal(), 8 + rng.Normal()};
    const AgentState expert =
        StepAgent(ego, Action{2 * rng.Normal(), 0.1 * rng.Normal()}, 0.1, vp);
    for (double w : {0.0, 1.0}) {
      int best = 0;
      double best_cost = 1e300;
      for (int k = 0; k < kComponents; ++k) {
        const AgentState n = StepAgent(
            ego, ClampAction(Action{m.means[k][0], m.means[k][1]}, vp), 0.1, vp);
        const double dh = WrapAngle(n.yaw - expert.yaw);
        const double cost = std::pow(n.x - expert.x, 2) +
                            std::pow(n.y - expert.y, 2) +
                            w * std::pow(n.speed - expert.speed, 2) +
                            w * dh * dh;
        if (cost < best_cost) {
          best_cost = cost;
          best = k;
        }
      }
      EXPECT_EQ(SelectComponentNearExpert(m, ego, expert, 0.1, vp, w, w), best);
      if (w == 0.0) {
        EXPECT_EQ(SelectComponentNearExpert(m, ego, Point2{expert.x, expert.y},
                                            0.1, vp),
                  best);
      }
    }
  }
}

TEST(PolicyTest, RejectsWrongObservationSize) {
  const PolicyParams p = testing::SmallPolicy();
  Observation obs;
  obs.features.assign(p.config.obs.size() + 1, 0.0);
  EXPECT_THROW(PolicyStep(p, std::vector<double>(p.config.hidden, 0.0), obs),
               PolicyError);
}

TEST(PolicyTest, CheckpointRoundTripAndMismatch) {
  const auto dir = std::filesystem::temp_directory_path() / "dss_policy_test";
  std::filesystem::create_directories(dir);
  const PolicyParams p = testing::SmallPolicy(21);
  SavePolicy(p, dir / "p.json");
  const PolicyParams q = LoadPolicy(dir / "p.json");
  EXPECT_EQ(q.config, p.config);
  EXPECT_EQ(q.values, p.values);

  PolicyConfig other = p.config;
  other.hidden = 9;
  EXPECT_THROW(LoadPolicy(dir / "p.json", other), CheckpointError);

  ClassifierConfig cc;
  cc.obs = p.config.obs;
  cc.width = 4;
  SaveClassifier(ClassifierParams::Initialize(cc, 1), dir / "c.json");
  EXPECT_THROW(LoadPolicy(dir / "c.json"), CheckpointError);
  EXPECT_THROW(LoadPolicy(dir / "none.json"), CheckpointError);
}

TEST(PolicyTest, InitializationIsSeeded) {
  const PolicyConfig cfg = testing::SmallPolicyConfig();
  EXPECT_EQ(PolicyParams::Initialize(cfg, 5).values,
            PolicyParams::Initialize(cfg, 5).values);
  EXPECT_NE(PolicyParams::Initialize(cfg, 5).values,
            PolicyParams::Initialize(cfg, 6).values);
}

}  // namespace
}  // namespace dss
