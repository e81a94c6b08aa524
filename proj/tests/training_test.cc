#include "dss/training.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.h"

namespace dss {
namespace {

TEST(TrainingTest, AdamMatchesHandComputedSteps) {
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  Adam adam(1, cfg);
  std::vector<double> p = {1.0};
  const double g1 = 0.5, g2 = -0.2;
  adam.Step(p, std::vector<double>{g1});
  // Bias correction makes the first step lr * g / (|g| + eps).
  EXPECT_NEAR(p[0], 1.0 - 0.1 * g1 / (std::abs(g1) + 1e-8), 1e-15);
  const double m = 0.9 * 0.1 * g1 + 0.1 * g2;
  const double v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  const double expected = p[0] - 0.1 * mh / (std::sqrt(vh) + 1e-8);
  adam.Step(p, std::vector<double>{g2});
  EXPECT_NEAR(p[0], expected, 1e-14);
  EXPECT_EQ(adam.steps(), 2);
}

TEST(TrainingTest, ClipGlobalNorm) {
  std::vector<double> g = {3.0, 4.0};
  EXPECT_EQ(ClipGlobalNorm(g, 1.0), 5.0);
  EXPECT_NEAR(std::hypot(g[0], g[1]), 1.0, 1e-15);
  EXPECT_NEAR(g[0] / g[1], 0.75, 1e-15);
  std::vector<double> small = {0.1, 0.1};
  ClipGlobalNorm(small, 1.0);
  EXPECT_EQ(small[0], 0.1);
}

TEST(TrainingTest, ValidateRejectsBadSettings) {
  TrainConfig c;
  EXPECT_NO_THROW(ValidateTrainConfig(c, 90));
  c.window = 0;
  EXPECT_THROW(ValidateTrainConfig(c, 90), TrainingError);
  c = TrainConfig{};
  c.window = 91;
  EXPECT_THROW(ValidateTrainConfig(c, 90), TrainingError);
  c = TrainConfig{};
  c.adam.learning_rate = -1.0;
  EXPECT_THROW(ValidateTrainConfig(c, 90), TrainingError);
}

double WindowLoss(const PolicyParams& p, const SimState& s0,
                  const std::vector<double>& h0, const TrainConfig& tc,
                  std::uint64_t seed) {
  SimState s = s0;
  std::vector<double> h = h0;
  Rng noise(seed);
  return ApgWindow(p, s, h, tc, noise, false).loss;
}

TEST(TrainingTest, WindowGradientMatchesDifferences) {
  const Scenario sc = testing::TwoCarScenario(20);
  const PolicyParams p = testing::SmallPolicy(2);
  TrainConfig tc;
  tc.window = 5;
  const SimState s0 = InitialState(sc);
  const std::vector<double> h0(p.config.hidden, 0.0);
  SimState s = s0;
  std::vector<double> h = h0;
  Rng noise(1);
  const WindowResult r = ApgWindow(p, s, h, tc, noise, true);
  ASSERT_EQ(r.gradient.size(), p.values.size());
  EXPECT_EQ(r.steps, 5);
  EXPECT_EQ(s.t, 5);
  EXPECT_EQ(r.loss, WindowLoss(p, s0, h0, tc, 1));
  EXPECT_NEAR(r.loss, r.state_loss + tc.logit_weight * r.logit_loss, 1e-12);
  for (std::size_t i = 0; i < p.values.size(); i += 29) {
    PolicyParams up = p, down = p;
    up.values[i] += 1e-6;
    down.values[i] -= 1e-6;
    const double fd = (WindowLoss(up, s0, h0, tc, 1) -
                       WindowLoss(down, s0, h0, tc, 1)) / 2e-6;
    EXPECT_LE(std::abs(r.gradient[i] - fd) / std::max(1.0, std::abs(fd)), 1e-5)
        << i;
  }
}

TEST(TrainingTest, SecondWindowSeesOnlyItsOwnSteps) {
  // The second window's gradient equals differences taken with its start
  // state and hidden state held fixed: history is detached.
  const Scenario sc = testing::TwoCarScenario(20);
  const PolicyParams p = testing::SmallPolicy(5);
  TrainConfig tc;
  tc.window = 4;
  SimState s = InitialState(sc);
  std::vector<double> h(p.config.hidden, 0.0);
  Rng first(3);
  ApgWindow(p, s, h, tc, first, false);
  const SimState mid = s;
  const std::vector<double> mid_h = h;
  Rng second(4);
  const WindowResult r = ApgWindow(p, s, h, tc, second, true);
  EXPECT_EQ(s.t, 8);
  for (std::size_t i = 0; i < p.values.size(); i += 31) {
    PolicyParams up = p, down = p;
    up.values[i] += 1e-6;
    down.values[i] -= 1e-6;
    const double fd = (WindowLoss(up, mid, mid_h, tc, 4) -
                       WindowLoss(down, mid, mid_h, tc, 4)) / 2e-6;
    EXPECT_LE(std::abs(r.gradient[i] - fd) / std::max(1.0, std::abs(fd)), 1e-5)
        << i;
  }
}

TEST(TrainingTest, WindowShrinksAtTheEndOfTheLog) {
  const Scenario sc = testing::TwoCarScenario(6);
  const PolicyParams p = testing::SmallPolicy();
  TrainConfig tc;
  tc.window = 4;
  SimState s = InitialState(sc);
  std::vector<double> h(p.config.hidden, 0.0);
  Rng noise(0);
  EXPECT_EQ(ApgWindow(p, s, h, tc, noise, false).steps, 4);
  EXPECT_EQ(ApgWindow(p, s, h, tc, noise, false).steps, 2);
  EXPECT_THROW(ApgWindow(p, s, h, tc, noise, false), TrainingError);
}

TEST(TrainingTest, ApgTrainReducesLossDeterministically) {
  std::vector<Scenario> scs;
  for (std::uint64_t seed : {1, 2, 3}) {
    scs.push_back(GenerateSynthetic(ScenarioKind::kStraight, seed));
  }
  TrainConfig tc;
  tc.window = 3;
  tc.adam.learning_rate = 3e-3;
  tc.epochs = 6;
  tc.batch_size = 2;
  tc.seed = 4;
  const PolicyParams init = testing::SmallPolicy(7);
  std::vector<TrainingCurveRow> curve;
  const PolicyParams a = ApgTrain(scs, init, tc, &curve);
  ASSERT_EQ(curve.size(), 6u);
  EXPECT_LT(curve.back().loss, curve.front().loss);
  EXPECT_LT(curve.back().ade, curve.front().ade);
  EXPECT_TRUE(std::isnan(curve.front().auc));

  const PolicyParams b = ApgTrain(scs, init, tc);
  EXPECT_EQ(a.values, b.values);
  TrainConfig serial = tc;
  serial.parallel = false;
  EXPECT_EQ(ApgTrain(scs, init, serial).values, a.values);
  TrainConfig other = tc;
  other.seed = 5;
  EXPECT_NE(ApgTrain(scs, init, other).values, a.values);
}

TEST(TrainingTest, ApgTrainRejectsInvalidScenarios) {
  std::vector<Scenario> scs = {testing::TwoCarScenario()};
  scs[0].tracks[0].states[3].x = NAN;
  TrainConfig tc;
  tc.window = 3;
  tc.epochs = 1;
  EXPECT_THROW(ApgTrain(scs, testing::SmallPolicy(), tc), TrainingError);
  EXPECT_THROW(ApgTrain({}, testing::SmallPolicy(), tc), TrainingError);
}

TEST(TrainingTest, CurveFileHasEmptyFieldsForMissingValues) {
  const auto path =
      std::filesystem::temp_directory_path() / "dss_training_test_curve.csv";
  const std::vector<TrainingCurveRow> rows = {{0, 1.5, 0.25, NAN, NAN}};
  WriteTrainingCurve(rows, path);
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  EXPECT_EQ(s.str().substr(0, s.str().find('\n')),
            "epoch,loss,ade,positive_rate,auc");
  EXPECT_NE(s.str().find("\n0,1.5,0.25,,\n"), std::string::npos) << s.str();
}

}  // namespace
}  // namespace dss
