#include "dss/geometry.h"

#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "test_support.h"

namespace dss {
namespace {

bool InsideBox(const OrientedBox& b, double px, double py) {
  const double dx = px - b.center.x, dy = py - b.center.y;
  const double u = std::cos(b.yaw) * dx + std::sin(b.yaw) * dy;
  const double v = -std::sin(b.yaw) * dx + std::cos(b.yaw) * dy;
  return std::abs(u) <= b.length / 2 && std::abs(v) <= b.width / 2;
}

// Perimeter samples of each box tested against the other. Two convex boxes
// overlap iff one's boundary enters the other, so only overlaps shallower
// than the sample spacing can be missed.
bool SampledOverlap(const OrientedBox& a, const OrientedBox& b) {
  constexpr int kPerEdge = 200;
  auto probe = [](const OrientedBox& p, const OrientedBox& q) {
    const double c = std::cos(p.yaw), s = std::sin(p.yaw);
    const double corners[5][2] = {{1, 1}, {1, -1}, {-1, -1}, {-1, 1}, {1, 1}};
    for (int e = 0; e < 4; ++e) {
      for (int i = 0; i <= kPerEdge; ++i) {
        const double f = static_cast<double>(i) / kPerEdge;
        const double u =
            p.length / 2 * (corners[e][0] + f * (corners[e + 1][0] - corners[e][0]));
        const double v =
            p.width / 2 * (corners[e][1] + f * (corners[e + 1][1] - corners[e][1]));
        if (InsideBox(q, p.center.x + c * u - s * v, p.center.y + s * u + c * v)) {
          return true;
        }
      }
    }
    return false;
  };
  return probe(a, b) || probe(b, a);
}

OrientedBox Resized(OrientedBox b, double delta) {
  b.length += 2 * delta;
  b.width += 2 * delta;
  return b;
}

TEST(GeometryTest, ObbOverlapAgreesWithSamplingOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-5.0, 5.0), yaw(-3.2, 3.2),
      len(1.0, 5.0), wid(0.5, 2.5);
  constexpr double kBand = 0.05;
  int compared = 0, overlaps = 0;
  for (int i = 0; i < 1000; ++i) {
    const OrientedBox a{{0.0, 0.0}, yaw(rng), len(rng), wid(rng)};
    const OrientedBox b{{pos(rng), pos(rng)}, yaw(rng), len(rng), wid(rng)};
    // Skip pairs within the tangency band.
    if (ObbOverlap(Resized(a, kBand), Resized(b, kBand)) !=
        ObbOverlap(Resized(a, -kBand), Resized(b, -kBand))) {
      continue;
    }
    ++compared;
    const bool sat = ObbOverlap(a, b);
    overlaps += sat;
    EXPECT_EQ(sat, SampledOverlap(a, b)) << "pair " << i;
  }
  EXPECT_GT(compared, 900);
  EXPECT_GT(overlaps, 100);
  EXPECT_LT(overlaps, compared - 100);
}

TEST(GeometryTest, ObbOverlapIsSymmetricAndTouchingCounts) {
  const OrientedBox a{{0, 0}, 0.0, 2.0, 2.0};
  const OrientedBox touching{{2.0, 0}, 0.0, 2.0, 2.0};
  const OrientedBox apart{{2.001, 0}, 0.0, 2.0, 2.0};
  EXPECT_TRUE(ObbOverlap(a, touching));
  EXPECT_FALSE(ObbOverlap(a, apart));
  const OrientedBox rotated{{1.9, 1.9}, 0.785, 3.0, 1.0};
  EXPECT_EQ(ObbOverlap(a, rotated), ObbOverlap(rotated, a));
}

// Distance to a segment from the perpendicular-foot formula written with a
// cross product, independent of the library's clamped projection.
double OracleSegmentDistance(Point2 p, Point2 a, Point2 b) {
  const double ex = b.x - a.x, ey = b.y - a.y;
  const double len = std::hypot(ex, ey);
  const double da = std::hypot(p.x - a.x, p.y - a.y);
  const double db = std::hypot(p.x - b.x, p.y - b.y);
  if (len == 0.0) return da;
  const double along = ((p.x - a.x) * ex + (p.y - a.y) * ey) / len;
  if (along <= 0.0 || along >= len) return std::min(da, db);
  return std::abs((p.x - a.x) * ey - (p.y - a.y) * ex) / len;
}

TEST(GeometryTest, OffroadAgreesWithSegmentOracle) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Roadgraph rg;
  rg.lane_half_width = 2.0;
  Polyline a{PolylineType::kLaneCenter, {}}, b{PolylineType::kLaneCenter, {}};
  for (int i = 0; i < 12; ++i) {
    a.points.push_back({i * 5.0, 3.0 * std::sin(i * 0.5)});
    b.points.push_back({20.0 + 2.0 * std::cos(i * 0.3), i * 4.0 - 20.0});
  }
  // Road edges must be ignored by the detector.
  Polyline edge{PolylineType::kRoadEdge, {{0, 10}, {60, 10}}};
  rg.polylines = {a, b, edge};
  int off = 0, compared = 0;
  for (int i = 0; i < 1000; ++i) {
    const AgentState s{30 + 35 * u(rng), 5 + 25 * u(rng), 3 * u(rng), 5.0};
    double best = std::numeric_limits<double>::infinity();
    for (const Polyline& pl : {a, b}) {
      for (std::size_t k = 0; k + 1 < pl.points.size(); ++k) {
        best = std::min(best, OracleSegmentDistance({s.x, s.y}, pl.points[k],
                                                    pl.points[k + 1]));
      }
    }
    if (std::abs(best - rg.lane_half_width) < 1e-9) continue;
    ++compared;
    const bool oracle = best > rg.lane_half_width;
    off += oracle;
    EXPECT_EQ(OffroadFlag(s, 4.5, 2.0, rg), oracle) << i;
    EXPECT_NEAR(LaneCenterDistance({s.x, s.y}, rg), best, 1e-9);
  }
  EXPECT_GT(compared, 990);
  EXPECT_GT(off, 100);
  EXPECT_LT(off, compared - 100);
}

TEST(GeometryTest, NoLaneCentersMeansOffroad) {
  Roadgraph rg;
  rg.polylines = {{PolylineType::kRoadEdge, {{0, 0}, {1, 0}}}};
  EXPECT_TRUE(std::isinf(LaneCenterDistance({0, 0}, rg)));
  EXPECT_TRUE(OffroadFlag(AgentState{}, 4.5, 2.0, rg));
}

TEST(GeometryTest, CollisionFlagSeesOnlyValidOthers) {
  Scenario sc = testing::TwoCarScenario(3);
  SimState s = InitialState(sc);
  EXPECT_FALSE(CollisionFlag(s, 0));
  s.agents[1].x = s.agents[0].x + 1.0;
  EXPECT_TRUE(CollisionFlag(s, 0));
  EXPECT_TRUE(CollisionFlag(s, 1));
  s.valid[1] = 0;
  EXPECT_FALSE(CollisionFlag(s, 0));
  EXPECT_FALSE(CollisionFlag(s, 1));
}

TEST(GeometryTest, AdeByHand) {
  const std::vector<Point2> a = {{0, 0}, {3, 4}};
  const std::vector<Point2> b = {{0, 1}, {0, 0}};
  EXPECT_DOUBLE_EQ(Ade(a, b), 3.0);
  EXPECT_EQ(Ade(a, a), 0.0);
  EXPECT_THROW(Ade(a, std::vector<Point2>{{0, 0}}), MetricError);
  EXPECT_THROW(Ade({}, {}), MetricError);
}

}  // namespace
}  // namespace dss
