#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "voxprop/ground_plane.hpp"

using namespace voxprop;
using namespace fixture;

namespace {

double angle_between(Point3 a, Point3 b) {
  return std::acos(std::clamp(dot(a, b) / (norm(a) * norm(b)), -1.0, 1.0));
}

double accuracy(const GroundClassifier& clf, const std::vector<SuperpixelFeature>& xs, const std::vector<int>& ys) {
  int ok = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) ok += (clf.probability(xs[i].values) > 0.5) == (ys[i] != 0);
  return static_cast<double>(ok) / static_cast<double>(xs.size());
}

}  // namespace

TEST(PlaneFit, CoplanarSuperpixel) {
  PointCloud c;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) c.points.push_back({-1.0 + 0.3 * i, 1.65, 8.0 + 0.4 * j});
  std::vector<Rgb> colors(c.size(), Rgb{10, 20, 30});
  std::vector<int> labels(c.size(), 7);
  const auto cam = make_pinhole(700, 620, 180, 1242, 375);
  const auto f = extract_superpixel_features(c, colors, labels, cam, cam.horizon_row());
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].id, 7);
  EXPECT_FALSE(f[0].degenerate_plane);
  EXPECT_NEAR(f[0].values[feat::kPitch], 0.0, 1e-12);
  EXPECT_NEAR(f[0].values[feat::kRoll], 0.0, 1e-12);
  EXPECT_NEAR(f[0].values[feat::kMeanY], 1.65, 1e-12);
  EXPECT_EQ(f[0].values[feat::kAboveHorizon], 0.0);
  EXPECT_EQ(f[0].values[feat::kStdR], 0.0);
  for (std::size_t k = feat::kReserved0; k < kFeatureDim; ++k) EXPECT_EQ(f[0].values[k], 0.0);
}

TEST(PlaneFit, TwoPointSuperpixelIsDegenerate) {
  PointCloud c;
  c.points = {{0, 1, 5}, {1, 0.5, 7}};
  std::vector<Rgb> colors(2, Rgb{1, 2, 3});
  std::vector<int> labels{3, 3};
  const auto cam = make_pinhole(700, 620, 180, 1242, 375);
  const auto f = extract_superpixel_features(c, colors, labels, cam, cam.horizon_row());
  ASSERT_EQ(f.size(), 1u);
  EXPECT_TRUE(f[0].degenerate_plane);
  EXPECT_EQ(f[0].values[feat::kPitch], 0.0);
  EXPECT_EQ(f[0].values[feat::kRoll], 0.0);
  EXPECT_TRUE(extract_superpixel_features(PointCloud{}, {}, {}, cam, 0.0).empty());
}

TEST(PlaneFit, FeaturesMatchDirectAggregation) {
  oracle::Rng r(41);
  const auto cam = make_pinhole(721.5, 609.6, 172.9, 1242, 375);
  PointCloud cloud;
  std::vector<Rgb> colors;
  std::vector<int> labels;
  struct Truth {
    double a, b;  // y = a x + b z + c
  };
  std::map<int, Truth> truth;
  for (int sp = 0; sp < 30; ++sp) {
    const int id = 100 - 3 * sp;  // unsorted ids
    const double a = r.uniform(-0.3, 0.3), b = r.uniform(-0.3, 0.3), c0 = r.uniform(-1, 2);
    truth[id] = {a, b};
    const double x0 = r.uniform(-8, 8), z0 = r.uniform(5, 40);
    const int n = r.integer(3, 40);
    for (int i = 0; i < n; ++i) {
      const double x = x0 + r.uniform(-1, 1), z = z0 + r.uniform(-1, 1);
      cloud.points.push_back({x, a * x + b * z + c0, z});
      colors.push_back({r.uniform(0, 255), r.uniform(0, 255), r.uniform(0, 255)});
      labels.push_back(id);
    }
  }
  const double hr = cam.horizon_row();
  const auto feats = extract_superpixel_features(cloud, colors, labels, cam, hr);
  ASSERT_EQ(feats.size(), truth.size());
  for (std::size_t q = 1; q < feats.size(); ++q) EXPECT_LT(feats[q - 1].id, feats[q].id);

  for (const auto& f : feats) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == f.id) idx.push_back(i);
    const double n = static_cast<double>(idx.size());
    double s[8] = {};
    for (std::size_t i : idx) {
      const auto& p = cloud.points[i];
      const double w = cam.P[8] * p.x + cam.P[9] * p.y + cam.P[10] * p.z + cam.P[11];
      s[0] += colors[i][0];
      s[1] += colors[i][1];
      s[2] += colors[i][2];
      s[3] += (cam.P[0] * p.x + cam.P[1] * p.y + cam.P[2] * p.z + cam.P[3]) / w;
      s[4] += (cam.P[4] * p.x + cam.P[5] * p.y + cam.P[6] * p.z + cam.P[7]) / w;
      s[5] += p.x;
      s[6] += p.y;
      s[7] += p.z;
    }
    const std::size_t slots[8] = {feat::kMeanR, feat::kMeanG, feat::kMeanB, feat::kMeanU,
                                  feat::kMeanV, feat::kMeanX, feat::kMeanY, feat::kMeanZ};
    for (int k = 0; k < 8; ++k) EXPECT_NEAR(f.values[slots[k]], s[k] / n, 1e-9 * (1 + std::abs(s[k] / n)));
    std::vector<double> col(idx.size()), px(idx.size());
    for (std::size_t q = 0; q < idx.size(); ++q) {
      col[q] = colors[idx[q]][1];
      px[q] = cloud.points[idx[q]].z;
    }
    EXPECT_NEAR(f.values[feat::kStdG], oracle::two_pass_sigma(col), 1e-9);
    EXPECT_NEAR(f.values[feat::kStdZ], oracle::two_pass_sigma(px), 1e-9);
    EXPECT_EQ(f.values[feat::kAboveHorizon], s[4] / n < hr ? 1.0 : 0.0);
    // normal of y = a x + b z + c is (a, -1, b) up to scale
    EXPECT_NEAR(f.values[feat::kPitch], std::atan(truth[f.id].b), 1e-7);
    EXPECT_NEAR(f.values[feat::kRoll], std::atan(truth[f.id].a), 1e-7);
    for (double v : f.values) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(GroundClassifier, ZeroWeightsGiveOneHalf) {
  GroundClassifier clf;
  oracle::Rng r(42);
  for (int t = 0; t < 20; ++t) {
    std::array<double, kFeatureDim> x{};
    for (auto& v : x) v = r.uniform(-100, 100);
    EXPECT_EQ(clf.probability(x), 0.5);
  }
  std::vector<double> bad(5, 0.0);
  EXPECT_THROW(classify_ground(clf, std::span<const double>(bad)), Error);
}

TEST(GroundClassifier, GradientMatchesFiniteDifferences) {
  oracle::Rng r(43);
  std::vector<int> ys;
  auto xs = separable_set(r, ys, 12);
  GroundClassifier clf;
  for (auto& w : clf.w1) w = r.uniform(-0.5, 0.5);
  for (auto& w : clf.b1) w = r.uniform(-0.5, 0.5);
  for (auto& w : clf.w2) w = r.uniform(-0.5, 0.5);
  clf.b2 = r.uniform(-0.5, 0.5);
  for (std::size_t i = 0; i < kFeatureDim; ++i) {
    clf.input_mean[i] = r.uniform(-0.2, 0.2);
    clf.input_scale[i] = r.uniform(0.5, 2.0);
  }
  ClassifierGradient g;
  classifier_loss(clf, xs, ys, &g);

  const double eps = 1e-5;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + eps;
    const double lp = classifier_loss(clf, xs, ys);
    param = saved - eps;
    const double lm = classifier_loss(clf, xs, ys);
    param = saved;
    const double numeric = (lp - lm) / (2 * eps);
    const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-4});
    EXPECT_LT(rel, 1e-5) << "analytic " << analytic << " numeric " << numeric;
  };
  for (std::size_t k = 0; k < clf.w1.size(); k += 7) check(clf.w1[k], g.w1[k]);
  for (std::size_t k = 0; k < clf.b1.size(); ++k) check(clf.b1[k], g.b1[k]);
  for (std::size_t k = 0; k < clf.w2.size(); ++k) check(clf.w2[k], g.w2[k]);
  check(clf.b2, g.b2);
}

TEST(GroundClassifier, LearnsSeparableSet) {
  oracle::Rng r(44);
  std::vector<int> ys;
  const auto xs = separable_set(r, ys, 400);
  const auto t = train_ground_classifier(xs, ys, 500, 0.5, 7);
  EXPECT_TRUE(t.classifier.finite());
  EXPECT_GE(accuracy(t.classifier, xs, ys), 0.99);
  EXPECT_LE(t.classifier.final_loss, t.loss_history.front());
  // batch and per-item agree
  const auto p = classify_ground(t.classifier, xs);
  for (std::size_t i = 0; i < xs.size(); i += 17) {
    EXPECT_EQ(p[i], classify_ground(t.classifier, std::span<const double>(xs[i].values)));
    EXPECT_GT(p[i], 0.0);
    EXPECT_LT(p[i], 1.0);
  }
  // determinism
  const auto t2 = train_ground_classifier(xs, ys, 500, 0.5, 7);
  EXPECT_EQ(t.classifier.w1, t2.classifier.w1);
  EXPECT_EQ(t.classifier.b2, t2.classifier.b2);
}

TEST(GroundClassifier, SmallStepLossIsMonotone) {
  oracle::Rng r(45);
  std::vector<int> ys;
  const auto xs = separable_set(r, ys, 200);
  const auto t = train_ground_classifier(xs, ys, 200, 1e-3, 3);
  for (std::size_t e = 1; e < t.loss_history.size(); ++e) EXPECT_LE(t.loss_history[e], t.loss_history[e - 1]);
}

TEST(GroundClassifier, ZeroEpochsAndSingleClass) {
  oracle::Rng r(46);
  std::vector<int> ys;
  const auto xs = separable_set(r, ys, 20);
  const auto t = train_ground_classifier(xs, ys, 0, 0.1, 9);
  ASSERT_EQ(t.loss_history.size(), 1u);
  EXPECT_EQ(t.classifier.final_loss, classifier_loss(t.classifier, xs, ys));
  std::vector<int> ones(xs.size(), 1);
  EXPECT_THROW(train_ground_classifier(xs, ones, 10, 0.1, 9), InvalidArgument);
}

TEST(Ransac, NoiselessPlantedPlane) {
  oracle::Rng r(47);
  std::vector<Point3> pts;
  for (int i = 0; i < 1000; ++i) pts.push_back({r.uniform(-10, 10), 1.65, r.uniform(2, 40)});
  RansacParams prm;
  prm.seed = 5;
  const auto g = ransac_plane(pts, {}, prm);
  EXPECT_TRUE(g.valid());
  EXPECT_LT(angle_between(g.normal, {0, -1, 0}), 0.1 * kDeg);
  EXPECT_NEAR(g.offset, 1.65, 1e-6);
  EXPECT_EQ(g.inliers, 1000u);
  EXPECT_NEAR(g.road_y(3, 20), 1.65, 1e-6);
}

TEST(Ransac, ThreePointsAndErrors) {
  std::vector<Point3> pts{{0, 1.5, 5}, {2, 1.6, 5}, {0, 1.7, 9}};
  RansacParams prm;
  const auto g = ransac_plane(pts, {}, prm);
  for (const auto& p : pts) EXPECT_NEAR(dot(g.normal, p) + g.offset, 0.0, 1e-12);
  EXPECT_THROW(ransac_plane(std::span<const Point3>(pts.data(), 2), {}, prm), Error);
  std::vector<Point3> line{{0, 1, 1}, {1, 1, 2}, {2, 1, 3}, {3, 1, 4}};
  EXPECT_THROW(ransac_plane(line, {}, prm), Error);
  // weights at or below the cutoff remove candidates
  std::vector<double> w{0.9, 0.5, 0.9};
  EXPECT_THROW(ransac_plane(pts, w, prm), Error);
}

TEST(Ransac, OutliersAndNoise) {
  oracle::Rng r(48);
  const auto p = planted(r, 3000, 0.3, 0.02, 3.0);
  RansacParams prm;
  prm.seed = 11;
  const auto g = ransac_plane(p.points, {}, prm);
  EXPECT_LT(angle_between(g.normal, p.normal), 1.0 * kDeg);
  EXPECT_NEAR(g.offset, p.offset, 0.02);
  const auto again = ransac_plane(p.points, {}, prm);
  EXPECT_EQ(g.normal, again.normal);
  EXPECT_EQ(g.offset, again.offset);
}

TEST(Ransac, RecallOverSeededScenes) {
  int good = 0;
  for (int s = 0; s < 100; ++s) {
    oracle::Rng r(1000 + s);
    const auto p = planted(r, 2000, 0.3, 0.02, 4.0);
    RansacParams prm;
    prm.seed = static_cast<std::uint64_t>(s);
    const auto g = ransac_plane(p.points, {}, prm);
    EXPECT_TRUE(g.valid());
    good += angle_between(g.normal, p.normal) < kDeg && std::abs(g.offset - p.offset) < 0.02;
  }
  EXPECT_GE(good, 98);
}

TEST(Ransac, ClassifiedRouteUsesWeights) {
  oracle::Rng r(49);
  const auto p = planted(r, 1000, 0.0, 0.0, 0.0);
  PointCloud cloud;
  cloud.points = p.points;
  // a decoy plane at y = 0, labelled as a separate superpixel
  for (int i = 0; i < 1500; ++i) cloud.points.push_back({r.uniform(-10, 10), 0.0, r.uniform(3, 30)});
  std::vector<int> labels(cloud.size(), 1);
  std::fill(labels.begin(), labels.begin() + 1000, 0);
  std::vector<SuperpixelFeature> feats(2);
  feats[0].id = 0;
  feats[1].id = 1;
  GroundClassifier clf;
  // logit depends on the first feature only
  feats[0].values[0] = 1.0;
  feats[1].values[0] = -1.0;
  clf.w1[0] = 5.0;
  clf.w2[0] = 5.0;
  RansacParams prm;
  const auto g = estimate_ground_classified(cloud, feats, labels, clf, prm);
  EXPECT_LT(angle_between(g.normal, p.normal), 0.1 * kDeg);
  EXPECT_NEAR(g.offset, p.offset, 1e-6);
  const auto direct = estimate_ground_direct(cloud, prm);
  EXPECT_NEAR(direct.offset, p.offset, 1e-6);
}
