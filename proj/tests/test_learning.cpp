#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "voxprop/io/synthetic.hpp"
#include "voxprop/learning.hpp"

using namespace voxprop;
using namespace fixture;

namespace {

constexpr double kHalfPi = 0.5 * std::numbers::pi;

std::vector<Size3> population(oracle::Rng& r, Size3 mean, double jitter, int n) {
  std::vector<Size3> out;
  for (int i = 0; i < n; ++i)
    out.push_back({mean.sx + r.uniform(-jitter, jitter), mean.sy + r.uniform(-jitter, jitter),
                   mean.sz + r.uniform(-jitter, jitter)});
  return out;
}

Size3 mean_of(const std::vector<Size3>& v) {
  Size3 m{0, 0, 0};
  for (const auto& s : v) {
    m.sx += s.sx / v.size();
    m.sy += s.sy / v.size();
    m.sz += s.sz / v.size();
  }
  return m;
}

}  // namespace

TEST(Templates, IdenticalSizes) {
  const std::vector<Size3> v(20, Size3{3.9, 1.6, 1.56});
  const auto t = fit_templates(v);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_DOUBLE_EQ(t[0].sx, 3.9);
  EXPECT_DOUBLE_EQ(t[0].sy, 1.6);
  EXPECT_DOUBLE_EQ(t[0].sz, 1.56);
  EXPECT_THROW(fit_templates(std::span<const Size3>{}), InvalidArgument);
}

TEST(Templates, BimodalPopulations) {
  oracle::Rng r(71);
  const auto cars = population(r, {3.9, 1.6, 1.6}, 0.15, 120);
  const auto vans = population(r, {5.1, 1.9, 2.0}, 0.15, 60);
  std::vector<Size3> all = cars;
  all.insert(all.end(), vans.begin(), vans.end());
  const auto t = fit_templates(all);
  ASSERT_EQ(t.size(), 2u);
  const Size3 mc = mean_of(cars), mv = mean_of(vans);
  EXPECT_NEAR(t[0].sx, mc.sx, 0.05);
  EXPECT_NEAR(t[0].sz, mc.sz, 0.05);
  EXPECT_NEAR(t[1].sx, mv.sx, 0.05);
  EXPECT_NEAR(t[1].sy, mv.sy, 0.05);

  // permutation invariant and deterministic
  for (int k = 0; k < 5; ++k) {
    std::shuffle(all.begin(), all.end(), r.gen);
    EXPECT_EQ(fit_templates(all), t);
  }
}

TEST(Templates, StoppingRules) {
  oracle::Rng r(72);
  auto v = population(r, {3.9, 1.6, 1.6}, 0.1, 50);
  const auto tail = population(r, {0.8, 1.8, 0.6}, 0.02, 3);
  v.insert(v.end(), tail.begin(), tail.end());
  TemplateParams p;
  p.min_cluster = 5;
  EXPECT_EQ(fit_templates(v, p).size(), 1u);  // tail of 3 < min_cluster stays unclustered
  p.min_cluster = 1;
  EXPECT_EQ(fit_templates(v, p).size(), 2u);
  // four separated populations, at most three templates
  std::vector<Size3> four;
  for (Size3 m : {Size3{4, 1.5, 1.6}, Size3{0.8, 1.8, 0.6}, Size3{1.8, 1.7, 0.6}, Size3{10, 3, 2.5}}) {
    const auto q = population(r, m, 0.02, 10);
    four.insert(four.end(), q.begin(), q.end());
  }
  EXPECT_EQ(fit_templates(four).size(), 3u);
}

TEST(Stats, AnalyticAndOnPlane) {
  const GroundPlane plane;  // y = 1.65
  std::vector<OrientedBox3D> boxes;
  for (double h : {0.6, 0.8, 1.0}) boxes.push_back(make_box({0, 1.65 - h, 10}, {1, 1.2, 1}, 0));
  const auto s = fit_height_stats(boxes, plane);
  EXPECT_NEAR(s.mean, 0.8, 1e-12);
  EXPECT_NEAR(s.sigma, std::sqrt(0.08 / 3.0), 1e-12);

  std::vector<OrientedBox3D> resting;
  for (double sy : {1.2, 1.5, 1.9}) resting.push_back(make_box({1, 1.65 - 0.5 * sy, 12}, {2, sy, 1}, 0));
  EXPECT_NEAR(fit_road_sigma(resting, plane), 0.0, 1e-12);
  EXPECT_THROW(fit_road_sigma(std::span<const OrientedBox3D>(resting.data(), 1), plane), InvalidArgument);
  EXPECT_THROW(fit_height_stats(std::span<const OrientedBox3D>(resting.data(), 1), plane), InvalidArgument);
}

TEST(Stats, MatchTwoPassOracle) {
  oracle::Rng r(73);
  for (int trial = 0; trial < 50; ++trial) {
    const auto plane = make_plane({r.uniform(-0.05, 0.05), -1.0, r.uniform(-0.05, 0.05)}, r.uniform(1.4, 1.9));
    std::vector<OrientedBox3D> boxes;
    std::vector<double> centre_h, bottom_h;
    const int n = r.integer(2, 200);
    for (int i = 0; i < n; ++i) {
      const auto b = oracle::random_box(r, true, 20.0);
      boxes.push_back(b);
      // height along gravity: distance to the plane divided by the normal's vertical share
      auto height = [&](Point3 p) { return (dot(plane.normal, p) + plane.offset) / (-plane.normal.y); };
      centre_h.push_back(height(b.center));
      bottom_h.push_back(height({b.center.x, b.center.y + 0.5 * b.size.sy, b.center.z}));
    }
    const auto s = fit_height_stats(boxes, plane);
    EXPECT_NEAR(s.mean, oracle::two_pass_mean(centre_h), 1e-12 * (1 + std::abs(s.mean)));
    EXPECT_NEAR(s.sigma, oracle::two_pass_sigma(centre_h), 1e-12 * (1 + s.sigma));
    EXPECT_NEAR(fit_road_sigma(boxes, plane), oracle::two_pass_sigma(bottom_h), 1e-12);
  }
}

TEST(LossAugmented, MatchesExhaustiveScan) {
  oracle::Rng r(74);
  for (int trial = 0; trial < 30; ++trial) {
    auto sc = separable_scene(r, r.integer(1, 3), r.integer(1, 500));
    const auto pairs = build_pairs(std::vector<TrainingScene>{sc});
    for (const auto& p : pairs) {
      const Weights w{r.uniform(-3, 3), r.uniform(-3, 3), r.uniform(-3, 3), r.uniform(-0.3, 0.3)};
      const auto got = loss_augmented_inference(sc, p, w);
      double best = -HUGE_VAL;
      std::size_t arg = 0;
      const auto& g = sc.gts[p.gt];
      const double eg = w[0] * sc.gt_phi[p.gt].pcd + w[1] * sc.gt_phi[p.gt].fs + w[2] * sc.gt_phi[p.gt].ht +
                        w[3] * sc.gt_phi[p.gt].ht_contr;
      for (std::size_t c = 0; c < sc.candidates.size(); ++c) {
        bool excluded = false;
        for (std::size_t o = 0; o < sc.gts.size(); ++o)
          if (o != p.gt && oracle::axis_aligned_iou(sc.gts[o], sc.candidates[c]) >= 0.25) excluded = true;
        if (excluded) continue;
        const auto& f = sc.cand_phi[c];
        const double e = w[0] * f.pcd + w[1] * f.fs + w[2] * f.ht + w[3] * f.ht_contr;
        const double v = 1.0 - oracle::axis_aligned_iou(g, sc.candidates[c]) - (e - eg);
        if (v > best + 1e-12) {
          best = v;
          arg = c;
        }
      }
      EXPECT_NEAR(got.violation, best, 1e-9);
      EXPECT_EQ(got.candidate, arg);
    }
  }
}

TEST(LossAugmented, ZeroWeightsAndSatisfiedGt) {
  TrainingScene sc;
  sc.gts = {make_box({0, 0.8, 10}, {4, 1.6, 1.6}, 0)};
  sc.gt_phi = {{0.9, 0.0, 0.9, 0}};
  sc.candidates = {sc.gts[0], make_box({1, 0.8, 10}, {4, 1.6, 1.6}, 0), make_box({8, 0.8, 10}, {4, 1.6, 1.6}, 0),
                   make_box({8, 0.8, 12}, {4, 1.6, 1.6}, 0)};
  sc.cand_phi = {{0.9, 0.0, 0.9, 0}, {0.5, 0.3, 0.5, 0}, {0.1, 0.9, 0.1, 0}, {0.1, 0.9, 0.1, 0}};
  const auto zero = loss_augmented_inference(sc, 0, Weights{0, 0, 0, 0});
  EXPECT_EQ(zero.candidate, 2u);  // first of the two disjoint boxes
  EXPECT_DOUBLE_EQ(zero.violation, 1.0);
  const auto strong = loss_augmented_inference(sc, 0, Weights{-10, 10, -10, 0});
  EXPECT_LE(strong.violation, 0.0);
  EXPECT_EQ(strong.candidate, 0u);
  // task loss is zero on the GT itself and bounded
  const auto pair = build_pair(sc, 0, 0);
  EXPECT_EQ(pair.loss[0], 0.0);
  for (double l : pair.loss) {
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
  }
  sc.candidates.clear();
  sc.cand_phi.clear();
  EXPECT_THROW(loss_augmented_inference(sc, 0, Weights{0, 0, 0, 0}), Error);
}

TEST(BuildPair, ExcludesBoxesNearOtherGts) {
  TrainingScene sc;
  sc.gts = {make_box({0, 0.8, 10}, {4, 1.6, 1.6}, 0), make_box({0, 0.8, 20}, {4, 1.6, 1.6}, 0)};
  sc.gt_phi.resize(2);
  sc.candidates = {make_box({0.2, 0.8, 10}, {4, 1.6, 1.6}, 0), make_box({0.2, 0.8, 20}, {4, 1.6, 1.6}, 0),
                   make_box({9, 0.8, 15}, {4, 1.6, 1.6}, 0)};
  sc.cand_phi.resize(3);
  const auto p0 = build_pair(sc, 0, 0);
  EXPECT_EQ(p0.cands, (std::vector<std::uint32_t>{0, 2}));
  const auto p1 = build_pair(sc, 0, 1);
  EXPECT_EQ(p1.cands, (std::vector<std::uint32_t>{1, 2}));
}

TEST(Ssvm, SeparableScenes) {
  oracle::Rng r(75);
  std::vector<TrainingScene> scenes;
  for (int s = 0; s < 6; ++s) scenes.push_back(separable_scene(r, r.integer(1, 3), 300));
  SsvmConfig cfg;
  cfg.c = 1000.0;
  const auto pairs = build_pairs(scenes);
  const auto res = train_ssvm(scenes, pairs, cfg);
  EXPECT_TRUE(res.converged);
  EXPECT_GT(res.rounds, 1);
  EXPECT_LT(res.weights[0], 0.0);  // density lowers energy
  for (const auto& p : pairs) {
    const auto& sc = scenes[p.scene];
    const double eg = dot(res.weights, sc.gt_phi[p.gt]);
    for (std::uint32_t c : p.cands) {
      if (oracle::axis_aligned_iou(sc.gts[p.gt], sc.candidates[c]) < 0.25) {
        EXPECT_GT(dot(res.weights, sc.cand_phi[c]), eg);
      }
    }
  }
  // post-hoc full scan: no constraint violated beyond slack + tolerance
  EXPECT_LE(max_constraint_excess(scenes, pairs, res.weights, res.slacks), cfg.tolerance + 1e-9);
  // restricted dual objective never decreases as the working set grows
  for (std::size_t i = 1; i < res.log.size(); ++i) {
    EXPECT_GE(res.log[i].objective, res.log[i - 1].objective - 1e-12);
    EXPECT_GE(res.log[i].working_set, res.log[i - 1].working_set);
  }
}

TEST(Ssvm, DefaultCKeepsConstraintsWithinSlack) {
  oracle::Rng r(76);
  std::vector<TrainingScene> scenes;
  for (int s = 0; s < 4; ++s) scenes.push_back(separable_scene(r, 2, 200));
  const auto pairs = build_pairs(scenes);
  const auto res = train_ssvm(scenes, pairs, SsvmConfig{});
  EXPECT_TRUE(res.converged);
  EXPECT_LE(max_constraint_excess(scenes, pairs, res.weights, res.slacks), 1e-3 + 1e-9);
  for (double xi : res.slacks) EXPECT_GE(xi, 0.0);
}

TEST(Ssvm, SingleCandidateEqualToGt) {
  TrainingScene sc;
  sc.gts = {make_box({0, 0.8, 10}, {4, 1.6, 1.6}, 0)};
  sc.gt_phi = {{0.7, 0.1, 0.6, 2.0}};
  sc.candidates = sc.gts;
  sc.cand_phi = sc.gt_phi;
  const std::vector<TrainingScene> scenes{sc};
  const auto res = train_ssvm(scenes);
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.weights, (Weights{0, 0, 0, 0}));
  SsvmConfig bad;
  bad.c = 0.0;
  EXPECT_THROW(train_ssvm(scenes, bad), Error);
}

TEST(Ssvm, MaxRoundsReportsNonConvergence) {
  oracle::Rng r(77);
  std::vector<TrainingScene> scenes{separable_scene(r, 2, 300)};
  SsvmConfig cfg;
  cfg.c = 1000.0;
  cfg.max_rounds = 1;
  const auto res = train_ssvm(scenes, cfg);
  EXPECT_FALSE(res.converged);
  EXPECT_EQ(res.rounds, 1);
  ASSERT_EQ(res.log.size(), 1u);
  EXPECT_GT(res.log[0].max_violation, cfg.tolerance);
}

TEST(TrainingScene, SnapToLattice) {
  oracle::Rng r(78);
  const GridSpec spec = kitti_grid_spec();
  for (int t = 0; t < 200; ++t) {
    const auto b = make_box({r.uniform(-30, 30), r.uniform(0, 1.5), r.uniform(1, 65)}, {3.9, 1.56, 1.6},
                            r.uniform(0, 2 * std::numbers::pi));
    const auto s = snap_to_lattice(b, spec, 0.2);
    EXPECT_LE(std::abs(s.center.x - b.center.x), 0.1 + 1e-9);
    EXPECT_LE(std::abs(s.center.z - b.center.z), 0.1 + 1e-9);
    EXPECT_EQ(s.center.y, b.center.y);
    EXPECT_EQ(s.size, b.size);
    const double fx = (s.center.x - spec.origin.x) / 0.2 - 0.5, fz = (s.center.z - spec.origin.z) / 0.2 - 0.5;
    EXPECT_NEAR(fx, std::round(fx), 1e-6);
    EXPECT_NEAR(fz, std::round(fz), 1e-6);
    EXPECT_TRUE(s.azimuth == 0.0 || s.azimuth == kHalfPi);
    // the chosen orientation is the nearer one modulo 180 degrees
    const double d0 = std::abs(std::sin(b.azimuth)), d90 = std::abs(std::cos(b.azimuth));
    if (std::abs(d0 - d90) > 1e-9) {
      EXPECT_EQ(s.azimuth == 0.0, d0 < d90);
    }
  }
}

TEST(TrainingScene, FromSyntheticCloud) {
  io::SyntheticSceneSpec spec;
  spec.seed = 79;
  spec.classes[0].min_count = 2;
  spec.classes[0].max_count = 2;
  const auto scene = io::generate_synthetic_scene(spec);
  ClassModel m;
  m.class_id = 0;
  m.templates = {{3.9, 1.56, 1.6}};
  m.mu_ht = 0.78;
  m.sigma_ht = 0.3;
  m.sigma_road = 0.05;
  const GridSpec grid = make_grid_spec({-25, -2.5, 0}, {25, 2.5, 55});
  TrainingSceneOptions opt;
  opt.max_negatives = 100;
  opt.hard_negatives = 50;
  const auto sc = make_training_scene("s", scene.cloud, &scene.camera, scene.plane, scene.boxes(), m, grid, opt);
  ASSERT_EQ(sc.gts.size(), 2u);
  ASSERT_EQ(sc.gt_phi.size(), 2u);
  ASSERT_EQ(sc.candidates.size(), sc.cand_phi.size());
  std::size_t near = 0;
  for (const auto& c : sc.candidates) {
    bool touches = false;
    for (const auto& g : sc.gts) touches = touches || bev_iou(c, g) > 0.0;
    near += touches;
  }
  EXPECT_GT(near, 0u);
  EXPECT_LE(sc.candidates.size() - near, 150u);
  // GT potentials are the potentials of the snapped box, which is dense
  for (const auto& phi : sc.gt_phi) EXPECT_GT(phi.pcd, 0.0);
  const auto again = make_training_scene("s", scene.cloud, &scene.camera, scene.plane, scene.boxes(), m, grid, opt);
  EXPECT_EQ(again.candidates.size(), sc.candidates.size());
  for (std::size_t i = 0; i < sc.candidates.size(); ++i) EXPECT_EQ(again.cand_phi[i].fs, sc.cand_phi[i].fs);
}
