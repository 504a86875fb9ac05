#pragma once

// Seeded scene generators shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "voxprop/ground_plane.hpp"
#include "voxprop/learning.hpp"
#include "voxprop/sampler.hpp"

namespace fixture {

using namespace voxprop;

inline constexpr double kDeg = std::numbers::pi / 180.0;

// A scene whose GT is the unique densest box: candidates are placed at random
// lattice positions, with potentials that get worse the further a box is from
// the GT.
inline TrainingScene separable_scene(oracle::Rng& r, int n_gt, int n_cands) {
  TrainingScene sc;
  sc.id = "sep";
  for (int g = 0; g < n_gt; ++g) {
    const auto b = make_box({-10.0 + 8.0 * g, 0.87, 15.0 + 2.0 * g}, {3.9, 1.56, 1.6}, 0.0);
    sc.gts.push_back(b);
    sc.gt_phi.push_back({r.uniform(0.5, 0.6), r.uniform(0.0, 0.1), r.uniform(0.6, 0.7), 0.0});
  }
  for (int c = 0; c < n_cands; ++c) {
    const auto& g = sc.gts[static_cast<std::size_t>(c % n_gt)];
    const double dx = 0.2 * r.integer(-20, 20), dz = 0.2 * r.integer(-20, 20);
    const auto b = make_box({g.center.x + dx, g.center.y, g.center.z + dz}, g.size,
                            r.coin() ? 0.0 : 0.5 * std::numbers::pi);
    sc.candidates.push_back(b);
    double best = 0.0;
    for (const auto& gg : sc.gts) best = std::max(best, oracle::axis_aligned_iou(gg, b));
    // denser, less free, closer to the height prior when overlapping a GT
    sc.cand_phi.push_back({0.4 * best + r.uniform(0.0, 0.05), 0.3 + 0.5 * (1 - best) + r.uniform(0.0, 0.1),
                           0.5 * best + r.uniform(0.0, 0.05), r.uniform(0.0, 5.0)});
  }
  return sc;
}

// Random plane close to y = h, sampled over a road patch, with outliers.
struct PlantedPlane {
  Point3 normal;
  double offset;
  std::vector<Point3> points;
};

inline PlantedPlane planted(oracle::Rng& r, std::size_t n, double outlier_frac, double noise, double tilt_deg) {
  PlantedPlane p;
  const double a = r.uniform(-tilt_deg, tilt_deg) * kDeg;
  const double b = r.uniform(-tilt_deg, tilt_deg) * kDeg;
  p.normal = Point3{std::sin(a), -std::cos(a) * std::cos(b), std::sin(b)};
  p.normal = (1.0 / norm(p.normal)) * p.normal;
  const double h = r.uniform(1.4, 1.9);
  p.offset = -dot(p.normal, Point3{0, h, 0});
  std::normal_distribution<double> gauss(0.0, noise);
  for (std::size_t i = 0; i < n; ++i) {
    if (r.coin(outlier_frac)) {
      p.points.push_back({r.uniform(-15, 15), r.uniform(-1.5, 2.5), r.uniform(3, 40)});
      continue;
    }
    const double x = r.uniform(-15, 15), z = r.uniform(3, 40);
    // solve n.p + d = 0 for y, then perturb along the normal
    const double y = -(p.normal.x * x + p.normal.z * z + p.offset) / p.normal.y;
    const double e = noise > 0 ? gauss(r.gen) : 0.0;
    p.points.push_back(Point3{x, y, z} + e * p.normal);
  }
  return p;
}

inline std::vector<SuperpixelFeature> separable_set(oracle::Rng& r, std::vector<int>& labels, int n) {
  std::vector<SuperpixelFeature> xs;
  labels.clear();
  for (int i = 0; i < n; ++i) {
    SuperpixelFeature f;
    f.id = i;
    for (std::size_t k = 0; k < feat::kReserved0; ++k) f.values[k] = r.uniform(-1, 1);
    const bool ground = i % 2 == 0;
    f.values[feat::kMeanY] = ground ? r.uniform(1.6, 1.7) : r.uniform(-1.5, 1.0);
    xs.push_back(f);
    labels.push_back(ground);
  }
  return xs;
}

// Random scored candidate set on a coarse lattice, with repeated energies.
inline CandidateSet random_scored(oracle::Rng& r, std::size_t n, const CameraCalib* cam) {
  CandidateSet cs;
  cs.templates = {{3.9, 1.56, 1.6}, {1.0, 1.7, 0.8}, {1.8, 1.7, 0.6}};
  cs.class_id = 0;
  cs.has_image_rects = cam != nullptr;
  for (std::size_t i = 0; i < n; ++i) {
    Candidate c;
    c.x = 0.2 * r.integer(-30, 30) + 0.1;
    c.z = 0.2 * r.integer(25, 120) + 0.1;
    c.template_id = static_cast<std::uint16_t>(r.integer(0, 2));
    c.orientation = static_cast<std::uint8_t>(r.integer(0, 1));
    c.plane = static_cast<std::uint8_t>(r.integer(0, 2));
    c.y = 1.65 - 0.5 * cs.templates[c.template_id].sy + (c.plane == 1 ? 0.1 : c.plane == 2 ? -0.1 : 0.0);
    cs.items.push_back(c);
    cs.energies.push_back(-0.05 * r.integer(0, 20));
  }
  if (cam) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto rect = project_box(cs.box(i), *cam);
      cs.items[i].image_rect = {static_cast<float>(rect.x0), static_cast<float>(rect.y0), static_cast<float>(rect.x1),
                                static_cast<float>(rect.y1)};
    }
  }
  return cs;
}

}  // namespace fixture
