#pragma once

// Depth-informed potentials over integral accumulators and their weighted sum.
// Lower energy means a better proposal.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "voxprop/error.hpp"
#include "voxprop/geometry.hpp"
#include "voxprop/voxel_grid.hpp"

namespace voxprop {

inline constexpr int kSharedClass = -1;
inline constexpr double kContrastEps = 1e-6;
inline constexpr double kContrastCap = 1e3;
inline constexpr double kContrastMargin = 0.6;

struct PotentialVector {
  double pcd = 0.0;
  double fs = 0.0;
  double ht = 0.0;
  double ht_contr = 0.0;

  std::array<double, 4> to_array() const { return {pcd, fs, ht, ht_contr}; }
  static PotentialVector from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
};

using Weights = std::array<double, 4>;  // (pcd, fs, ht, ht_contr)

inline double dot(const Weights& w, const PotentialVector& phi) {
  return w[0] * phi.pcd + w[1] * phi.fs + w[2] * phi.ht + w[3] * phi.ht_contr;
}

struct ClassModel {
  int class_id = kSharedClass;
  std::string name = "shared";
  Weights weights{0.0, 0.0, 0.0, 0.0};
  std::vector<Size3> templates;
  double mu_ht = 0.0;
  double sigma_ht = 1.0;
  double sigma_road = 0.0;
  // provenance
  std::string training_set_hash;
  std::string date;

  void validate() const {
    require(sigma_ht > 0.0, "class model: sigma_ht must be positive");
    require(sigma_road >= 0.0, "class model: sigma_road must be non-negative");
    require(!templates.empty(), "class model: at least one size template required");
    for (const Size3& t : templates) {
      require(t.sx > 0.0 && t.sy > 0.0 && t.sz > 0.0, "class model: template sizes must be positive");
    }
    for (double w : weights) require(std::isfinite(w), "class model: weights must be finite");
  }
};

// Integral accumulators for one scene. Height-prior fields are per class
// (key = class id, kSharedClass for the class-independent model).
struct SceneGrids {
  CountIntegral occupancy;
  CountIntegral free_space;
  std::map<int, RealIntegral> height_prior;

  const RealIntegral& height_for(int class_id) const {
    const auto it = height_prior.find(class_id);
    if (it == height_prior.end()) {
      throw Error("no height-prior grid for class " + std::to_string(class_id));
    }
    return it->second;
  }
};

inline double phi_pcd(const CountIntegral& occ, const OrientedBox3D& b) {
  const auto s = occ.box_sum(b);
  return s.voxel_count == 0 ? 0.0 : static_cast<double>(s.sum) / static_cast<double>(s.voxel_count);
}

inline double phi_fs(const CountIntegral& free_space, const OrientedBox3D& b) {
  const auto s = free_space.box_sum(b);
  return s.voxel_count == 0 ? 0.0
                            : 1.0 - static_cast<double>(s.sum) / static_cast<double>(s.voxel_count);
}

// Prefix-sum differences of a non-negative field can come out a few ulps
// below zero.
inline double mean_height(double sum, std::int64_t n) {
  return n == 0 ? 0.0 : std::clamp(sum / static_cast<double>(n), 0.0, 1.0);
}

inline double phi_ht(const RealIntegral& hp, const OrientedBox3D& b) {
  const auto s = hp.box_sum(b);
  return mean_height(s.sum, s.voxel_count);
}

// Ratio of the box's height prior to the surplus of its expanded surround.
// The surplus can be zero or negative; it is floored at kContrastEps and the
// ratio capped at kContrastCap.
inline double height_contrast(double inner, double outer) {
  if (inner <= 0.0) return 0.0;
  return std::min(inner / std::max(outer - inner, kContrastEps), kContrastCap);
}

inline double phi_ht_contr(const RealIntegral& hp, const OrientedBox3D& b,
                           double margin = kContrastMargin) {
  const double a = phi_ht(hp, b);
  const auto s = hp.box_sum(b, margin);
  return height_contrast(a, mean_height(s.sum, s.voxel_count));
}

// All four potentials from precomputed voxel ranges; the hot path of scoring.
inline PotentialVector potentials_for_ranges(const SceneGrids& g, const RealIntegral& hp,
                                             const VoxelRange& inner, const VoxelRange& outer) {
  PotentialVector phi;
  const std::int64_t n = inner.count();
  if (n == 0) return phi;
  const double dn = static_cast<double>(n);
  phi.pcd = static_cast<double>(g.occupancy.sum(inner)) / dn;
  phi.fs = 1.0 - static_cast<double>(g.free_space.sum(inner)) / dn;
  phi.ht = mean_height(hp.sum(inner), n);
  phi.ht_contr = height_contrast(phi.ht, mean_height(hp.sum(outer), outer.count()));
  return phi;
}

inline PotentialVector potentials(const SceneGrids& g, const RealIntegral& hp, const OrientedBox3D& b,
                                  double margin = kContrastMargin) {
  const GridSpec& s = g.occupancy.spec();
  return potentials_for_ranges(g, hp, box_voxel_range(s, b).range, box_voxel_range(s, b, margin).range);
}

struct EnergyResult {
  double energy = 0.0;
  PotentialVector phi;
};

inline EnergyResult energy(const SceneGrids& g, const OrientedBox3D& b, const ClassModel& model,
                           double margin = kContrastMargin) {
  const PotentialVector phi = potentials(g, g.height_for(model.class_id), b, margin);
  return {dot(model.weights, phi), phi};
}

}  // namespace voxprop
