#pragma once

// Candidate enumeration on the road plane, exhaustive energy scoring, and
// greedy energy-ranked NMS.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "voxprop/energy.hpp"
#include "voxprop/error.hpp"
#include "voxprop/geometry.hpp"
#include "voxprop/ground_plane.hpp"
#include "voxprop/voxel_grid.hpp"

namespace voxprop {

enum class PlaneTag : std::uint8_t { Road = 0, RoadPlusSigma = 1, RoadMinusSigma = 2 };

// Compact candidate record; the full box is rebuilt from the template table.
struct Candidate {
  double x = 0, y = 0, z = 0;
  std::uint16_t template_id = 0;
  std::uint8_t orientation = 0;  // 0 -> 0 deg, 1 -> 90 deg
  std::uint8_t plane = 0;        // PlaneTag
  std::array<float, 4> image_rect{};
};

struct CandidateSet {
  std::vector<Candidate> items;
  std::vector<double> energies;  // parallel to items once scored
  std::vector<Size3> templates;
  int class_id = kSharedClass;
  bool has_image_rects = false;
  std::size_t raw_count = 0;
  std::size_t pruned_empty = 0;
  std::size_t pruned_frustum = 0;

  std::size_t size() const { return items.size(); }
  bool scored() const { return energies.size() == items.size(); }

  OrientedBox3D box(std::size_t i) const {
    const Candidate& c = items[i];
    OrientedBox3D b;
    b.center = {c.x, c.y, c.z};
    b.size = templates[c.template_id];
    b.azimuth = c.orientation ? 0.5 * std::numbers::pi : 0.0;
    b.class_id = class_id;
    b.template_id = c.template_id;
    return b;
  }

  Rect2D image_rect(std::size_t i) const {
    const auto& r = items[i].image_rect;
    return {r[0], r[1], r[2], r[3], RectFrame::Image};
  }
};

struct SamplingParams {
  double stride = 0.2;            // (x, z) lattice spacing, metres
  double far_threshold = 20.0;    // extra +-sigma_road planes beyond this depth
};

inline CandidateSet enumerate_candidates(const ClassModel& model, const GroundPlane& plane,
                                         const GridSpec& spec, const CountIntegral& occ,
                                         const CameraCalib* camera, const SamplingParams& params = {}) {
  if (model.templates.empty()) throw InvalidArgument("enumerate_candidates: empty template list");
  require(params.stride > 0.0, "enumerate_candidates: stride must be positive");
  require(plane.valid(), "enumerate_candidates: invalid ground plane");
  require(model.templates.size() <= 65535, "enumerate_candidates: too many templates");
  CandidateSet cs;
  cs.templates = model.templates;
  cs.class_id = model.class_id;
  cs.has_image_rects = camera != nullptr;

  const Point3 hi = spec.max_corner();
  const int nx = static_cast<int>(std::floor((hi.x - spec.origin.x) / params.stride + 1e-9));
  const int nz = static_cast<int>(std::floor((hi.z - spec.origin.z) / params.stride + 1e-9));
  const double sigma = model.sigma_road;

  for (int iz = 0; iz < nz; ++iz) {
    const double z = spec.origin.z + (iz + 0.5) * params.stride;
    const bool far = z > params.far_threshold && sigma > 0.0;
    const int planes = far ? 3 : 1;
    for (int ix = 0; ix < nx; ++ix) {
      const double x = spec.origin.x + (ix + 0.5) * params.stride;
      const double road = plane.road_y(x, z);
      for (std::size_t t = 0; t < model.templates.size(); ++t) {
        const Size3& sz = model.templates[t];
        for (int o = 0; o < 2; ++o) {
          const double hx = 0.5 * (o ? sz.sz : sz.sx);
          const double hz = 0.5 * (o ? sz.sx : sz.sz);
          for (int p = 0; p < planes; ++p) {
            ++cs.raw_count;
            const double bottom = road + (p == 1 ? sigma : p == 2 ? -sigma : 0.0);
            const double cy = bottom - 0.5 * sz.sy;
            const VoxelRange r = voxel_range(spec, {x - hx, cy - 0.5 * sz.sy, z - hz},
                                             {x + hx, cy + 0.5 * sz.sy, z + hz});
            if (r.empty() || occ.sum(r) == 0) {
              ++cs.pruned_empty;
              continue;
            }
            Candidate c;
            c.x = x;
            c.y = cy;
            c.z = z;
            c.template_id = static_cast<std::uint16_t>(t);
            c.orientation = static_cast<std::uint8_t>(o);
            c.plane = static_cast<std::uint8_t>(p);
            if (camera) {
              OrientedBox3D b;
              b.center = {c.x, c.y, c.z};
              b.size = sz;
              b.azimuth = o ? 0.5 * std::numbers::pi : 0.0;
              Rect2D rect;
              bool visible = true;
              try {
                rect = project_box(b, *camera);
              } catch (const Error&) {
                visible = false;
              }
              if (!visible || rect.empty()) {
                ++cs.pruned_frustum;
                continue;
              }
              c.image_rect = {static_cast<float>(rect.x0), static_cast<float>(rect.y0),
                              static_cast<float>(rect.x1), static_cast<float>(rect.y1)};
            }
            cs.items.push_back(c);
          }
        }
      }
    }
  }
  return cs;
}

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n));
  if (workers == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

// Potentials of one lattice candidate; its box is axis-aligned so the voxel
// ranges come straight from the half extents.
inline PotentialVector candidate_potential(const Candidate& c, const std::vector<Size3>& templates,
                                           const SceneGrids& grids, const RealIntegral& hp, double margin) {
  const GridSpec& spec = grids.occupancy.spec();
  const Size3& sz = templates[c.template_id];
  const double hx = 0.5 * (c.orientation ? sz.sz : sz.sx);
  const double hz = 0.5 * (c.orientation ? sz.sx : sz.sz);
  const double hy = 0.5 * sz.sy;
  const Point3 lo{c.x - hx, c.y - hy, c.z - hz}, hi{c.x + hx, c.y + hy, c.z + hz};
  const VoxelRange inner = voxel_range(spec, lo, hi);
  const VoxelRange outer = voxel_range(spec, {lo.x - margin, lo.y - margin, lo.z - margin},
                                       {hi.x + margin, hi.y + margin, hi.z + margin});
  return potentials_for_ranges(grids, hp, inner, outer);
}

// Potentials of every candidate, in candidate order.
inline std::vector<PotentialVector> candidate_potentials(const CandidateSet& cands, const SceneGrids& grids,
                                                         int class_id, double margin = kContrastMargin,
                                                         int threads = 1) {
  const RealIntegral& hp = grids.height_for(class_id);
  std::vector<PotentialVector> out(cands.size());
  detail::parallel_for(cands.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      out[i] = candidate_potential(cands.items[i], cands.templates, grids, hp, margin);
    }
  });
  return out;
}

inline CandidateSet score_candidates(CandidateSet cands, const SceneGrids& grids, const ClassModel& model,
                                     double margin = kContrastMargin, int threads = 1) {
  const RealIntegral& hp = grids.height_for(model.class_id);
  cands.energies.assign(cands.size(), 0.0);
  const Weights w = model.weights;
  detail::parallel_for(cands.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      cands.energies[i] = dot(w, candidate_potential(cands.items[i], cands.templates, grids, hp, margin));
    }
  });
  return cands;
}

enum class NmsMode : std::uint8_t { Image2D, Bev2D };

struct Proposal {
  OrientedBox3D box;
  double energy = 0.0;
  int rank = 0;
  Rect2D rect;  // NMS rectangle (image or BEV, per mode)
  std::uint8_t plane = 0;
};

struct ProposalList {
  std::vector<Proposal> items;
  int k = 0;
  NmsMode mode = NmsMode::Image2D;
  double delta = 0.75;

  std::size_t size() const { return items.size(); }
};

// Total order used for ranking: energy, then (z, x, template, orientation, plane).
inline bool candidate_before(const CandidateSet& cs, std::size_t a, std::size_t b) {
  const double ea = cs.energies[a], eb = cs.energies[b];
  if (ea != eb) return ea < eb;
  const Candidate &ca = cs.items[a], &cb = cs.items[b];
  if (ca.z != cb.z) return ca.z < cb.z;
  if (ca.x != cb.x) return ca.x < cb.x;
  if (ca.template_id != cb.template_id) return ca.template_id < cb.template_id;
  if (ca.orientation != cb.orientation) return ca.orientation < cb.orientation;
  if (ca.plane != cb.plane) return ca.plane < cb.plane;
  return ca.y < cb.y;
}

inline Rect2D nms_rect(const CandidateSet& cs, std::size_t i, NmsMode mode) {
  return mode == NmsMode::Image2D ? cs.image_rect(i) : bev_footprint(cs.box(i));
}

namespace detail {

// Uniform bucket grid over selected rectangles. Any two rectangles that
// overlap with positive area share at least one bucket.
class RectBuckets {
 public:
  RectBuckets(double x0, double y0, double x1, double y1, int cells_per_axis = 64)
      : x0_(x0), y0_(y0) {
    cw_ = std::max((x1 - x0) / cells_per_axis, 1e-9);
    ch_ = std::max((y1 - y0) / cells_per_axis, 1e-9);
    nx_ = cells_per_axis;
    ny_ = cells_per_axis;
    cells_.resize(static_cast<std::size_t>(nx_ * ny_));
  }

  template <typename Fn>
  bool any_of(const Rect2D& r, Fn&& fn) const {
    const auto [a, b, c, d] = span(r);
    for (int i = a; i <= c; ++i)
      for (int j = b; j <= d; ++j)
        for (std::uint32_t id : cells_[static_cast<std::size_t>(i * ny_ + j)])
          if (fn(id)) return true;
    return false;
  }

  void insert(const Rect2D& r, std::uint32_t id) {
    const auto [a, b, c, d] = span(r);
    for (int i = a; i <= c; ++i)
      for (int j = b; j <= d; ++j) cells_[static_cast<std::size_t>(i * ny_ + j)].push_back(id);
  }

 private:
  std::array<int, 4> span(const Rect2D& r) const {
    auto cx = [&](double v) { return std::clamp(static_cast<int>(std::floor((v - x0_) / cw_)), 0, nx_ - 1); };
    auto cy = [&](double v) { return std::clamp(static_cast<int>(std::floor((v - y0_) / ch_)), 0, ny_ - 1); };
    return {cx(r.x0), cy(r.y0), cx(r.x1), cy(r.y1)};
  }

  double x0_, y0_, cw_, ch_;
  int nx_, ny_;
  std::vector<std::vector<std::uint32_t>> cells_;
};

}  // namespace detail

inline ProposalList greedy_nms(const CandidateSet& cs, int k, double delta = 0.75,
                               NmsMode mode = NmsMode::Image2D) {
  if (k <= 0) throw InvalidArgument("greedy_nms: K must be positive");
  require(delta > 0.0 && delta <= 1.0, "greedy_nms: delta must lie in (0, 1]");
  require(cs.scored(), "greedy_nms: candidates are not scored");
  if (mode == NmsMode::Image2D && !cs.has_image_rects && !cs.items.empty()) {
    throw InvalidArgument("greedy_nms: image-plane NMS needs candidates enumerated with a camera");
  }
  ProposalList out;
  out.k = k;
  out.mode = mode;
  out.delta = delta;
  if (cs.items.empty()) return out;

  std::vector<std::uint32_t> order(cs.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return candidate_before(cs, a, b); });

  std::vector<Rect2D> rects(cs.size());
  double bx0 = HUGE_VAL, by0 = HUGE_VAL, bx1 = -HUGE_VAL, by1 = -HUGE_VAL;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    rects[i] = nms_rect(cs, i, mode);
    bx0 = std::min(bx0, rects[i].x0);
    by0 = std::min(by0, rects[i].y0);
    bx1 = std::max(bx1, rects[i].x1);
    by1 = std::max(by1, rects[i].y1);
  }
  detail::RectBuckets buckets(bx0, by0, bx1, by1);

  for (std::uint32_t idx : order) {
    if (static_cast<int>(out.items.size()) >= k) break;
    const Rect2D& r = rects[idx];
    const bool suppressed = buckets.any_of(r, [&](std::uint32_t sel) { return iou_2d(rects[sel], r) >= delta; });
    if (suppressed) continue;
    buckets.insert(r, idx);
    Proposal p;
    p.box = cs.box(idx);
    p.energy = cs.energies[idx];
    p.rank = static_cast<int>(out.items.size());
    p.rect = r;
    p.plane = cs.items[idx].plane;
    out.items.push_back(p);
  }
  return out;
}

// Grids for a scene and one class model.
inline SceneGrids build_scene_grids(const BinaryGrid& occupancy, Point3 camera_origin,
                                    const GroundPlane& plane, const std::vector<ClassModel>& models) {
  SceneGrids g;
  g.occupancy = build_integral(occupancy);
  g.free_space = build_integral(carve_free_space(occupancy, camera_origin));
  for (const auto& m : models) {
    g.height_prior.emplace(m.class_id, build_integral(build_height_prior(occupancy, plane, m.mu_ht, m.sigma_ht)));
  }
  return g;
}

enum class GroundMode : std::uint8_t { Provided, Ransac, Default };

struct ProposeConfig {
  GridSpec grid = kitti_grid_spec();
  SamplingParams sampling;
  int k = 2000;
  double delta = 0.75;
  double margin = kContrastMargin;
  NmsMode nms_mode = NmsMode::Image2D;
  GroundMode ground_mode = GroundMode::Ransac;
  std::optional<GroundPlane> plane;  // used when ground_mode == Provided
  GroundPlane default_plane;         // fallback: flat road 1.65 m below the camera
  RansacParams ransac{500, 0.05, 0, 0.5, 20000};
  HeightBand band;
  int threads = 1;
};

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct ProposeResult {
  ProposalList proposals;
  GroundPlane plane;
  std::vector<StageTiming> timings;
  std::vector<std::string> warnings;
  std::size_t candidates_scored = 0;
  std::size_t points_outside_grid = 0;
};

inline ProposeResult propose(const PointCloud& cloud, const CameraCalib* calib, const ClassModel& model,
                             const ProposeConfig& cfg) {
  model.validate();
  ProposeResult res;
  using clock = std::chrono::steady_clock;
  auto t = clock::now();
  auto lap = [&](const char* name) {
    const auto now = clock::now();
    res.timings.push_back({name, std::chrono::duration<double, std::milli>(now - t).count()});
    t = now;
  };

  res.proposals.k = cfg.k;
  res.proposals.mode = cfg.nms_mode;
  res.proposals.delta = cfg.delta;
  if (cfg.nms_mode == NmsMode::Image2D && !calib) {
    throw InvalidArgument("propose: image-plane NMS requires camera calibration");
  }

  switch (cfg.ground_mode) {
    case GroundMode::Provided:
      require(cfg.plane.has_value(), "propose: ground mode 'provided' without a plane");
      res.plane = *cfg.plane;
      break;
    case GroundMode::Default:
      res.plane = cfg.default_plane;
      break;
    case GroundMode::Ransac:
      try {
        res.plane = estimate_ground_direct(cloud, cfg.ransac, cfg.band);
      } catch (const Error& e) {
        res.plane = cfg.default_plane;
        res.warnings.push_back(std::string("ground plane estimation failed (") + e.what() +
                               "); using default plane");
      }
      break;
  }
  lap("ground");
  if (cloud.empty()) return res;

  VoxelizeResult vox = voxelize(cloud, cfg.grid);
  res.points_outside_grid = vox.outside;
  lap("voxelize");
  const Point3 cam = calib ? calib->camera_center() : Point3{0.0, 0.0, 0.0};
  SceneGrids grids;
  grids.occupancy = build_integral(vox.grid);
  grids.free_space = build_integral(carve_free_space(vox.grid, cam));
  lap("free_space");
  grids.height_prior.emplace(model.class_id,
                             build_integral(build_height_prior(vox.grid, res.plane, model.mu_ht, model.sigma_ht)));
  lap("height_prior");

  CandidateSet cands = enumerate_candidates(model, res.plane, cfg.grid, grids.occupancy, calib, cfg.sampling);
  lap("enumerate");
  cands = score_candidates(std::move(cands), grids, model, cfg.margin, cfg.threads);
  res.candidates_scored = cands.size();
  lap("score");
  res.proposals = greedy_nms(cands, cfg.k, cfg.delta, cfg.nms_mode);
  lap("nms");
  return res;
}

}  // namespace voxprop
