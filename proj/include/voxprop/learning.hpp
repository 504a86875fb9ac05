#pragma once

// Learnable pieces of the proposal model: size templates, height and road
// statistics, and the potential weights (n-slack structured SVM trained with
// cutting planes; the restricted QP is solved in the dual by blockwise SMO).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "voxprop/energy.hpp"
#include "voxprop/error.hpp"
#include "voxprop/geometry.hpp"
#include "voxprop/sampler.hpp"
#include "voxprop/voxel_grid.hpp"

namespace voxprop {

// ---------------------------------------------------------------------------
// Size templates

struct TemplateParams {
  double bin = 0.1;          // histogram bin width per dimension, metres
  double iou_threshold = 0.6;
  std::size_t min_cluster = 1;
  std::size_t max_templates = 3;
};

// IoU of two boxes sharing a centre and orientation.
inline double centered_iou(const Size3& a, const Size3& b) {
  const double inter = std::min(a.sx, b.sx) * std::min(a.sy, b.sy) * std::min(a.sz, b.sz);
  return inter / (a.volume() + b.volume() - inter);
}

// Iterative mode clustering: histogram the sizes, anchor on the mean of the
// fullest bin, take every size whose centred IoU with the anchor exceeds the
// threshold, emit the cluster mean, remove the cluster and repeat.
inline std::vector<Size3> fit_templates(std::span<const Size3> sizes, const TemplateParams& params = {}) {
  if (sizes.empty()) throw InvalidArgument("fit_templates: no sizes given");
  require(params.bin > 0.0 && params.max_templates >= 1, "fit_templates: bad parameters");
  for (const auto& s : sizes) require(s.sx > 0 && s.sy > 0 && s.sz > 0, "fit_templates: sizes must be positive");

  // sorted copy makes the result independent of input order
  std::vector<Size3> rest(sizes.begin(), sizes.end());
  auto key = [](const Size3& s) { return std::tie(s.sx, s.sy, s.sz); };
  std::sort(rest.begin(), rest.end(), [&](const Size3& a, const Size3& b) { return key(a) < key(b); });

  using Bin = std::array<long long, 3>;
  auto bin_of = [&](const Size3& s) {
    return Bin{static_cast<long long>(std::floor(s.sx / params.bin)),
               static_cast<long long>(std::floor(s.sy / params.bin)),
               static_cast<long long>(std::floor(s.sz / params.bin))};
  };
  auto mean_of = [](const std::vector<Size3>& v) {
    Size3 m{};
    for (const auto& s : v) {
      m.sx += s.sx;
      m.sy += s.sy;
      m.sz += s.sz;
    }
    const double n = static_cast<double>(v.size());
    return Size3{m.sx / n, m.sy / n, m.sz / n};
  };

  std::vector<Size3> out;
  do {
    std::map<Bin, std::vector<Size3>> hist;
    for (const auto& s : rest) hist[bin_of(s)].push_back(s);
    auto mode = hist.begin();
    for (auto it = hist.begin(); it != hist.end(); ++it) {
      if (it->second.size() > mode->second.size()) mode = it;
    }
    const Size3 anchor = mean_of(mode->second);
    std::vector<Size3> cluster, keep;
    for (const auto& s : rest) (centered_iou(s, anchor) > params.iou_threshold ? cluster : keep).push_back(s);
    if (cluster.empty()) break;  // unreachable for sane thresholds: the mode bin clusters with its mean
    out.push_back(mean_of(cluster));
    rest.swap(keep);
  } while (out.size() < params.max_templates && !rest.empty() && rest.size() >= params.min_cluster);
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian MLE statistics

struct GaussianStats {
  double mean = 0.0;
  double sigma = 0.0;  // 1/N normalisation
};

inline GaussianStats gaussian_mle(std::span<const double> xs) {
  // Welford
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  return {mean, n ? std::sqrt(std::max(0.0, m2 / static_cast<double>(n))) : 0.0};
}

// Mean and spread of object-centre heights above the road.
inline GaussianStats fit_height_stats(std::span<const OrientedBox3D> boxes, const GroundPlane& plane) {
  if (boxes.size() < 2) throw InvalidArgument("fit_height_stats: need at least 2 boxes");
  std::vector<double> h;
  h.reserve(boxes.size());
  for (const auto& b : boxes) h.push_back(plane.height_above(b.center));
  return gaussian_mle(h);
}

// Spread of box-bottom heights above the road.
inline double fit_road_sigma(std::span<const OrientedBox3D> boxes, const GroundPlane& plane) {
  if (boxes.size() < 2) throw InvalidArgument("fit_road_sigma: need at least 2 boxes");
  std::vector<double> h;
  h.reserve(boxes.size());
  for (const auto& b : boxes) h.push_back(plane.height_above({b.center.x, b.ymax(), b.center.z}));
  return gaussian_mle(h).sigma;
}

// Per-scene variant: heights measured against each box's own scene plane.
struct PlacedBox {
  OrientedBox3D box;
  GroundPlane plane;
};

inline GaussianStats fit_height_stats(std::span<const PlacedBox> boxes) {
  if (boxes.size() < 2) throw InvalidArgument("fit_height_stats: need at least 2 boxes");
  std::vector<double> h;
  for (const auto& pb : boxes) h.push_back(pb.plane.height_above(pb.box.center));
  return gaussian_mle(h);
}

inline double fit_road_sigma(std::span<const PlacedBox> boxes) {
  if (boxes.size() < 2) throw InvalidArgument("fit_road_sigma: need at least 2 boxes");
  std::vector<double> h;
  for (const auto& pb : boxes) h.push_back(pb.plane.height_above({pb.box.center.x, pb.box.ymax(), pb.box.center.z}));
  return gaussian_mle(h).sigma;
}

// ---------------------------------------------------------------------------
// Structured SVM

struct TrainingScene {
  std::string id;
  GroundPlane plane;
  std::vector<OrientedBox3D> gts;
  std::vector<PotentialVector> gt_phi;  // potentials of each GT's grid-aligned snap
  std::vector<OrientedBox3D> candidates;
  std::vector<PotentialVector> cand_phi;
};

// One (scene, GT) training pair with its admissible candidates and losses.
struct TrainingPair {
  std::size_t scene = 0;
  std::size_t gt = 0;
  std::vector<std::uint32_t> cands;
  std::vector<double> loss;  // 1 - IoU3D(gt, candidate), parallel to cands
};

inline constexpr double kOtherGtExclusionIou = 0.25;

// Candidates overlapping a different GT at IoU3D >= 0.25 are left out.
inline TrainingPair build_pair(const TrainingScene& scene, std::size_t scene_index, std::size_t gt_index) {
  require(gt_index < scene.gts.size(), "build_pair: GT index out of range");
  TrainingPair p;
  p.scene = scene_index;
  p.gt = gt_index;
  const OrientedBox3D& gt = scene.gts[gt_index];
  for (std::size_t c = 0; c < scene.candidates.size(); ++c) {
    const OrientedBox3D& y = scene.candidates[c];
    bool excluded = false;
    for (std::size_t o = 0; o < scene.gts.size() && !excluded; ++o) {
      if (o != gt_index && iou_3d(scene.gts[o], y) >= kOtherGtExclusionIou) excluded = true;
    }
    if (excluded) continue;
    p.cands.push_back(static_cast<std::uint32_t>(c));
    p.loss.push_back(1.0 - iou_3d(gt, y));
  }
  return p;
}

inline std::vector<TrainingPair> build_pairs(std::span<const TrainingScene> scenes) {
  std::vector<TrainingPair> out;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (std::size_t g = 0; g < scenes[s].gts.size(); ++g) out.push_back(build_pair(scenes[s], s, g));
  }
  return out;
}

inline Weights psi(const PotentialVector& y, const PotentialVector& gt) {
  return {y.pcd - gt.pcd, y.fs - gt.fs, y.ht - gt.ht, y.ht_contr - gt.ht_contr};
}

inline double wdot(const Weights& a, const Weights& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
}

struct ViolatedConstraint {
  std::uint32_t candidate = 0;  // index into the scene's candidate list
  OrientedBox3D box;
  double violation = 0.0;  // loss - w.(phi(y) - phi(gt))
};

// Exact argmax over the pair's admissible candidates; ties keep the lowest index.
inline ViolatedConstraint loss_augmented_inference(const TrainingScene& scene, const TrainingPair& pair,
                                                   const Weights& w) {
  if (pair.cands.empty()) throw Error("loss_augmented_inference: empty candidate set");
  const PotentialVector& gphi = scene.gt_phi[pair.gt];
  const double e_gt = dot(w, gphi);
  ViolatedConstraint best;
  best.violation = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < pair.cands.size(); ++j) {
    const double v = pair.loss[j] - (dot(w, scene.cand_phi[pair.cands[j]]) - e_gt);
    if (v > best.violation) {
      best.violation = v;
      best.candidate = pair.cands[j];
    }
  }
  best.box = scene.candidates[best.candidate];
  return best;
}

inline ViolatedConstraint loss_augmented_inference(const TrainingScene& scene, std::size_t gt_index,
                                                   const Weights& w) {
  return loss_augmented_inference(scene, build_pair(scene, 0, gt_index), w);
}

struct SsvmConfig {
  double c = 1.0;
  double tolerance = 1e-3;
  int max_rounds = 100;
  double qp_tolerance = 1e-6;
  int max_qp_sweeps = 200000;
};

struct SsvmLogEntry {
  int round = 0;
  double objective = 0.0;      // restricted-QP objective after this round's solve
  double max_violation = 0.0;  // largest violation found before adding constraints
  std::size_t working_set = 0;
};

struct SsvmResult {
  Weights weights{0, 0, 0, 0};
  bool converged = false;
  int rounds = 0;
  std::vector<SsvmLogEntry> log;
  std::vector<double> slacks;  // per pair, over the final working set
  std::vector<std::vector<std::uint32_t>> working_set;  // per pair, candidate ids
};

namespace detail {

struct DualConstraint {
  Weights psi{0, 0, 0, 0};
  double loss = 0.0;
  double alpha = 0.0;
  std::uint32_t cand = 0;
  bool null = false;  // the slack constraint (psi = 0, loss = 0)
};

struct DualState {
  std::vector<std::vector<DualConstraint>> blocks;
  Weights w{0, 0, 0, 0};

  double objective() const {
    double lin = 0.0;
    for (const auto& b : blocks)
      for (const auto& c : b) lin += c.alpha * c.loss;
    return lin - 0.5 * wdot(w, w);
  }
};

// Blockwise SMO on: max sum a*loss - 1/2 |sum a*psi|^2, with sum_y a_iy = C/N
// per block (the null constraint absorbs the slack) and a >= 0.
inline void solve_dual(DualState& st, double tol, int max_sweeps) {
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double worst_gap = 0.0;
    for (auto& block : st.blocks) {
      for (int inner = 0; inner < 64; ++inner) {
        std::size_t up = 0, down = block.size();
        double g_up = -std::numeric_limits<double>::infinity(), g_down = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < block.size(); ++j) {
          const double g = block[j].loss - wdot(st.w, block[j].psi);
          if (g > g_up) {
            g_up = g;
            up = j;
          }
          if (block[j].alpha > 0.0 && g < g_down) {
            g_down = g;
            down = j;
          }
        }
        if (down == block.size()) break;
        const double gap = g_up - g_down;
        if (inner == 0) worst_gap = std::max(worst_gap, gap);
        if (gap <= tol || up == down) break;
        Weights d{};
        for (int k = 0; k < 4; ++k) d[k] = block[up].psi[k] - block[down].psi[k];
        const double q = wdot(d, d);
        double t = q > 0.0 ? gap / q : block[down].alpha;
        t = std::min(t, block[down].alpha);
        block[up].alpha += t;
        block[down].alpha -= t;
        if (block[down].alpha < 1e-300) block[down].alpha = 0.0;
        for (int k = 0; k < 4; ++k) st.w[k] += t * d[k];
      }
    }
    if (worst_gap <= tol) return;
  }
}

}  // namespace detail

inline SsvmResult train_ssvm(std::span<const TrainingScene> scenes, std::span<const TrainingPair> pairs,
                             const SsvmConfig& cfg = {}) {
  require(cfg.c > 0.0 && cfg.tolerance > 0.0, "train_ssvm: C and tolerance must be positive");
  require(!pairs.empty(), "train_ssvm: no training pairs");
  for (const auto& p : pairs) {
    require(p.scene < scenes.size(), "train_ssvm: pair references a missing scene");
    require(scenes[p.scene].gt_phi.size() == scenes[p.scene].gts.size(),
            "train_ssvm: GT potentials not cached");
    require(scenes[p.scene].cand_phi.size() == scenes[p.scene].candidates.size(),
            "train_ssvm: candidate potentials not cached");
  }
  const double cap = cfg.c / static_cast<double>(pairs.size());
  detail::DualState st;
  st.blocks.resize(pairs.size());
  for (auto& b : st.blocks) {
    detail::DualConstraint null;
    null.alpha = cap;
    null.null = true;
    b.push_back(null);
  }

  SsvmResult res;
  auto slack_of = [&](const std::vector<detail::DualConstraint>& block) {
    double xi = 0.0;
    for (const auto& c : block) xi = std::max(xi, c.loss - wdot(st.w, c.psi));
    return xi;
  };

  for (int round = 1; round <= cfg.max_rounds; ++round) {
    std::size_t added = 0;
    double max_viol = 0.0;
    std::vector<ViolatedConstraint> found(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      found[i] = loss_augmented_inference(scenes[pairs[i].scene], pairs[i], st.w);
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      auto& block = st.blocks[i];
      const double excess = found[i].violation - slack_of(block);
      max_viol = std::max(max_viol, excess);
      if (excess <= cfg.tolerance) continue;
      const bool present = std::any_of(block.begin(), block.end(), [&](const auto& c) {
        return !c.null && c.cand == found[i].candidate;
      });
      if (present) continue;
      const TrainingScene& sc = scenes[pairs[i].scene];
      detail::DualConstraint c;
      c.psi = psi(sc.cand_phi[found[i].candidate], sc.gt_phi[pairs[i].gt]);
      c.loss = 1.0 - iou_3d(sc.gts[pairs[i].gt], sc.candidates[found[i].candidate]);
      c.cand = found[i].candidate;
      block.push_back(c);
      ++added;
    }
    std::size_t ws = 0;
    for (const auto& b : st.blocks) ws += b.size() - 1;
    res.rounds = round;
    if (added == 0) {
      res.converged = true;
      res.log.push_back({round, st.objective(), max_viol, ws});
      break;
    }
    detail::solve_dual(st, cfg.qp_tolerance, cfg.max_qp_sweeps);
    res.log.push_back({round, st.objective(), max_viol, ws});
  }

  res.weights = st.w;
  for (const auto& b : st.blocks) {
    res.slacks.push_back(slack_of(b));
    std::vector<std::uint32_t> ids;
    for (const auto& c : b)
      if (!c.null) ids.push_back(c.cand);
    res.working_set.push_back(std::move(ids));
  }
  return res;
}

inline SsvmResult train_ssvm(std::span<const TrainingScene> scenes, const SsvmConfig& cfg = {}) {
  const auto pairs = build_pairs(scenes);
  return train_ssvm(scenes, pairs, cfg);
}

// Largest amount by which any admissible candidate violates its margin
// constraint beyond the pair's slack (<= 0 when every constraint holds).
inline double max_constraint_excess(std::span<const TrainingScene> scenes, std::span<const TrainingPair> pairs,
                                    const Weights& w, std::span<const double> slacks) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& sc = scenes[pairs[i].scene];
    const double e_gt = dot(w, sc.gt_phi[pairs[i].gt]);
    for (std::size_t j = 0; j < pairs[i].cands.size(); ++j) {
      const double v = pairs[i].loss[j] - (dot(w, sc.cand_phi[pairs[i].cands[j]]) - e_gt) - slacks[i];
      worst = std::max(worst, v);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Building training scenes from point clouds

struct TrainingSceneOptions {
  SamplingParams sampling;
  double margin = kContrastMargin;
  std::size_t max_negatives = 2000;  // random far-from-GT candidates kept per scene
  std::size_t hard_negatives = 500;  // densest far-from-GT candidates kept per scene
  std::uint64_t seed = 0;
};

// Nearest box on the candidate lattice: (x, z) snapped to lattice centres,
// azimuth to the nearer of {0, 90} degrees.
inline OrientedBox3D snap_to_lattice(const OrientedBox3D& b, const GridSpec& spec, double stride) {
  OrientedBox3D s = b;
  auto snap = [&](double v, double o) { return o + (std::floor((v - o) / stride) + 0.5) * stride; };
  s.center.x = snap(b.center.x, spec.origin.x);
  s.center.z = snap(b.center.z, spec.origin.z);
  const double half = std::fmod(b.azimuth, std::numbers::pi);
  const double q = std::abs(half - 0.5 * std::numbers::pi);
  s.azimuth = q < std::numbers::pi / 4 ? 0.5 * std::numbers::pi : 0.0;
  return s;
}

inline TrainingScene make_training_scene(std::string id, const PointCloud& cloud, const CameraCalib* calib,
                                         const GroundPlane& plane, std::vector<OrientedBox3D> gts,
                                         const ClassModel& model, const GridSpec& spec,
                                         const TrainingSceneOptions& opt = {}) {
  TrainingScene sc;
  sc.id = std::move(id);
  sc.plane = plane;
  sc.gts = std::move(gts);
  const BinaryGrid occ = voxelize(cloud, spec).grid;
  const Point3 cam = calib ? calib->camera_center() : Point3{};
  const SceneGrids grids = build_scene_grids(occ, cam, plane, {model});
  const RealIntegral& hp = grids.height_for(model.class_id);

  CandidateSet cs = enumerate_candidates(model, plane, spec, grids.occupancy, calib, opt.sampling);
  const auto phi = candidate_potentials(cs, grids, model.class_id, opt.margin);

  std::vector<std::uint32_t> near, far;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    const OrientedBox3D b = cs.box(i);
    const Rect2D r = bev_footprint(b);
    bool touches = false;
    for (const auto& g : sc.gts) {
      const Rect2D gr = bev_footprint(g);
      if (r.x0 < gr.x1 && gr.x0 < r.x1 && r.y0 < gr.y1 && gr.y0 < r.y1) {
        touches = true;
        break;
      }
    }
    (touches ? near : far).push_back(static_cast<std::uint32_t>(i));
  }
  std::vector<std::uint32_t> keep = near;
  // densest background boxes are the likeliest confusers
  std::vector<std::uint32_t> by_density = far;
  std::stable_sort(by_density.begin(), by_density.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return phi[a].pcd > phi[b].pcd; });
  const std::size_t hard = std::min(opt.hard_negatives, by_density.size());
  std::vector<char> taken(cs.size(), 0);
  for (std::size_t i = 0; i < hard; ++i) {
    keep.push_back(by_density[i]);
    taken[by_density[i]] = 1;
  }
  std::vector<std::uint32_t> pool;
  for (std::uint32_t i : far)
    if (!taken[i]) pool.push_back(i);
  std::mt19937_64 rng(opt.seed);
  for (std::size_t i = 0; i < pool.size() && i < opt.max_negatives; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
    std::swap(pool[i], pool[d(rng)]);
    keep.push_back(pool[i]);
  }
  std::sort(keep.begin(), keep.end());
  for (std::uint32_t i : keep) {
    sc.candidates.push_back(cs.box(i));
    sc.cand_phi.push_back(phi[i]);
  }
  for (const auto& g : sc.gts) {
    sc.gt_phi.push_back(potentials(grids, hp, snap_to_lattice(g, spec, opt.sampling.stride), opt.margin));
  }
  return sc;
}

}  // namespace voxprop
