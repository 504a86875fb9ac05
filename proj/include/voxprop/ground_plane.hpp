#pragma once

// Road-plane estimation: superpixel features, a one-hidden-layer ground
// classifier, and RANSAC plane fitting.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "voxprop/error.hpp"
#include "voxprop/geometry.hpp"

namespace voxprop {

inline constexpr std::size_t kFeatureDim = 22;

// Slot layout of the 22-dim superpixel feature. The last five slots are
// reserved and always zero.
namespace feat {
inline constexpr std::size_t kMeanR = 0, kMeanG = 1, kMeanB = 2;
inline constexpr std::size_t kMeanU = 3, kMeanV = 4;
inline constexpr std::size_t kMeanX = 5, kMeanY = 6, kMeanZ = 7;
inline constexpr std::size_t kPitch = 8, kRoll = 9;
inline constexpr std::size_t kAboveHorizon = 10;
inline constexpr std::size_t kStdR = 11, kStdG = 12, kStdB = 13;
inline constexpr std::size_t kStdX = 14, kStdY = 15, kStdZ = 16;
inline constexpr std::size_t kReserved0 = 17;  // through 21
}  // namespace feat

struct SuperpixelFeature {
  int id = 0;
  std::array<double, kFeatureDim> values{};
  bool degenerate_plane = false;  // fewer than 3 points or collinear: pitch/roll zeroed
  std::size_t point_count = 0;
};

using Rgb = std::array<double, 3>;

struct PlaneFit {
  Point3 centroid;
  Point3 normal;  // unit, oriented with normal.y <= 0
  double smallest_eig = 0.0;
  bool degenerate = true;
};

// Total least squares plane through the points.
inline PlaneFit fit_plane_lsq(std::span<const Point3> pts) {
  PlaneFit f;
  if (pts.size() < 3) return f;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const Point3& p : pts) mean += Eigen::Vector3d(p.x, p.y, p.z);
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const Point3& p : pts) {
    const Eigen::Vector3d d = Eigen::Vector3d(p.x, p.y, p.z) - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  const Eigen::Vector3d ev = es.eigenvalues();
  f.centroid = {mean.x(), mean.y(), mean.z()};
  // collinear when the two largest spreads are not both present
  const double scale = std::max(ev(2), 1e-300);
  f.degenerate = ev(1) <= 1e-12 * scale || ev(2) <= 0.0;
  Eigen::Vector3d n = es.eigenvectors().col(0);
  if (n.y() > 0.0) n = -n;
  f.normal = {n.x(), n.y(), n.z()};
  f.smallest_eig = ev(0);
  return f;
}

inline std::vector<SuperpixelFeature> extract_superpixel_features(const PointCloud& cloud,
                                                                  std::span<const Rgb> colors,
                                                                  std::span<const int> labels,
                                                                  const CameraCalib& calib,
                                                                  double horizon_row) {
  if (cloud.empty()) return {};
  require(colors.size() == cloud.size(), "superpixel features: one colour per point required");
  require(labels.size() == cloud.size(), "superpixel features: one label per point required");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);

  std::vector<SuperpixelFeature> out;
  out.reserve(groups.size());
  std::vector<Point3> pts;
  for (const auto& [id, idx] : groups) {
    SuperpixelFeature f;
    f.id = id;
    f.point_count = idx.size();
    const double n = static_cast<double>(idx.size());
    std::array<double, 3> mc{}, m3{};
    double mu = 0, mv = 0;
    pts.clear();
    for (std::size_t i : idx) {
      const Point3& p = cloud.points[i];
      for (int c = 0; c < 3; ++c) mc[c] += colors[i][c];
      m3[0] += p.x;
      m3[1] += p.y;
      m3[2] += p.z;
      const auto uv = calib.project(p);
      mu += uv[0];
      mv += uv[1];
      pts.push_back(p);
    }
    for (auto& v : mc) v /= n;
    for (auto& v : m3) v /= n;
    mu /= n;
    mv /= n;
    std::array<double, 3> vc{}, v3{};
    for (std::size_t i : idx) {
      const Point3& p = cloud.points[i];
      for (int c = 0; c < 3; ++c) vc[c] += (colors[i][c] - mc[c]) * (colors[i][c] - mc[c]);
      v3[0] += (p.x - m3[0]) * (p.x - m3[0]);
      v3[1] += (p.y - m3[1]) * (p.y - m3[1]);
      v3[2] += (p.z - m3[2]) * (p.z - m3[2]);
    }
    auto& v = f.values;
    v[feat::kMeanR] = mc[0];
    v[feat::kMeanG] = mc[1];
    v[feat::kMeanB] = mc[2];
    v[feat::kMeanU] = mu;
    v[feat::kMeanV] = mv;
    v[feat::kMeanX] = m3[0];
    v[feat::kMeanY] = m3[1];
    v[feat::kMeanZ] = m3[2];
    const PlaneFit fit = fit_plane_lsq(pts);
    f.degenerate_plane = fit.degenerate;
    if (!fit.degenerate) {
      v[feat::kPitch] = std::atan2(fit.normal.z, -fit.normal.y);
      v[feat::kRoll] = std::atan2(fit.normal.x, -fit.normal.y);
    }
    v[feat::kAboveHorizon] = mv < horizon_row ? 1.0 : 0.0;
    v[feat::kStdR] = std::sqrt(vc[0] / n);
    v[feat::kStdG] = std::sqrt(vc[1] / n);
    v[feat::kStdB] = std::sqrt(vc[2] / n);
    v[feat::kStdX] = std::sqrt(v3[0] / n);
    v[feat::kStdY] = std::sqrt(v3[1] / n);
    v[feat::kStdZ] = std::sqrt(v3[2] / n);
    out.push_back(f);
  }
  return out;
}

// Regular-grid stand-in for a superpixel segmentation: label = image cell.
inline std::vector<int> grid_superpixel_labels(const PointCloud& cloud, const CameraCalib& calib,
                                               int cell_px = 16) {
  require(cell_px > 0, "superpixel cell size must be positive");
  const int cols = (calib.width + cell_px - 1) / cell_px;
  std::vector<int> labels(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto uv = calib.project(cloud.points[i]);
    const int c = std::clamp(static_cast<int>(std::floor(uv[0] / cell_px)), 0, cols - 1);
    const int r = std::clamp(static_cast<int>(std::floor(uv[1] / cell_px)), 0,
                             (calib.height + cell_px - 1) / cell_px - 1);
    labels[i] = r * cols + c;
  }
  return labels;
}

// 22 -> 22 (tanh) -> 1 (sigmoid). Inputs are standardised with the stored
// per-dimension mean and scale before the first layer.
struct GroundClassifier {
  static constexpr std::size_t kIn = kFeatureDim;
  static constexpr std::size_t kHidden = 22;

  std::array<double, kHidden * kIn> w1{};  // row-major (hidden, input)
  std::array<double, kHidden> b1{};
  std::array<double, kHidden> w2{};
  double b2 = 0.0;
  std::array<double, kIn> input_mean{};
  std::array<double, kIn> input_scale{};
  std::uint64_t seed = 0;
  int epochs = 0;
  double learning_rate = 0.0;
  double final_loss = 0.0;

  GroundClassifier() { input_scale.fill(1.0); }

  bool finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    return std::all_of(w1.begin(), w1.end(), ok) && std::all_of(b1.begin(), b1.end(), ok) &&
           std::all_of(w2.begin(), w2.end(), ok) && std::isfinite(b2);
  }

  // Output logit; hidden activations written to `hidden` when given.
  double logit(const std::array<double, kIn>& x, std::array<double, kHidden>* hidden = nullptr) const {
    std::array<double, kIn> xs;
    for (std::size_t i = 0; i < kIn; ++i) xs[i] = (x[i] - input_mean[i]) * input_scale[i];
    double z = b2;
    for (std::size_t h = 0; h < kHidden; ++h) {
      double a = b1[h];
      const double* row = &w1[h * kIn];
      for (std::size_t i = 0; i < kIn; ++i) a += row[i] * xs[i];
      const double t = std::tanh(a);
      if (hidden) (*hidden)[h] = t;
      z += w2[h] * t;
    }
    return z;
  }

  double probability(const std::array<double, kIn>& x) const { return 1.0 / (1.0 + std::exp(-logit(x))); }
};

struct ClassifierGradient {
  std::array<double, GroundClassifier::kHidden * GroundClassifier::kIn> w1{};
  std::array<double, GroundClassifier::kHidden> b1{};
  std::array<double, GroundClassifier::kHidden> w2{};
  double b2 = 0.0;
};

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Mean binary cross-entropy and its gradient w.r.t. all weights and biases.
inline double classifier_loss(const GroundClassifier& clf, std::span<const SuperpixelFeature> xs,
                              std::span<const int> ys, ClassifierGradient* grad = nullptr) {
  constexpr std::size_t kIn = GroundClassifier::kIn, kH = GroundClassifier::kHidden;
  if (grad) *grad = ClassifierGradient{};
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  double loss = 0.0;
  std::array<double, kH> hid{};
  for (std::size_t n = 0; n < xs.size(); ++n) {
    const double z = clf.logit(xs[n].values, &hid);
    const double y = ys[n] ? 1.0 : 0.0;
    loss += softplus(z) - y * z;
    if (!grad) continue;
    const double dz = (1.0 / (1.0 + std::exp(-z)) - y) * inv_n;
    grad->b2 += dz;
    for (std::size_t h = 0; h < kH; ++h) {
      grad->w2[h] += dz * hid[h];
      const double da = dz * clf.w2[h] * (1.0 - hid[h] * hid[h]);
      grad->b1[h] += da;
      for (std::size_t i = 0; i < kIn; ++i) {
        grad->w1[h * kIn + i] += da * (xs[n].values[i] - clf.input_mean[i]) * clf.input_scale[i];
      }
    }
  }
  return loss * inv_n;
}

struct ClassifierTraining {
  GroundClassifier classifier;
  std::vector<double> loss_history;  // loss before each epoch, then final
};

inline ClassifierTraining train_ground_classifier(std::span<const SuperpixelFeature> xs,
                                                  std::span<const int> ys, int epochs,
                                                  double learning_rate, std::uint64_t seed) {
  require(xs.size() == ys.size() && !xs.empty(), "ground classifier: features and labels must align");
  require(epochs >= 0 && learning_rate > 0.0, "ground classifier: bad epochs or learning rate");
  const bool has_pos = std::any_of(ys.begin(), ys.end(), [](int y) { return y != 0; });
  const bool has_neg = std::any_of(ys.begin(), ys.end(), [](int y) { return y == 0; });
  if (!has_pos || !has_neg) throw InvalidArgument("ground classifier: need examples of both labels");

  constexpr std::size_t kIn = GroundClassifier::kIn;
  ClassifierTraining out;
  GroundClassifier& clf = out.classifier;
  clf.seed = seed;
  clf.epochs = epochs;
  clf.learning_rate = learning_rate;

  for (std::size_t i = 0; i < kIn; ++i) {
    double m = 0.0, v = 0.0;
    for (const auto& x : xs) m += x.values[i];
    m /= static_cast<double>(xs.size());
    for (const auto& x : xs) v += (x.values[i] - m) * (x.values[i] - m);
    const double sd = std::sqrt(v / static_cast<double>(xs.size()));
    clf.input_mean[i] = m;
    clf.input_scale[i] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(kIn)));
  for (auto& w : clf.w1) w = init(rng);
  for (auto& w : clf.w2) w = init(rng);

  ClassifierGradient g;
  for (int e = 0; e < epochs; ++e) {
    out.loss_history.push_back(classifier_loss(clf, xs, ys, &g));
    for (std::size_t k = 0; k < clf.w1.size(); ++k) clf.w1[k] -= learning_rate * g.w1[k];
    for (std::size_t k = 0; k < clf.b1.size(); ++k) clf.b1[k] -= learning_rate * g.b1[k];
    for (std::size_t k = 0; k < clf.w2.size(); ++k) clf.w2[k] -= learning_rate * g.w2[k];
    clf.b2 -= learning_rate * g.b2;
  }
  clf.final_loss = classifier_loss(clf, xs, ys);
  out.loss_history.push_back(clf.final_loss);
  return out;
}

inline std::vector<double> classify_ground(const GroundClassifier& clf,
                                           std::span<const SuperpixelFeature> xs) {
  std::vector<double> p;
  p.reserve(xs.size());
  for (const auto& x : xs) p.push_back(clf.probability(x.values));
  return p;
}

// Dynamic-length overload used at I/O boundaries.
inline double classify_ground(const GroundClassifier& clf, std::span<const double> x) {
  if (x.size() != kFeatureDim) {
    throw InvalidArgument("classify_ground: expected " + std::to_string(kFeatureDim) +
                          "-dim feature, got " + std::to_string(x.size()));
  }
  std::array<double, kFeatureDim> a{};
  std::copy(x.begin(), x.end(), a.begin());
  return clf.probability(a);
}

struct RansacParams {
  int iterations = 500;
  double inlier_threshold = 0.05;
  std::uint64_t seed = 0;
  double weight_cutoff = 0.5;
  std::size_t max_eval_points = 0;  // 0: score hypotheses on every candidate point
};

inline GroundPlane ransac_plane(std::span<const Point3> points, std::span<const double> weights,
                                const RansacParams& params) {
  require(weights.empty() || weights.size() == points.size(), "ransac: one weight per point required");
  require(params.iterations > 0 && params.inlier_threshold > 0.0, "ransac: bad parameters");
  std::vector<Point3> cand;
  cand.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (weights.empty() || weights[i] > params.weight_cutoff) cand.push_back(points[i]);
  }
  if (cand.size() < 3) throw Error("ransac: fewer than 3 candidate points");

  std::vector<Point3> eval;
  std::span<const Point3> eval_set(cand);
  if (params.max_eval_points > 0 && cand.size() > params.max_eval_points) {
    const std::size_t stride = (cand.size() + params.max_eval_points - 1) / params.max_eval_points;
    for (std::size_t i = 0; i < cand.size(); i += stride) eval.push_back(cand[i]);
    eval_set = eval;
  }

  std::mt19937_64 rng(params.seed);
  std::uniform_int_distribution<std::size_t> pick(0, cand.size() - 1);
  const double thr = params.inlier_threshold;
  std::size_t best_count = 0;
  Point3 best_n{};
  double best_d = 0.0;
  bool found = false;
  for (int it = 0; it < params.iterations; ++it) {
    std::size_t i0 = pick(rng), i1 = pick(rng), i2 = pick(rng);
    if (i0 == i1 || i1 == i2 || i0 == i2) continue;
    const Point3 a = cand[i0], b = cand[i1], c = cand[i2];
    Point3 n = cross(b - a, c - a);
    const double len = norm(n);
    const double scale = std::max(norm(b - a) * norm(c - a), 1e-300);
    if (!(len > 1e-12 * scale)) continue;
    n = (1.0 / len) * n;
    const double d = -dot(n, a);
    std::size_t count = 0;
    for (const Point3& p : eval_set) count += std::abs(dot(n, p) + d) <= thr;
    if (!found || count > best_count) {
      best_count = count;
      best_n = n;
      best_d = d;
      found = true;
    }
  }
  if (!found) throw Error("ransac: every hypothesis was degenerate");

  std::vector<Point3> inl;
  for (const Point3& p : cand) {
    if (std::abs(dot(best_n, p) + best_d) <= thr) inl.push_back(p);
  }
  const PlaneFit fit = fit_plane_lsq(inl);
  Point3 n = best_n;
  double d = best_d;
  if (!fit.degenerate) {
    n = fit.normal;
    d = -dot(n, fit.centroid);
  }
  if (n.y > 0.0) {
    n = -1.0 * n;
    d = -d;
  }
  if (!(n.y < 0.0)) throw Error("ransac: recovered plane is vertical");
  GroundPlane g = make_plane(n, d);
  double ss = 0.0;
  std::size_t count = 0;
  for (const Point3& p : cand) {
    const double r = dot(g.normal, p) + g.offset;
    if (std::abs(r) <= thr) {
      ss += r * r;
      ++count;
    }
  }
  g.inliers = count;
  g.rms = count ? std::sqrt(ss / static_cast<double>(count)) : 0.0;
  return g;
}

inline GroundPlane ransac_plane(const PointCloud& cloud, const RansacParams& params) {
  return ransac_plane(std::span<const Point3>(cloud.points), {}, params);
}

// Classifier-free route for LIDAR-only or synthetic input: keep points in a
// plausible road height band, then RANSAC.
struct HeightBand {
  double y_min = 1.0;
  double y_max = 2.2;
};

inline GroundPlane estimate_ground_direct(const PointCloud& cloud, const RansacParams& params,
                                          HeightBand band = {}) {
  std::vector<Point3> pts;
  for (const Point3& p : cloud.points) {
    if (p.y >= band.y_min && p.y <= band.y_max) pts.push_back(p);
  }
  return ransac_plane(pts, {}, params);
}

// Classifier route: superpixel ground probabilities become per-point weights.
inline GroundPlane estimate_ground_classified(const PointCloud& cloud,
                                              std::span<const SuperpixelFeature> features,
                                              std::span<const int> point_labels,
                                              const GroundClassifier& clf, const RansacParams& params) {
  require(point_labels.size() == cloud.size(), "one superpixel label per point required");
  std::map<int, double> prob;
  for (const auto& f : features) prob[f.id] = clf.probability(f.values);
  std::vector<double> w(cloud.size(), 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto it = prob.find(point_labels[i]);
    if (it != prob.end()) w[i] = it->second;
  }
  return ransac_plane(std::span<const Point3>(cloud.points), w, params);
}

}  // namespace voxprop
