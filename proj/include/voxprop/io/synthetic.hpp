#pragma once

// Seeded synthetic street scenes: a noisy road carpet, cuboid objects seen
// from one viewpoint (only camera-facing faces, with mutual occlusion), and
// optional uniform clutter. Deterministic for a given spec.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "voxprop/error.hpp"
#include "voxprop/geometry.hpp"
#include "voxprop/io/kitti.hpp"

namespace voxprop::io {

struct SizeDistribution {
  Size3 mean{3.9, 1.56, 1.6};
  Size3 stddev{0.15, 0.05, 0.05};  // truncated at 2 sigma
};

struct SyntheticClass {
  std::string type = "Car";
  int min_count = 1;
  int max_count = 5;
  SizeDistribution size;
};

struct SyntheticSceneSpec {
  std::uint64_t seed = 0;
  GroundPlane plane;
  CameraCalib camera = make_pinhole(721.5377, 609.5593, 172.854, kKittiWidth, kKittiHeight);
  std::vector<SyntheticClass> classes{SyntheticClass{}};
  double min_distance = 5.0;  // object ground distance |(x, z)|
  double max_distance = 50.0;
  double ground_density = 50.0;   // points per m^2 of road
  double object_density = 200.0;  // points per m^2 of visible surface
  double noise_sigma = 0.02;      // per axis, truncated at 3 sigma
  double clutter_fraction = 0.0;  // share of all points that are uniform outliers
  bool axis_aligned = true;       // yaw in {0, 90} degrees, else uniform
  double yaw_jitter = 0.0;        // radians, added to aligned yaws
  double min_gap = 0.5;           // footprint clearance between objects, metres
  double max_occlusion = 0.5;     // largest occluded share of an object's visible surface
  double x_extent = 35.0;         // carpet |x| limit
  double z_near = 3.0, z_far = 70.0;
  int max_attempts = 100;

  void validate() const {
    require(ground_density >= 0 && object_density >= 0 && noise_sigma >= 0, "synthetic: densities and sigma >= 0");
    require(clutter_fraction >= 0 && clutter_fraction < 1, "synthetic: clutter fraction in [0, 1)");
    require(min_distance > 0 && max_distance > min_distance, "synthetic: bad distance range");
    require(plane.valid() && camera.valid(), "synthetic: invalid plane or camera");
    for (const auto& c : classes) {
      require(c.min_count >= 0 && c.max_count >= c.min_count, "synthetic: bad object count range");
      require(c.size.mean.sx > 0 && c.size.mean.sy > 0 && c.size.mean.sz > 0, "synthetic: sizes must be positive");
    }
  }
};

struct SyntheticObject {
  std::string type;
  OrientedBox3D box;
  Rect2D rect;  // projected 2D box
  double occluded = 0.0;  // occluded share of visible surface
  int occlusion = 0;      // KITTI-style level
  double truncation = 0.0;
};

struct SyntheticScene {
  PointCloud cloud;
  GroundPlane plane;
  CameraCalib camera;
  std::vector<SyntheticObject> objects;
  std::size_t ground_points = 0;
  std::size_t object_points = 0;
  std::size_t clutter_points = 0;

  std::vector<OrientedBox3D> boxes() const {
    std::vector<OrientedBox3D> b;
    for (const auto& o : objects) b.push_back(o.box);
    return b;
  }
};

namespace detail {

struct Face {
  Point3 center, normal, e1, e2;  // half-extent edge vectors
};

// Side and top faces; the bottom rests on the road and is never seen.
inline std::vector<Face> box_faces(const OrientedBox3D& b) {
  const double c = std::cos(b.azimuth), s = std::sin(b.azimuth);
  const Point3 ax{c, 0, -s}, az{s, 0, c}, ay{0, 1, 0};
  const double hx = 0.5 * b.size.sx, hy = 0.5 * b.size.sy, hz = 0.5 * b.size.sz;
  const Point3 o = b.center;
  return {{o + hx * ax, ax, hz * az, hy * ay},
          {o - hx * ax, -1.0 * ax, hz * az, hy * ay},
          {o + hz * az, az, hx * ax, hy * ay},
          {o - hz * az, -1.0 * az, hx * ax, hy * ay},
          {o - hy * ay, -1.0 * ay, hx * ax, hz * az}};
}

inline bool faces_camera(const Face& f, Point3 cam) { return dot(f.normal, cam - f.center) > 1e-12; }

// Entry parameter of the segment a + t (b - a), t in [0, 1], into the box, or
// +inf when it misses.
inline double segment_entry(const OrientedBox3D& box, Point3 a, Point3 b) {
  const double c = std::cos(box.azimuth), s = std::sin(box.azimuth);
  auto local = [&](Point3 p) {
    const Point3 d = p - box.center;
    return Point3{c * d.x - s * d.z, d.y, s * d.x + c * d.z};
  };
  const Point3 la = local(a), lb = local(b);
  const double o[3] = {la.x, la.y, la.z};
  const double d[3] = {lb.x - la.x, lb.y - la.y, lb.z - la.z};
  const double h[3] = {0.5 * box.size.sx, 0.5 * box.size.sy, 0.5 * box.size.sz};
  double t0 = 0.0, t1 = 1.0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (std::abs(o[k]) > h[k]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double ta = (-h[k] - o[k]) / d[k], tb = (h[k] - o[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0;
}

// True when the line of sight from cam to p passes through any box other than
// `skip` before reaching p.
inline bool occluded(Point3 cam, Point3 p, const std::vector<OrientedBox3D>& boxes, std::size_t skip) {
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (i == skip) continue;
    if (segment_entry(boxes[i], cam, p) < 1.0 - 1e-9) return true;
  }
  return false;
}

inline bool in_view(const CameraCalib& cam, Point3 p) {
  const auto uvw = cam.project(p);
  return uvw[2] > kNearPlane && uvw[0] >= 0.0 && uvw[0] < cam.width && uvw[1] >= 0.0 && uvw[1] < cam.height;
}

inline double truncated_normal(std::mt19937_64& rng, double sigma, double limit) {
  if (sigma <= 0.0) return 0.0;
  std::normal_distribution<double> n(0.0, sigma);
  for (;;) {
    const double v = n(rng);
    if (std::abs(v) <= limit * sigma) return v;
  }
}

// Fraction of a box's camera-facing surface hidden behind other boxes,
// estimated on a fixed 8x8 lattice per face.
inline double occluded_share(const std::vector<OrientedBox3D>& boxes, std::size_t i, Point3 cam) {
  std::size_t total = 0, hidden = 0;
  for (const auto& f : box_faces(boxes[i])) {
    if (!faces_camera(f, cam)) continue;
    for (int a = 0; a < 8; ++a) {
      for (int b = 0; b < 8; ++b) {
        const double ua = (a + 0.5) / 4.0 - 1.0, ub = (b + 0.5) / 4.0 - 1.0;
        const Point3 p = f.center + ua * f.e1 + ub * f.e2;
        ++total;
        if (occluded(cam, p, boxes, i)) ++hidden;
      }
    }
  }
  return total ? static_cast<double>(hidden) / static_cast<double>(total) : 1.0;
}

inline double truncation_of(const OrientedBox3D& b, const CameraCalib& cam) {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& c : corners(b)) {
    const auto uvw = cam.project(c);
    if (uvw[2] <= kNearPlane) return 1.0;
    x0 = std::min(x0, uvw[0]);
    x1 = std::max(x1, uvw[0]);
    y0 = std::min(y0, uvw[1]);
    y1 = std::max(y1, uvw[1]);
  }
  const double full = (x1 - x0) * (y1 - y0);
  const double cw = std::max(0.0, std::min(x1, double(cam.width)) - std::max(x0, 0.0));
  const double ch = std::max(0.0, std::min(y1, double(cam.height)) - std::max(y0, 0.0));
  return full > 0.0 ? std::clamp(1.0 - cw * ch / full, 0.0, 1.0) : 1.0;
}

}  // namespace detail

inline SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SyntheticScene scene;
  scene.plane = spec.plane;
  scene.camera = spec.camera;
  const Point3 cam = spec.camera.camera_center();
  const double tan_half = spec.camera.cx() / spec.camera.fx();

  // objects
  std::vector<OrientedBox3D> boxes;
  std::vector<std::string> types;
  for (const auto& cls : spec.classes) {
    const int count = std::uniform_int_distribution<int>(cls.min_count, cls.max_count)(rng);
    for (int k = 0; k < count; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
        const Size3 sz{cls.size.mean.sx + detail::truncated_normal(rng, cls.size.stddev.sx, 2.0),
                       cls.size.mean.sy + detail::truncated_normal(rng, cls.size.stddev.sy, 2.0),
                       cls.size.mean.sz + detail::truncated_normal(rng, cls.size.stddev.sz, 2.0)};
        const double z = spec.min_distance + unit(rng) * (spec.max_distance - spec.min_distance);
        const double half = std::max(0.0, std::min(z * tan_half - 0.5 * sz.sx, spec.x_extent - sz.sx));
        const double x = (2.0 * unit(rng) - 1.0) * half;
        double yaw = spec.axis_aligned ? (unit(rng) < 0.5 ? 0.0 : 0.5 * std::numbers::pi) : unit(rng) * kTwoPi;
        if (spec.axis_aligned && spec.yaw_jitter > 0.0) yaw += detail::truncated_normal(rng, spec.yaw_jitter, 3.0);
        const double d = std::hypot(x, z);
        if (d < spec.min_distance || d > spec.max_distance) continue;
        const double road = spec.plane.road_y(x, z);
        const OrientedBox3D cand = make_box({x, road - 0.5 * sz.sy, z}, sz, yaw, 0);
        bool clash = false;
        for (const auto& other : boxes) {
          OrientedBox3D a = cand, b = other;
          a.size.sx += spec.min_gap;
          a.size.sz += spec.min_gap;
          if (footprint_intersection(a, b) > 0.0) {
            clash = true;
            break;
          }
        }
        if (clash) continue;
        std::vector<OrientedBox3D> trial = boxes;
        trial.push_back(cand);
        bool hidden = false;
        for (std::size_t i = 0; i < trial.size() && !hidden; ++i) {
          if (detail::occluded_share(trial, i, cam) > spec.max_occlusion) hidden = true;
        }
        if (hidden) continue;
        boxes.push_back(cand);
        types.push_back(cls.type);
        placed = true;
      }
      if (!placed) {
        throw Error("synthetic scene (seed " + std::to_string(spec.seed) + "): could not place object after " +
                    std::to_string(spec.max_attempts) + " attempts");
      }
    }
  }

  const double sigma = spec.noise_sigma;
  auto& pts = scene.cloud.points;

  // road carpet
  {
    const double area = 2.0 * spec.x_extent * (spec.z_far - spec.z_near);
    std::poisson_distribution<long long> count(std::max(spec.ground_density * area, 1e-12));
    const long long n = spec.ground_density > 0 ? count(rng) : 0;
    for (long long i = 0; i < n; ++i) {
      const double x = (2.0 * unit(rng) - 1.0) * spec.x_extent;
      const double z = spec.z_near + unit(rng) * (spec.z_far - spec.z_near);
      const double y = spec.plane.road_y(x, z) + detail::truncated_normal(rng, sigma, 3.0);
      const Point3 p{x, y, z};
      if (!detail::in_view(spec.camera, p)) continue;
      if (detail::occluded(cam, p, boxes, boxes.size())) continue;
      pts.push_back(p);
      ++scene.ground_points;
    }
  }

  // object surfaces, noise applied along the box axes
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const OrientedBox3D& b = boxes[i];
    const double c = std::cos(b.azimuth), s = std::sin(b.azimuth);
    const Point3 ax{c, 0, -s}, az{s, 0, c};
    for (const auto& f : detail::box_faces(b)) {
      if (!detail::faces_camera(f, cam)) continue;
      const double area = 4.0 * norm(f.e1) * norm(f.e2);
      std::poisson_distribution<long long> count(std::max(spec.object_density * area, 1e-12));
      const long long n = spec.object_density > 0 ? count(rng) : 0;
      for (long long k = 0; k < n; ++k) {
        const double ua = 2.0 * unit(rng) - 1.0, ub = 2.0 * unit(rng) - 1.0;
        Point3 p = f.center + ua * f.e1 + ub * f.e2;
        p = p + detail::truncated_normal(rng, sigma, 3.0) * ax +
            Point3{0, detail::truncated_normal(rng, sigma, 3.0), 0} + detail::truncated_normal(rng, sigma, 3.0) * az;
        if (!detail::in_view(spec.camera, p)) continue;
        if (detail::occluded(cam, p, boxes, i)) continue;
        pts.push_back(p);
        ++scene.object_points;
      }
    }
  }

  // clutter: uniform in the viewed slab up to 3 m above the road
  if (spec.clutter_fraction > 0.0) {
    const std::size_t base = pts.size();
    const auto target = static_cast<std::size_t>(
        std::llround(spec.clutter_fraction / (1.0 - spec.clutter_fraction) * static_cast<double>(base)));
    while (scene.clutter_points < target) {
      const double x = (2.0 * unit(rng) - 1.0) * spec.x_extent;
      const double z = spec.z_near + unit(rng) * (spec.z_far - spec.z_near);
      const double y = spec.plane.road_y(x, z) - 3.0 * unit(rng);
      const Point3 p{x, y, z};
      if (!detail::in_view(spec.camera, p)) continue;
      pts.push_back(p);
      ++scene.clutter_points;
    }
  }

  for (std::size_t i = 0; i < boxes.size(); ++i) {
    SyntheticObject o;
    o.type = types[i];
    o.box = boxes[i];
    try {
      o.rect = project_box(o.box, spec.camera);
    } catch (const Error&) {
      o.rect = {};
    }
    o.occluded = detail::occluded_share(boxes, i, cam);
    o.occlusion = o.occluded < 0.1 ? 0 : o.occluded < 0.5 ? 1 : 2;
    o.truncation = detail::truncation_of(o.box, spec.camera);
    scene.objects.push_back(o);
  }
  return scene;
}

// Writes one scene in the KITTI object layout under root: velodyne/, label_2/,
// calib/ and planes/ entries named <id>.
inline void write_kitti_scene(const std::filesystem::path& root, const std::string& id, const SyntheticScene& s) {
  namespace fs = std::filesystem;
  for (const char* d : {"velodyne", "label_2", "calib", "planes"}) fs::create_directories(root / d);
  const KittiCalib calib = make_kitti_calib(s.camera);
  write_velodyne(root / "velodyne" / (id + ".bin"), s.cloud, calib);
  std::vector<KittiLabel> labels;
  for (const auto& o : s.objects) {
    KittiLabel l = label_from_box(o.type, o.box);
    l.bbox = {o.rect.x0, o.rect.y0, o.rect.x1, o.rect.y1};
    l.occlusion = o.occlusion;
    l.truncation = o.truncation;
    labels.push_back(l);
  }
  write_labels(root / "label_2" / (id + ".txt"), labels);
  write_calib(root / "calib" / (id + ".txt"), calib);
  write_plane(root / "planes" / (id + ".txt"), s.plane);
}

}  // namespace voxprop::io
