#pragma once

// Core geometric types. Frame convention everywhere: X right, Y down (along
// gravity), Z forward along the viewing direction. Boxes rotate about Y only.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "voxprop/error.hpp"

namespace voxprop {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Point3 operator+(Point3 a, Point3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Point3 operator-(Point3 a, Point3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Point3 operator*(double s, Point3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Point3&, const Point3&) = default;

  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double dot(Point3 a, Point3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Point3 cross(Point3 a, Point3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Point3 a) { return std::sqrt(dot(a, a)); }

enum class Frame : std::uint8_t { CameraLeftHanded };

struct PointCloud {
  std::vector<Point3> points;
  Frame frame = Frame::CameraLeftHanded;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct Size3 {
  double sx = 0.0;  // length, along the box's local x axis
  double sy = 0.0;  // height, along gravity
  double sz = 0.0;  // width, along the box's local z axis
  friend bool operator==(const Size3&, const Size3&) = default;

  double volume() const { return sx * sy * sz; }
};

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double normalize_azimuth(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

struct OrientedBox3D {
  Point3 center;
  Size3 size;
  double azimuth = 0.0;  // radians about +Y, in [0, 2*pi)
  std::optional<int> class_id;
  std::optional<int> template_id;

  double volume() const { return size.volume(); }
  double ymin() const { return center.y - 0.5 * size.sy; }
  double ymax() const { return center.y + 0.5 * size.sy; }

  bool valid() const {
    return center.finite() && size.sx > 0.0 && size.sy > 0.0 && size.sz > 0.0 &&
           azimuth >= 0.0 && azimuth < kTwoPi;
  }
};

inline OrientedBox3D make_box(Point3 center, Size3 size, double azimuth,
                              std::optional<int> class_id = std::nullopt,
                              std::optional<int> template_id = std::nullopt) {
  require(center.finite(), "box center must be finite");
  require(size.sx > 0.0 && size.sy > 0.0 && size.sz > 0.0, "box sizes must be positive");
  require(std::isfinite(azimuth), "box azimuth must be finite");
  return {center, size, normalize_azimuth(azimuth), class_id, template_id};
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Ground footprint corners in (x, z), counter-clockwise.
inline std::array<Vec2, 4> footprint(const OrientedBox3D& b) {
  const double c = std::cos(b.azimuth), s = std::sin(b.azimuth);
  const double hx = 0.5 * b.size.sx, hz = 0.5 * b.size.sz;
  const std::array<Vec2, 4> local{{{-hx, -hz}, {hx, -hz}, {hx, hz}, {-hx, hz}}};
  std::array<Vec2, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {b.center.x + c * local[i].x + s * local[i].y,
              b.center.z - s * local[i].x + c * local[i].y};
  }
  return out;
}

inline std::array<Point3, 8> corners(const OrientedBox3D& b) {
  const auto fp = footprint(b);
  std::array<Point3, 8> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {fp[i].x, b.ymin(), fp[i].y};
    out[i + 4] = {fp[i].x, b.ymax(), fp[i].y};
  }
  return out;
}

// Returns true when the point lies inside the closed box.
inline bool contains(const OrientedBox3D& b, Point3 p, double inflate = 0.0) {
  if (p.y < b.ymin() - inflate || p.y > b.ymax() + inflate) return false;
  const double c = std::cos(b.azimuth), s = std::sin(b.azimuth);
  const double dx = p.x - b.center.x, dz = p.z - b.center.z;
  // inverse rotation
  const double lx = c * dx - s * dz;
  const double lz = s * dx + c * dz;
  return std::abs(lx) <= 0.5 * b.size.sx + inflate && std::abs(lz) <= 0.5 * b.size.sz + inflate;
}

enum class RectFrame : std::uint8_t { Image, Bev };

struct Rect2D {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  RectFrame frame = RectFrame::Image;

  double width() const { return std::max(0.0, x1 - x0); }
  double height() const { return std::max(0.0, y1 - y0); }
  double area() const { return width() * height(); }
  bool empty() const { return !(x1 > x0 && y1 > y0); }
  friend bool operator==(const Rect2D&, const Rect2D&) = default;
};

inline double iou_2d(const Rect2D& a, const Rect2D& b) {
  if (a.frame != b.frame) throw InvalidArgument("iou_2d: rectangles live in different frames");
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return a == b ? 1.0 : 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

namespace detail {

inline constexpr double kAreaEps = 1e-9;

inline double cross2(Vec2 o, Vec2 a, Vec2 b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline double polygon_area(std::span<const Vec2> poly) {
  double acc = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Vec2 p = poly[i], q = poly[(i + 1) % n];
    acc += p.x * q.y - q.x * p.y;
  }
  return 0.5 * acc;
}

// Sutherland-Hodgman: clip `subject` by every edge of the convex CCW polygon
// `clip`. Fixed-capacity buffers; two quads never produce more than 8 vertices.
inline double convex_intersection_area(const std::array<Vec2, 4>& subject,
                                       const std::array<Vec2, 4>& clip) {
  std::array<Vec2, 16> buf_a{}, buf_b{};
  std::size_t n = 4;
  std::copy(subject.begin(), subject.end(), buf_a.begin());
  Vec2* in = buf_a.data();
  Vec2* out = buf_b.data();
  for (std::size_t e = 0; e < 4 && n > 0; ++e) {
    const Vec2 a = clip[e], b = clip[(e + 1) % 4];
    std::size_t m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 p = in[i], q = in[(i + 1) % n];
      const double dp = cross2(a, b, p), dq = cross2(a, b, q);
      const bool p_in = dp >= 0.0, q_in = dq >= 0.0;
      if (p_in) out[m++] = p;
      if (p_in != q_in) {
        const double t = dp / (dp - dq);
        out[m++] = {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
      }
    }
    n = m;
    std::swap(in, out);
  }
  if (n < 3) return 0.0;
  const double area = polygon_area(std::span<const Vec2>(in, n));
  return area < kAreaEps ? 0.0 : area;
}

}  // namespace detail

// Footprint intersection area in the ground plane.
inline double footprint_intersection(const OrientedBox3D& a, const OrientedBox3D& b) {
  return detail::convex_intersection_area(footprint(a), footprint(b));
}

// Rotated bird's-eye-view IoU of the two footprints.
inline double bev_iou(const OrientedBox3D& a, const OrientedBox3D& b) {
  const double inter = footprint_intersection(a, b);
  const double aa = a.size.sx * a.size.sz, ab = b.size.sx * b.size.sz;
  const double uni = aa + ab - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline double iou_3d(const OrientedBox3D& a, const OrientedBox3D& b) {
  const double h = std::min(a.ymax(), b.ymax()) - std::max(a.ymin(), b.ymin());
  if (h <= 0.0) return 0.0;
  // cheap reject on circumscribed circles
  const double ra = 0.5 * std::hypot(a.size.sx, a.size.sz);
  const double rb = 0.5 * std::hypot(b.size.sx, b.size.sz);
  if (std::hypot(a.center.x - b.center.x, a.center.z - b.center.z) >= ra + rb) return 0.0;
  const double inter = footprint_intersection(a, b) * h;
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

// Minimal axis-aligned (x, z) rectangle containing the rotated footprint.
inline Rect2D bev_footprint(const OrientedBox3D& b) {
  const double c = std::abs(std::cos(b.azimuth)), s = std::abs(std::sin(b.azimuth));
  const double hx = 0.5 * (c * b.size.sx + s * b.size.sz);
  const double hz = 0.5 * (s * b.size.sx + c * b.size.sz);
  return {b.center.x - hx, b.center.z - hz, b.center.x + hx, b.center.z + hz, RectFrame::Bev};
}

struct CameraCalib {
  std::array<double, 12> P{};  // 3x4, row-major
  int width = 0;
  int height = 0;

  double at(int r, int c) const { return P[static_cast<std::size_t>(4 * r + c)]; }
  double fx() const { return at(0, 0); }
  double fy() const { return at(1, 1); }
  double cx() const { return at(0, 2); }
  double cy() const { return at(1, 2); }

  bool valid() const {
    return width > 0 && height > 0 &&
           std::all_of(P.begin(), P.end(), [](double v) { return std::isfinite(v); });
  }

  // Homogeneous projection; returns (u, v) and the projective depth.
  std::array<double, 3> project(Point3 p) const {
    const double u = at(0, 0) * p.x + at(0, 1) * p.y + at(0, 2) * p.z + at(0, 3);
    const double v = at(1, 0) * p.x + at(1, 1) * p.y + at(1, 2) * p.z + at(1, 3);
    const double w = at(2, 0) * p.x + at(2, 1) * p.y + at(2, 2) * p.z + at(2, 3);
    return {u / w, v / w, w};
  }

  // Optical centre: the null vector of P.
  Point3 camera_center() const {
    const double a = at(0, 0), b = at(0, 1), c = at(0, 2);
    const double d = at(1, 0), e = at(1, 1), f = at(1, 2);
    const double g = at(2, 0), h = at(2, 1), i = at(2, 2);
    const double det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
    require(std::abs(det) > 0.0, "projection matrix has singular left block");
    const std::array<double, 9> inv{(e * i - f * h) / det, (c * h - b * i) / det, (b * f - c * e) / det,
                                    (f * g - d * i) / det, (a * i - c * g) / det, (c * d - a * f) / det,
                                    (d * h - e * g) / det, (b * g - a * h) / det, (a * e - b * d) / det};
    const double t0 = at(0, 3), t1 = at(1, 3), t2 = at(2, 3);
    return {-(inv[0] * t0 + inv[1] * t1 + inv[2] * t2), -(inv[3] * t0 + inv[4] * t1 + inv[5] * t2),
            -(inv[6] * t0 + inv[7] * t1 + inv[8] * t2)};
  }

  // Image row of the vanishing point of the viewing direction.
  double horizon_row() const { return at(1, 2) / at(2, 2); }
};

inline CameraCalib make_pinhole(double f, double cx, double cy, int width, int height) {
  CameraCalib c;
  c.P = {f, 0, cx, 0, 0, f, cy, 0, 0, 0, 1, 0};
  c.width = width;
  c.height = height;
  return c;
}

inline constexpr double kNearPlane = 0.1;

// Bounding rectangle of the projected box, clipped to the image. Parts of the
// box behind the near plane are cut away before projecting. The returned
// rectangle may be empty when the box projects entirely outside the image.
inline Rect2D project_box(const OrientedBox3D& b, const CameraCalib& calib) {
  const auto cs = corners(b);
  static constexpr std::array<std::array<int, 2>, 12> kEdges{{{0, 1}, {1, 2}, {2, 3}, {3, 0},
                                                              {4, 5}, {5, 6}, {6, 7}, {7, 4},
                                                              {0, 4}, {1, 5}, {2, 6}, {3, 7}}};
  double u0 = HUGE_VAL, v0 = HUGE_VAL, u1 = -HUGE_VAL, v1 = -HUGE_VAL;
  bool any = false;
  auto add = [&](Point3 p) {
    const auto uvw = calib.project(p);
    u0 = std::min(u0, uvw[0]);
    u1 = std::max(u1, uvw[0]);
    v0 = std::min(v0, uvw[1]);
    v1 = std::max(v1, uvw[1]);
    any = true;
  };
  std::array<double, 8> depth{};
  for (std::size_t i = 0; i < 8; ++i) {
    depth[i] = calib.project(cs[i])[2];
    if (depth[i] >= kNearPlane) add(cs[i]);
  }
  if (!any) throw Error("project_box: box lies entirely behind the camera");
  for (const auto& e : kEdges) {
    const double da = depth[e[0]], db = depth[e[1]];
    if ((da < kNearPlane) != (db < kNearPlane)) {
      const double t = (kNearPlane - da) / (db - da);
      add(cs[e[0]] + t * (cs[e[1]] - cs[e[0]]));
    }
  }
  const double w = calib.width, h = calib.height;
  Rect2D r{std::clamp(u0, 0.0, w), std::clamp(v0, 0.0, h), std::clamp(u1, 0.0, w),
           std::clamp(v1, 0.0, h), RectFrame::Image};
  return r;
}

struct RegressionTarget3D {
  double tx = 0.0, ty = 0.0, tz = 0.0;
  double tsx = 0.0, tsy = 0.0, tsz = 0.0;
};

inline RegressionTarget3D encode_targets(const OrientedBox3D& proposal, const OrientedBox3D& gt) {
  require(proposal.size.sx > 0 && proposal.size.sy > 0 && proposal.size.sz > 0,
          "encode_targets: proposal sizes must be positive");
  require(gt.size.sx > 0 && gt.size.sy > 0 && gt.size.sz > 0,
          "encode_targets: ground-truth sizes must be positive");
  const auto& p = proposal;
  return {(gt.center.x - p.center.x) / p.size.sx, (gt.center.y - p.center.y) / p.size.sy,
          (gt.center.z - p.center.z) / p.size.sz, std::log(gt.size.sx / p.size.sx),
          std::log(gt.size.sy / p.size.sy),        std::log(gt.size.sz / p.size.sz)};
}

inline OrientedBox3D decode_targets(const RegressionTarget3D& t, const OrientedBox3D& proposal) {
  OrientedBox3D g = proposal;
  g.center = {proposal.center.x + t.tx * proposal.size.sx, proposal.center.y + t.ty * proposal.size.sy,
              proposal.center.z + t.tz * proposal.size.sz};
  g.size = {proposal.size.sx * std::exp(t.tsx), proposal.size.sy * std::exp(t.tsy),
            proposal.size.sz * std::exp(t.tsz)};
  return g;
}

// Road plane n.p + d = 0 with n a unit normal pointing up (n.y < 0).
struct GroundPlane {
  Point3 normal{0.0, -1.0, 0.0};
  double offset = 1.65;
  std::size_t inliers = 0;
  double rms = 0.0;

  // Signed distance above the plane measured along gravity.
  double height_above(Point3 p) const { return (dot(normal, p) + offset) / (-normal.y); }

  // Y coordinate of the plane below (x, z).
  double road_y(double x, double z) const {
    return -(normal.x * x + normal.z * z + offset) / normal.y;
  }

  bool valid() const { return std::abs(norm(normal) - 1.0) <= 1e-9 && normal.y < 0.0; }
};

inline GroundPlane make_plane(Point3 normal, double offset) {
  const double n = norm(normal);
  require(n > 0.0 && std::isfinite(n) && std::isfinite(offset), "plane normal must be finite and nonzero");
  Point3 u = (1.0 / n) * normal;
  double d = offset / n;
  if (u.y > 0.0) {
    u = -1.0 * u;
    d = -d;
  }
  require(u.y < 0.0, "plane must not be vertical");
  GroundPlane g;
  g.normal = u;
  g.offset = d;
  return g;
}

}  // namespace voxprop
