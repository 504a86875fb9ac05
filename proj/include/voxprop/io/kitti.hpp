#pragma once

// KITTI object-benchmark files: velodyne scans, labels, calibration and road
// planes, plus a plain (x, y, z) CSV for point clouds.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "voxprop/error.hpp"
#include "voxprop/geometry.hpp"
#include "voxprop/io/binary.hpp"

namespace voxprop::io {

inline constexpr int kKittiWidth = 1242;
inline constexpr int kKittiHeight = 375;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

// ---------------------------------------------------------------------------
// Calibration

using Mat3 = std::array<double, 9>;   // row-major
using Mat34 = std::array<double, 12>; // row-major

struct KittiCalib {
  std::array<Mat34, 4> P{};
  Mat3 R0_rect{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Mat34 Tr_velo_to_cam{0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0};
  int width = kKittiWidth;
  int height = kKittiHeight;

  CameraCalib camera() const {
    CameraCalib c;
    c.P = P[2];
    c.width = width;
    c.height = height;
    return c;
  }

  // p_cam = R0_rect * (Tr * [p; 1])
  Point3 velo_to_cam(Point3 p) const {
    const auto& T = Tr_velo_to_cam;
    const Point3 q{T[0] * p.x + T[1] * p.y + T[2] * p.z + T[3], T[4] * p.x + T[5] * p.y + T[6] * p.z + T[7],
                   T[8] * p.x + T[9] * p.y + T[10] * p.z + T[11]};
    const auto& R = R0_rect;
    return {R[0] * q.x + R[1] * q.y + R[2] * q.z, R[3] * q.x + R[4] * q.y + R[5] * q.z,
            R[6] * q.x + R[7] * q.y + R[8] * q.z};
  }

  Point3 cam_to_velo(Point3 p) const {
    const Mat3 Ri = invert(R0_rect);
    const Point3 q{Ri[0] * p.x + Ri[1] * p.y + Ri[2] * p.z, Ri[3] * p.x + Ri[4] * p.y + Ri[5] * p.z,
                   Ri[6] * p.x + Ri[7] * p.y + Ri[8] * p.z};
    const auto& T = Tr_velo_to_cam;
    const Mat3 A{T[0], T[1], T[2], T[4], T[5], T[6], T[8], T[9], T[10]};
    const Mat3 Ai = invert(A);
    const Point3 r{q.x - T[3], q.y - T[7], q.z - T[11]};
    return {Ai[0] * r.x + Ai[1] * r.y + Ai[2] * r.z, Ai[3] * r.x + Ai[4] * r.y + Ai[5] * r.z,
            Ai[6] * r.x + Ai[7] * r.y + Ai[8] * r.z};
  }

  static Mat3 invert(const Mat3& m) {
    const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5], g = m[6], h = m[7], i = m[8];
    const double det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
    if (det == 0.0) throw Error("calibration: singular rotation block");
    return {(e * i - f * h) / det, (c * h - b * i) / det, (b * f - c * e) / det,
            (f * g - d * i) / det, (a * i - c * g) / det, (c * d - a * f) / det,
            (d * h - e * g) / det, (b * g - a * h) / det, (a * e - b * d) / det};
  }
};

inline KittiCalib make_kitti_calib(const CameraCalib& cam) {
  KittiCalib k;
  for (auto& p : k.P) p = cam.P;
  k.width = cam.width;
  k.height = cam.height;
  return k;
}

inline KittiCalib parse_calib(const std::string& text, const std::string& where = "calib") {
  KittiCalib k;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool have_p2 = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw Error(where + ":" + std::to_string(lineno) + ": expected 'name: values'");
    }
    const std::string name = line.substr(0, colon);
    std::istringstream vs(line.substr(colon + 1));
    std::vector<double> v;
    std::string tok;
    while (vs >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw Error(where + ":" + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    auto expect = [&](std::size_t n) {
      if (v.size() != n) {
        throw Error(where + ":" + std::to_string(lineno) + ": " + name + " needs " + std::to_string(n) +
                    " values, got " + std::to_string(v.size()));
      }
    };
    if (name.size() == 2 && name[0] == 'P' && name[1] >= '0' && name[1] <= '3') {
      expect(12);
      std::copy(v.begin(), v.end(), k.P[static_cast<std::size_t>(name[1] - '0')].begin());
      if (name[1] == '2') have_p2 = true;
    } else if (name == "R0_rect" || name == "R_rect") {
      expect(9);
      std::copy(v.begin(), v.end(), k.R0_rect.begin());
    } else if (name == "Tr_velo_to_cam" || name == "Tr_velo_cam") {
      expect(12);
      std::copy(v.begin(), v.end(), k.Tr_velo_to_cam.begin());
    }
    // other entries (Tr_imu_to_velo, ...) are ignored
  }
  if (!have_p2) throw Error(where + ": missing P2");
  return k;
}

inline KittiCalib read_calib(const std::filesystem::path& path) { return parse_calib(read_file(path), path.string()); }

inline void write_calib(const std::filesystem::path& path, const KittiCalib& k) {
  auto f = open_out(path);
  f << std::setprecision(12);
  auto row = [&](const std::string& name, const auto& m) {
    f << name << ':';
    for (double v : m) f << ' ' << v;
    f << '\n';
  };
  for (int i = 0; i < 4; ++i) row("P" + std::to_string(i), k.P[static_cast<std::size_t>(i)]);
  row("R0_rect", k.R0_rect);
  row("Tr_velo_to_cam", k.Tr_velo_to_cam);
}

// ---------------------------------------------------------------------------
// Velodyne scans: little-endian float32 (x, y, z, reflectance) records

inline std::vector<std::array<float, 4>> parse_velodyne(const std::string& bytes, const std::string& where = "velodyne") {
  if (bytes.size() % 16 != 0) {
    throw Error(where + ": truncated record at byte offset " + std::to_string(bytes.size() - bytes.size() % 16) +
                " (file size " + std::to_string(bytes.size()) + " is not a multiple of 16)");
  }
  std::vector<std::array<float, 4>> out(bytes.size() / 16);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) out[i][k] = decode_f32(p + 16 * i + 4 * k);
  }
  return out;
}

inline std::vector<std::array<float, 4>> read_velodyne_raw(const std::filesystem::path& path) {
  return parse_velodyne(read_file(path), path.string());
}

// Scan converted to the camera frame; reflectance is dropped.
inline PointCloud read_velodyne(const std::filesystem::path& path, const KittiCalib& calib) {
  const auto raw = read_velodyne_raw(path);
  PointCloud cloud;
  cloud.points.reserve(raw.size());
  for (const auto& r : raw) cloud.points.push_back(calib.velo_to_cam({r[0], r[1], r[2]}));
  return cloud;
}

inline void write_velodyne_raw(const std::filesystem::path& path, const std::vector<std::array<float, 4>>& pts) {
  auto f = open_out(path, true);
  for (const auto& r : pts)
    for (float v : r) put_f32(f, v);
  if (!f) throw Error("write failed: " + path.string());
}

// Camera-frame cloud written as a scan (reflectance 0).
inline void write_velodyne(const std::filesystem::path& path, const PointCloud& cloud, const KittiCalib& calib) {
  std::vector<std::array<float, 4>> raw;
  raw.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const Point3 v = calib.cam_to_velo(p);
    raw.push_back({static_cast<float>(v.x), static_cast<float>(v.y), static_cast<float>(v.z), 0.0f});
  }
  write_velodyne_raw(path, raw);
}

// ---------------------------------------------------------------------------
// Labels

struct KittiLabel {
  std::string type;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  std::array<double, 4> bbox{};  // left, top, right, bottom
  double h = 0.0, w = 0.0, l = 0.0;
  Point3 location;  // bottom centre, camera frame
  double rotation_y = 0.0;
  std::optional<double> score;

  bool dont_care() const { return type == "DontCare"; }

  OrientedBox3D box() const {
    return make_box({location.x, location.y - 0.5 * h, location.z}, {l, h, w}, rotation_y);
  }

  Rect2D rect() const { return {bbox[0], bbox[1], bbox[2], bbox[3], RectFrame::Image}; }
};

inline KittiLabel label_from_box(const std::string& type, const OrientedBox3D& b,
                                 const CameraCalib* calib = nullptr) {
  KittiLabel l;
  l.type = type;
  l.h = b.size.sy;
  l.w = b.size.sz;
  l.l = b.size.sx;
  l.location = {b.center.x, b.ymax(), b.center.z};
  double ry = b.azimuth;
  if (ry > std::numbers::pi) ry -= kTwoPi;
  l.rotation_y = ry;
  double alpha = ry - std::atan2(b.center.x, b.center.z);
  while (alpha > std::numbers::pi) alpha -= kTwoPi;
  while (alpha <= -std::numbers::pi) alpha += kTwoPi;
  l.alpha = alpha;
  if (calib) {
    try {
      const Rect2D r = project_box(b, *calib);
      l.bbox = {r.x0, r.y0, r.x1, r.y1};
    } catch (const Error&) {
      l.bbox = {0, 0, 0, 0};
    }
  }
  return l;
}

inline std::vector<KittiLabel> parse_labels(const std::string& text, const std::string& where = "labels") {
  std::vector<KittiLabel> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    auto fail = [&](const std::string& msg) { return Error(where + ":" + std::to_string(lineno) + ": " + msg); };
    if (tok.size() != 15 && tok.size() != 16) {
      throw fail("expected 15 fields, got " + std::to_string(tok.size()));
    }
    std::vector<double> v(tok.size(), 0.0);
    for (std::size_t i = 1; i < tok.size(); ++i) {
      try {
        std::size_t used = 0;
        v[i] = std::stod(tok[i], &used);
        if (used != tok[i].size()) throw std::invalid_argument(tok[i]);
      } catch (const std::exception&) {
        throw fail("field " + std::to_string(i + 1) + " is not a number: '" + tok[i] + "'");
      }
    }
    KittiLabel l;
    l.type = tok[0];
    l.truncation = v[1];
    l.occlusion = static_cast<int>(v[2]);
    if (static_cast<double>(l.occlusion) != v[2]) throw fail("occlusion must be an integer");
    l.alpha = v[3];
    l.bbox = {v[4], v[5], v[6], v[7]};
    l.h = v[8];
    l.w = v[9];
    l.l = v[10];
    l.location = {v[11], v[12], v[13]};
    l.rotation_y = v[14];
    if (tok.size() == 16) l.score = v[15];
    if (!l.dont_care() && !(l.h > 0 && l.w > 0 && l.l > 0)) throw fail("dimensions must be positive");
    out.push_back(l);
  }
  return out;
}

inline std::vector<KittiLabel> read_labels(const std::filesystem::path& path) {
  return parse_labels(read_file(path), path.string());
}

// GT boxes with DontCare entries dropped.
inline std::vector<KittiLabel> object_labels(const std::vector<KittiLabel>& labels) {
  std::vector<KittiLabel> out;
  for (const auto& l : labels)
    if (!l.dont_care()) out.push_back(l);
  return out;
}

inline std::string format_label(const KittiLabel& l) {
  std::ostringstream f;
  f << std::fixed << std::setprecision(2) << l.type << ' ' << l.truncation << ' ' << l.occlusion << ' '
    << l.alpha << ' ' << l.bbox[0] << ' ' << l.bbox[1] << ' ' << l.bbox[2] << ' ' << l.bbox[3] << ' '
    << std::setprecision(6) << l.h << ' ' << l.w << ' ' << l.l << ' ' << l.location.x << ' ' << l.location.y
    << ' ' << l.location.z << ' ' << l.rotation_y;
  if (l.score) f << ' ' << *l.score;
  return f.str();
}

inline void write_labels(const std::filesystem::path& path, const std::vector<KittiLabel>& labels) {
  auto f = open_out(path);
  for (const auto& l : labels) f << format_label(l) << '\n';
}

// ---------------------------------------------------------------------------
// Road planes: "# Plane / Width 4 / Height 1 / a b c d" with a*x + b*y + c*z + d = 0

inline GroundPlane parse_plane(const std::string& text, const std::string& where = "plane") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    if (line.compare(first, 5, "Width") == 0 || line.compare(first, 6, "Height") == 0) continue;
    std::istringstream ls(line);
    std::array<double, 4> v{};
    for (auto& x : v) {
      if (!(ls >> x)) throw Error(where + ":" + std::to_string(lineno) + ": expected 4 plane coefficients");
    }
    return make_plane({v[0], v[1], v[2]}, v[3]);
  }
  throw Error(where + ": no plane coefficients found");
}

inline GroundPlane read_plane(const std::filesystem::path& path) { return parse_plane(read_file(path), path.string()); }

inline void write_plane(const std::filesystem::path& path, const GroundPlane& p) {
  auto f = open_out(path);
  f << "# Plane\nWidth 4\nHeight 1\n" << std::setprecision(17) << p.normal.x << ' ' << p.normal.y << ' '
    << p.normal.z << ' ' << p.offset << '\n';
}

// ---------------------------------------------------------------------------
// Point cloud CSV

inline PointCloud parse_cloud_csv(const std::string& text, const std::string& where = "cloud") {
  PointCloud c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (lineno == 1 && line.find_first_of("xX") != std::string::npos) continue;  // header
    for (auto& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream ls(line);
    Point3 p;
    if (!(ls >> p.x >> p.y >> p.z)) throw Error(where + ":" + std::to_string(lineno) + ": expected x,y,z");
    c.points.push_back(p);
  }
  return c;
}

inline PointCloud read_cloud_csv(const std::filesystem::path& path) {
  return parse_cloud_csv(read_file(path), path.string());
}

inline void write_cloud_csv(const std::filesystem::path& path, const PointCloud& c) {
  auto f = open_out(path);
  f << "x,y,z\n" << std::setprecision(17);
  for (const auto& p : c.points) f << p.x << ',' << p.y << ',' << p.z << '\n';
}

}  // namespace voxprop::io
