#pragma once

// Plain netpbm images (PGM/PPM, ASCII and binary), depth back-projection and
// the HHA geometric encoding.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "voxprop/error.hpp"
#include "voxprop/geometry.hpp"
#include "voxprop/io/kitti.hpp"

namespace voxprop::io {

template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c = 1, T fill = T{})
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  T& at(int u, int v, int c = 0) { return data[(static_cast<std::size_t>(v) * width + u) * channels + c]; }
  const T& at(int u, int v, int c = 0) const {
    return data[(static_cast<std::size_t>(v) * width + u) * channels + c];
  }
};

using Image8 = Image<std::uint8_t>;
using Image16 = Image<std::uint16_t>;
using ImageF = Image<float>;

namespace detail {

// Reads the next header integer, skipping whitespace and # comments.
inline int netpbm_int(std::istream& in, const std::string& where) {
  int c = in.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      break;
    }
    c = in.peek();
  }
  long v = -1;
  if (!(in >> v) || v < 0 || v > 1 << 24) throw Error(where + ": bad netpbm header");
  return static_cast<int>(v);
}

}  // namespace detail

// Reads P2/P5 (channels = 1) and P3/P6 (channels = 3); 16-bit binary samples
// are big-endian per the netpbm convention.
inline Image16 parse_netpbm(const std::string& bytes, const std::string& where = "image") {
  std::istringstream in(bytes);
  std::string magic;
  in >> magic;
  const bool ascii = magic == "P2" || magic == "P3";
  const bool binary = magic == "P5" || magic == "P6";
  if (!ascii && !binary) throw Error(where + ": unsupported netpbm magic '" + magic + "'");
  const int channels = (magic == "P3" || magic == "P6") ? 3 : 1;
  const int w = detail::netpbm_int(in, where);
  const int h = detail::netpbm_int(in, where);
  const int maxval = detail::netpbm_int(in, where);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw Error(where + ": bad image dimensions or maxval");
  Image16 img(w, h, channels);
  const std::size_t n = img.data.size();
  if (ascii) {
    for (std::size_t i = 0; i < n; ++i) {
      long v = 0;
      if (!(in >> v) || v < 0 || v > maxval) throw Error(where + ": bad or missing sample " + std::to_string(i));
      img.data[i] = static_cast<std::uint16_t>(v);
    }
    return img;
  }
  in.get();  // single whitespace after maxval
  const std::size_t start = static_cast<std::size_t>(in.tellg());
  const std::size_t bps = maxval > 255 ? 2 : 1;
  if (bytes.size() < start + n * bps) {
    throw Error(where + ": truncated pixel data at byte offset " + std::to_string(bytes.size()));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + start;
  for (std::size_t i = 0; i < n; ++i) {
    img.data[i] = bps == 2 ? static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]) : p[i];
  }
  return img;
}

inline Image16 read_netpbm(const std::filesystem::path& path) { return parse_netpbm(read_file(path), path.string()); }

// Binary PGM/PPM; 16-bit when maxval > 255.
inline void write_netpbm(const std::filesystem::path& path, const Image16& img, int maxval = 255) {
  require(img.channels == 1 || img.channels == 3, "write_netpbm: 1 or 3 channels");
  require(maxval > 0 && maxval <= 65535, "write_netpbm: maxval out of range");
  auto f = open_out(path, true);
  f << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << '\n' << maxval << '\n';
  for (std::uint16_t v : img.data) {
    if (v > maxval) throw InvalidArgument("write_netpbm: sample exceeds maxval");
    if (maxval > 255) f.put(static_cast<char>(v >> 8));
    f.put(static_cast<char>(v & 0xff));
  }
}

// ---------------------------------------------------------------------------
// Depth

enum class DepthKind { Depth, Disparity };

struct StereoParams {
  double baseline = 0.54;  // metres
};

inline void check_image_calib(int w, int h, const CameraCalib& calib) {
  if (w != calib.width || h != calib.height) {
    throw Error("image is " + std::to_string(w) + "x" + std::to_string(h) + " but calibration expects " +
                std::to_string(calib.width) + "x" + std::to_string(calib.height));
  }
}

// Camera-frame point seen at pixel (u, v) with camera-frame depth z. Assumes
// a rectified projection (zero entries below the diagonal in the last row).
inline Point3 back_project(const CameraCalib& c, double u, double v, double z) {
  const double w = z + c.at(2, 3);
  const double ru = u * w - c.at(0, 2) * z - c.at(0, 3);
  const double rv = v * w - c.at(1, 2) * z - c.at(1, 3);
  const double a = c.at(0, 0), b = c.at(0, 1), d = c.at(1, 1);
  const double y = rv / d;
  return {(ru - b * y) / a, y, z};
}

inline double pixel_depth(float value, DepthKind kind, const CameraCalib& c, const StereoParams& s) {
  if (!(value > 0.0f) || !std::isfinite(value)) return 0.0;
  return kind == DepthKind::Depth ? value : c.fx() * s.baseline / value;
}

inline PointCloud depth_to_cloud(const ImageF& img, const CameraCalib& calib, DepthKind kind = DepthKind::Depth,
                                 const StereoParams& stereo = {}) {
  require(img.channels == 1, "depth_to_cloud: single-channel image expected");
  require(calib.fx() > 0.0 && calib.fy() > 0.0, "depth_to_cloud: focal length must be positive");
  if (kind == DepthKind::Disparity) require(stereo.baseline > 0.0, "depth_to_cloud: baseline must be positive");
  check_image_calib(img.width, img.height, calib);
  PointCloud cloud;
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      const double z = pixel_depth(img.at(u, v), kind, calib, stereo);
      if (z > 0.0) cloud.points.push_back(back_project(calib, u, v, z));
    }
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// HHA

struct HhaRanges {
  double disparity_max = 64.0;
  double height_min = -1.0, height_max = 4.0;
  double angle_max = std::numbers::pi;
};

// Unscaled channels; valid = 0 marks pixels without depth.
struct HhaRaw {
  ImageF disparity, height, angle;
  Image8 valid;
};

inline HhaRaw compute_hha(const ImageF& depth, const CameraCalib& calib, const GroundPlane& plane,
                          const StereoParams& stereo = {}) {
  require(plane.valid(), "encode_hha: invalid ground plane");
  require(depth.channels == 1, "encode_hha: single-channel depth expected");
  check_image_calib(depth.width, depth.height, calib);
  const int W = depth.width, H = depth.height;
  HhaRaw r{ImageF(W, H), ImageF(W, H), ImageF(W, H), Image8(W, H)};
  std::vector<Point3> pts(static_cast<std::size_t>(W) * H);
  auto ok = [&](int u, int v) { return u >= 0 && v >= 0 && u < W && v < H && r.valid.at(u, v); };
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const double z = pixel_depth(depth.at(u, v), DepthKind::Depth, calib, stereo);
      if (z <= 0.0) continue;
      r.valid.at(u, v) = 1;
      pts[static_cast<std::size_t>(v) * W + u] = back_project(calib, u, v, z);
    }
  }
  const Point3 cam = calib.camera_center();
  const Point3 up = plane.normal;
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      if (!r.valid.at(u, v)) continue;
      const Point3 p = pts[static_cast<std::size_t>(v) * W + u];
      r.disparity.at(u, v) = static_cast<float>(calib.fx() * stereo.baseline / p.z);
      r.height.at(u, v) = static_cast<float>(plane.height_above(p));
      // central differences over the 3x3 neighbourhood, one-sided at gaps
      auto diff = [&](int du, int dv, Point3& out) {
        const bool fwd = ok(u + du, v + dv), back = ok(u - du, v - dv);
        if (!fwd && !back) return false;
        const Point3 a = fwd ? pts[static_cast<std::size_t>(v + dv) * W + u + du] : p;
        const Point3 b = back ? pts[static_cast<std::size_t>(v - dv) * W + u - du] : p;
        out = a - b;
        return true;
      };
      Point3 gu, gv;
      if (!diff(1, 0, gu) || !diff(0, 1, gv)) continue;
      Point3 n = cross(gu, gv);
      const double len = norm(n);
      if (!(len > 0.0)) continue;
      n = (1.0 / len) * n;
      if (dot(n, cam - p) < 0.0) n = -1.0 * n;
      r.angle.at(u, v) = static_cast<float>(std::acos(std::clamp(dot(n, up), -1.0, 1.0)));
    }
  }
  return r;
}

inline std::uint8_t scale_channel(double v, double lo, double hi) {
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * t));
}

inline Image8 encode_hha(const ImageF& depth, const CameraCalib& calib, const GroundPlane& plane,
                         const StereoParams& stereo = {}, const HhaRanges& ranges = {}) {
  const HhaRaw r = compute_hha(depth, calib, plane, stereo);
  Image8 out(depth.width, depth.height, 3, 0);
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      if (!r.valid.at(u, v)) continue;
      out.at(u, v, 0) = scale_channel(r.disparity.at(u, v), 0.0, ranges.disparity_max);
      out.at(u, v, 1) = scale_channel(r.height.at(u, v), ranges.height_min, ranges.height_max);
      out.at(u, v, 2) = scale_channel(r.angle.at(u, v), 0.0, ranges.angle_max);
    }
  }
  return out;
}

}  // namespace voxprop::io
