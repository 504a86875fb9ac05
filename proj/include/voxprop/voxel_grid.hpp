#pragma once

// Dense voxel fields and their 3D integral accumulators.
//
// Cell (ix, iy, iz) covers the half-open box
//   [origin + i*h, origin + (i+1)*h) per axis,
// and is stored at linear index (ix*ny + iy)*nz + iz. A box covers every
// voxel it overlaps with positive volume.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "voxprop/error.hpp"
#include "voxprop/geometry.hpp"
#include "voxprop/io/binary.hpp"

namespace voxprop {

inline constexpr std::size_t kDefaultVoxelCap = std::size_t{1} << 26;

struct GridSpec {
  Point3 origin;
  double voxel_size = 0.2;
  std::array<int, 3> dims{1, 1, 1};
  std::size_t memory_cap = kDefaultVoxelCap;  // max voxels per field

  int nx() const { return dims[0]; }
  int ny() const { return dims[1]; }
  int nz() const { return dims[2]; }
  std::size_t count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * static_cast<std::size_t>(dims[1]) +
            static_cast<std::size_t>(iy)) *
               static_cast<std::size_t>(dims[2]) +
           static_cast<std::size_t>(iz);
  }
  Point3 center(int ix, int iy, int iz) const {
    return {origin.x + (ix + 0.5) * voxel_size, origin.y + (iy + 0.5) * voxel_size,
            origin.z + (iz + 0.5) * voxel_size};
  }
  Point3 max_corner() const {
    return {origin.x + dims[0] * voxel_size, origin.y + dims[1] * voxel_size,
            origin.z + dims[2] * voxel_size};
  }
  bool in_bounds(int ix, int iy, int iz) const {
    return ix >= 0 && iy >= 0 && iz >= 0 && ix < dims[0] && iy < dims[1] && iz < dims[2];
  }

  void validate() const {
    require(origin.finite(), "grid origin must be finite");
    require(voxel_size > 0.0 && std::isfinite(voxel_size), "voxel size must be positive");
    require(dims[0] >= 1 && dims[1] >= 1 && dims[2] >= 1, "grid dimensions must be >= 1");
    if (count() > memory_cap) {
      throw Error("grid of " + std::to_string(count()) + " voxels exceeds the memory cap of " +
                  std::to_string(memory_cap));
    }
  }
};

// Grid covering the axis-aligned region [lo, hi) at the given voxel size.
inline GridSpec make_grid_spec(Point3 lo, Point3 hi, double voxel_size = 0.2) {
  require(voxel_size > 0.0, "voxel size must be positive");
  GridSpec s;
  s.origin = lo;
  s.voxel_size = voxel_size;
  s.dims = {static_cast<int>(std::ceil((hi.x - lo.x) / voxel_size - 1e-9)),
            static_cast<int>(std::ceil((hi.y - lo.y) / voxel_size - 1e-9)),
            static_cast<int>(std::ceil((hi.z - lo.z) / voxel_size - 1e-9))};
  s.validate();
  return s;
}

// Default extent matched to KITTI's annotated range, in camera coordinates.
inline GridSpec kitti_grid_spec(double voxel_size = 0.2) {
  return make_grid_spec({-35.0, -2.5, 0.0}, {35.0, 2.5, 70.0}, voxel_size);
}

enum class FieldKind : std::uint8_t { Occupancy, FreeSpace, HeightPrior };

template <typename T>
struct VoxelGrid {
  GridSpec spec;
  FieldKind kind = FieldKind::Occupancy;
  std::vector<T> values;

  VoxelGrid() = default;
  VoxelGrid(const GridSpec& s, FieldKind k) : spec(s), kind(k) {
    spec.validate();
    values.assign(spec.count(), T{});
  }

  T at(int ix, int iy, int iz) const { return values[spec.index(ix, iy, iz)]; }
  T& at(int ix, int iy, int iz) { return values[spec.index(ix, iy, iz)]; }
};

using BinaryGrid = VoxelGrid<std::uint8_t>;
using RealGrid = VoxelGrid<double>;

struct VoxelizeResult {
  BinaryGrid grid;
  std::size_t outside = 0;  // points that fell outside the grid
};

inline VoxelizeResult voxelize(const PointCloud& cloud, const GridSpec& spec) {
  VoxelizeResult r{BinaryGrid(spec, FieldKind::Occupancy), 0};
  const double inv = 1.0 / spec.voxel_size;
  for (const Point3& p : cloud.points) {
    const double fx = std::floor((p.x - spec.origin.x) * inv);
    const double fy = std::floor((p.y - spec.origin.y) * inv);
    const double fz = std::floor((p.z - spec.origin.z) * inv);
    if (!(fx >= 0 && fy >= 0 && fz >= 0 && fx < spec.nx() && fy < spec.ny() && fz < spec.nz())) {
      ++r.outside;
      continue;
    }
    r.grid.at(static_cast<int>(fx), static_cast<int>(fy), static_cast<int>(fz)) = 1;
  }
  return r;
}

// Marks voxels crossed by camera-to-point rays before the first occupied voxel.
// One ray per occupied voxel, aimed at its centre, walked with a 3D DDA.
inline BinaryGrid carve_free_space(const BinaryGrid& occupancy, Point3 camera_origin) {
  require(occupancy.kind == FieldKind::Occupancy, "carve_free_space expects an occupancy grid");
  const GridSpec& s = occupancy.spec;
  BinaryGrid free(s, FieldKind::FreeSpace);
  const double inv = 1.0 / s.voxel_size;
  const std::array<double, 3> o{(camera_origin.x - s.origin.x) * inv,
                                (camera_origin.y - s.origin.y) * inv,
                                (camera_origin.z - s.origin.z) * inv};
  const std::array<int, 3> n = s.dims;
  const int max_steps = n[0] + n[1] + n[2] + 4;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  for (int tx = 0; tx < n[0]; ++tx) {
    for (int ty = 0; ty < n[1]; ++ty) {
      for (int tz = 0; tz < n[2]; ++tz) {
        if (!occupancy.values[s.index(tx, ty, tz)]) continue;
        const std::array<int, 3> target{tx, ty, tz};
        std::array<double, 3> d{};
        for (int a = 0; a < 3; ++a) d[a] = (target[a] + 0.5) - o[a];

        // clip the segment t in [0, 1] against the grid box [0, n]
        double t0 = 0.0, t1 = 1.0;
        bool hit = true;
        for (int a = 0; a < 3 && hit; ++a) {
          if (d[a] == 0.0) {
            if (o[a] < 0.0 || o[a] >= n[a]) hit = false;
            continue;
          }
          double ta = (0.0 - o[a]) / d[a], tb = (n[a] - o[a]) / d[a];
          if (ta > tb) std::swap(ta, tb);
          t0 = std::max(t0, ta);
          t1 = std::min(t1, tb);
          if (t0 > t1) hit = false;
        }
        if (!hit) continue;

        std::array<int, 3> v{}, step{};
        std::array<double, 3> t_max{}, t_delta{};
        for (int a = 0; a < 3; ++a) {
          const double p = o[a] + t0 * d[a];
          v[a] = std::clamp(static_cast<int>(std::floor(p)), 0, n[a] - 1);
          if (d[a] > 0.0) {
            step[a] = 1;
            t_max[a] = (v[a] + 1 - o[a]) / d[a];
            t_delta[a] = 1.0 / d[a];
          } else if (d[a] < 0.0) {
            step[a] = -1;
            t_max[a] = (v[a] - o[a]) / d[a];
            t_delta[a] = -1.0 / d[a];
          } else {
            step[a] = 0;
            t_max[a] = kInf;
            t_delta[a] = kInf;
          }
        }

        for (int it = 0; it < max_steps; ++it) {
          if (v == target) break;
          const std::size_t idx = s.index(v[0], v[1], v[2]);
          if (occupancy.values[idx]) break;
          free.values[idx] = 1;
          int axis = 0;
          if (t_max[1] < t_max[axis]) axis = 1;
          if (t_max[2] < t_max[axis]) axis = 2;
          if (t_max[axis] > 1.0) break;  // passed the target centre without entering it
          v[axis] += step[axis];
          if (v[axis] < 0 || v[axis] >= n[axis]) break;
          t_max[axis] += t_delta[axis];
        }
      }
    }
  }
  return free;
}

inline RealGrid build_height_prior(const BinaryGrid& occupancy, const GroundPlane& plane, double mu,
                                   double sigma) {
  require(occupancy.kind == FieldKind::Occupancy, "height prior expects an occupancy grid");
  require(sigma > 0.0 && std::isfinite(sigma), "height prior sigma must be positive");
  const GridSpec& s = occupancy.spec;
  RealGrid h(s, FieldKind::HeightPrior);
  for (int ix = 0; ix < s.nx(); ++ix) {
    for (int iy = 0; iy < s.ny(); ++iy) {
      for (int iz = 0; iz < s.nz(); ++iz) {
        const std::size_t idx = s.index(ix, iy, iz);
        if (!occupancy.values[idx]) continue;
        const double z = (plane.height_above(s.center(ix, iy, iz)) - mu) / sigma;
        h.values[idx] = std::exp(-0.5 * z * z);
      }
    }
  }
  return h;
}

// Half-open voxel index range.
struct VoxelRange {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0, z0 = 0, z1 = 0;

  bool empty() const { return x1 <= x0 || y1 <= y0 || z1 <= z0; }
  std::int64_t count() const {
    return empty() ? 0
                   : static_cast<std::int64_t>(x1 - x0) * (y1 - y0) * static_cast<std::int64_t>(z1 - z0);
  }
};

namespace detail {

// Voxel index at coord in voxel units, clamped so the int cast stays in range.
inline double voxel_coord(double coord, double origin, double inv_h, int n) {
  return std::clamp((coord - origin) * inv_h, -1.0, static_cast<double>(n) + 1.0);
}

}  // namespace detail

// Voxels overlapping [lo, hi) with positive volume, clamped to the grid. A
// sliver thinner than 1e-9 voxel is not counted as overlap.
inline VoxelRange voxel_range(const GridSpec& s, Point3 lo, Point3 hi) {
  const double inv = 1.0 / s.voxel_size;
  constexpr double kEps = 1e-9;
  auto first = [&](double c, double o, int n) {
    return std::clamp(static_cast<int>(std::floor(detail::voxel_coord(c, o, inv, n) + kEps)), 0, n);
  };
  auto last = [&](double c, double o, int n) {
    return std::clamp(static_cast<int>(std::ceil(detail::voxel_coord(c, o, inv, n) - kEps)), 0, n);
  };
  return {first(lo.x, s.origin.x, s.nx()), last(hi.x, s.origin.x, s.nx()),
          first(lo.y, s.origin.y, s.ny()), last(hi.y, s.origin.y, s.ny()),
          first(lo.z, s.origin.z, s.nz()), last(hi.z, s.origin.z, s.nz())};
}

inline bool is_grid_aligned(double azimuth) {
  constexpr double kTol = 1e-9;
  const double q = azimuth / (0.5 * std::numbers::pi);
  return std::abs(q - std::round(q)) < kTol;
}

struct BoxRange {
  VoxelRange range;
  bool conservative = false;  // true when a rotated box was replaced by its BEV bound
};

// Voxel range of a box expanded by `margin` metres on every face.
inline BoxRange box_voxel_range(const GridSpec& s, const OrientedBox3D& b, double margin = 0.0) {
  const Rect2D fp = bev_footprint(b);
  const Point3 lo{fp.x0 - margin, b.ymin() - margin, fp.y0 - margin};
  const Point3 hi{fp.x1 + margin, b.ymax() + margin, fp.y1 + margin};
  return {voxel_range(s, lo, hi), !is_grid_aligned(b.azimuth)};
}

template <typename Acc>
struct BoxSum {
  Acc sum{};
  std::int64_t voxel_count = 0;
  bool conservative = false;
};

// Prefix sums with one-cell zero padding: S(i,j,k) = sum over i'<i, j'<j, k'<k.
template <typename Acc>
class IntegralGrid {
 public:
  IntegralGrid() = default;

  template <typename T>
  explicit IntegralGrid(const VoxelGrid<T>& g) : spec_(g.spec), kind_(g.kind) {
    const int nx = spec_.nx(), ny = spec_.ny(), nz = spec_.nz();
    if constexpr (std::is_integral_v<Acc>) {
      require(spec_.count() < static_cast<std::size_t>(std::numeric_limits<Acc>::max()),
              "grid too large for integer accumulator");
    }
    sy_ = static_cast<std::size_t>(nz + 1);
    sx_ = static_cast<std::size_t>(ny + 1) * sy_;
    data_.assign(static_cast<std::size_t>(nx + 1) * sx_, Acc{});
    // Single pass with running row and slice sums: only non-negative terms are
    // ever added, so float fields accumulate without cancellation.
    std::vector<Acc> slice(sx_, Acc{});
    for (int i = 1; i <= nx; ++i) {
      std::fill(slice.begin(), slice.end(), Acc{});
      for (int j = 1; j <= ny; ++j) {
        Acc row{};
        const T* src = &g.values[g.spec.index(i - 1, j - 1, 0)];
        for (int k = 1; k <= nz; ++k) {
          row += static_cast<Acc>(src[k - 1]);
          const std::size_t jk = static_cast<std::size_t>(j) * sy_ + static_cast<std::size_t>(k);
          slice[jk] = slice[jk - sy_] + row;
          data_[static_cast<std::size_t>(i) * sx_ + jk] =
              data_[static_cast<std::size_t>(i - 1) * sx_ + jk] + slice[jk];
        }
      }
    }
  }

  const GridSpec& spec() const { return spec_; }
  FieldKind kind() const { return kind_; }

  Acc prefix(int i, int j, int k) const {
    return data_[static_cast<std::size_t>(i) * sx_ + static_cast<std::size_t>(j) * sy_ +
                 static_cast<std::size_t>(k)];
  }

  Acc sum(const VoxelRange& r) const {
    if (r.empty()) return Acc{};
    const std::size_t x0 = static_cast<std::size_t>(r.x0) * sx_, x1 = static_cast<std::size_t>(r.x1) * sx_;
    const std::size_t y0 = static_cast<std::size_t>(r.y0) * sy_, y1 = static_cast<std::size_t>(r.y1) * sy_;
    const std::size_t z0 = static_cast<std::size_t>(r.z0), z1 = static_cast<std::size_t>(r.z1);
    const Acc* d = data_.data();
    return d[x1 + y1 + z1] - d[x0 + y1 + z1] - d[x1 + y0 + z1] - d[x1 + y1 + z0] + d[x0 + y0 + z1] +
           d[x0 + y1 + z0] + d[x1 + y0 + z0] - d[x0 + y0 + z0];
  }

  BoxSum<Acc> box_sum(const OrientedBox3D& b, double margin = 0.0) const {
    const BoxRange br = box_voxel_range(spec_, b, margin);
    return {sum(br.range), br.range.count(), br.conservative};
  }

  std::size_t memory_bytes() const { return data_.size() * sizeof(Acc); }

 private:
  GridSpec spec_;
  FieldKind kind_ = FieldKind::Occupancy;
  std::size_t sx_ = 0, sy_ = 0;
  std::vector<Acc> data_;
};

using CountIntegral = IntegralGrid<std::int32_t>;
using RealIntegral = IntegralGrid<double>;

inline CountIntegral build_integral(const BinaryGrid& g) { return CountIntegral(g); }
inline RealIntegral build_integral(const RealGrid& g) { return RealIntegral(g); }

template <typename Acc>
BoxSum<Acc> box_sum(const IntegralGrid<Acc>& ig, const OrientedBox3D& b) {
  return ig.box_sum(b);
}

// Debug dump: 32-byte header (magic "VXGD", nx, ny, nz as u32, voxel size and
// origin xyz as f32) followed by float32 values in storage order. Little endian.
inline constexpr char kGridMagic[4] = {'V', 'X', 'G', 'D'};

template <typename T>
void write_grid_dump(const std::string& path, const VoxelGrid<T>& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write(kGridMagic, 4);
  for (int d : g.spec.dims) io::put_u32(os, static_cast<std::uint32_t>(d));
  io::put_f32(os, static_cast<float>(g.spec.voxel_size));
  io::put_f32(os, static_cast<float>(g.spec.origin.x));
  io::put_f32(os, static_cast<float>(g.spec.origin.y));
  io::put_f32(os, static_cast<float>(g.spec.origin.z));
  for (const T& v : g.values) io::put_f32(os, static_cast<float>(v));
  if (!os) throw Error("write failed: " + path);
}

struct GridDump {
  GridSpec spec;
  std::vector<float> values;
};

inline GridDump read_grid_dump(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kGridMagic)) {
    throw Error(path + ": bad grid dump magic at byte 0");
  }
  GridDump d;
  std::uint32_t dims[3];
  float h = 0, ox = 0, oy = 0, oz = 0;
  for (auto& v : dims)
    if (!io::get_u32(is, v)) throw Error(path + ": truncated header");
  if (!io::get_f32(is, h) || !io::get_f32(is, ox) || !io::get_f32(is, oy) || !io::get_f32(is, oz)) {
    throw Error(path + ": truncated header");
  }
  d.spec.dims = {static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])};
  d.spec.voxel_size = h;
  d.spec.origin = {ox, oy, oz};
  d.spec.validate();
  d.values.resize(d.spec.count());
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    if (!io::get_f32(is, d.values[i])) {
      throw Error(path + ": truncated payload at byte " + std::to_string(32 + 4 * i));
    }
  }
  return d;
}

}  // namespace voxprop
