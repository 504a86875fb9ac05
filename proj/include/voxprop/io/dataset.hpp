#pragma once

// Scene-level access to a KITTI object layout: velodyne/, label_2/, calib/
// and (optionally) planes/, one entry per scene id.

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "voxprop/error.hpp"
#include "voxprop/evaluation.hpp"
#include "voxprop/io/kitti.hpp"

namespace voxprop::io {

struct KittiScene {
  std::string id;
  PointCloud cloud;
  KittiCalib calib;
  std::vector<KittiLabel> labels;  // DontCare included
  std::optional<GroundPlane> plane;
};

// Sorted ids of every file in root/<sub> with the given extension.
inline std::vector<std::string> list_ids(const std::filesystem::path& dir, const std::string& ext) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline std::vector<std::string> list_scene_ids(const std::filesystem::path& root) {
  return list_ids(root / "label_2", ".txt");
}

inline KittiScene load_scene(const std::filesystem::path& root, const std::string& id, bool with_cloud = true) {
  namespace fs = std::filesystem;
  KittiScene s;
  s.id = id;
  s.calib = read_calib(root / "calib" / (id + ".txt"));
  s.labels = read_labels(root / "label_2" / (id + ".txt"));
  if (with_cloud) s.cloud = read_velodyne(root / "velodyne" / (id + ".bin"), s.calib);
  const fs::path plane = root / "planes" / (id + ".txt");
  if (fs::exists(plane)) s.plane = read_plane(plane);
  return s;
}

// GT boxes of one class (case-insensitive; "all" or empty keeps every
// non-DontCare object).
inline std::vector<OrientedBox3D> class_boxes(const std::vector<KittiLabel>& labels, const std::string& cls) {
  const bool all = cls.empty() || same_type(cls, "all");
  std::vector<OrientedBox3D> out;
  for (const auto& l : object_labels(labels)) {
    if (all || same_type(l.type, cls)) out.push_back(l.box());
  }
  return out;
}

inline SceneGt scene_gt(const std::vector<KittiLabel>& labels) {
  SceneGt g;
  for (const auto& l : object_labels(labels)) {
    g.objects.push_back({l.type, l.box(), l.rect(), l.occlusion, l.truncation});
  }
  return g;
}

}  // namespace voxprop::io
