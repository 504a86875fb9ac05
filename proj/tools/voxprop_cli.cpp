// voxprop command-line frontend: one subcommand per pipeline stage.
//
// Exit status: 0 ok, 1 runtime failure, 2 usage error (bad flag, missing
// input, invalid configuration).

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "voxprop/error.hpp"
#include "voxprop/evaluation.hpp"
#include "voxprop/ground_plane.hpp"
#include "voxprop/io/dataset.hpp"
#include "voxprop/io/image.hpp"
#include "voxprop/io/kitti.hpp"
#include "voxprop/io/models.hpp"
#include "voxprop/io/synthetic.hpp"
#include "voxprop/learning.hpp"
#include "voxprop/sampler.hpp"

namespace fs = std::filesystem;
using namespace voxprop;
using nlohmann::json;

namespace {

constexpr const char* kPublished = " [published]";

struct Timer {
  bool enabled = false;
  std::chrono::steady_clock::time_point t = std::chrono::steady_clock::now();
  std::vector<StageTiming> stages;

  void lap(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    stages.push_back({name, std::chrono::duration<double, std::milli>(now - t).count()});
    t = now;
  }
  void add(const std::vector<StageTiming>& more) { stages.insert(stages.end(), more.begin(), more.end()); }
  void report() const {
    if (!enabled) return;
    for (const auto& s : stages) std::fprintf(stderr, "timing %s %.3f ms\n", s.stage.c_str(), s.ms);
  }
};

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw InvalidArgument(std::string(what) + ": bad number '" + tok + "'");
    }
  }
  if (out.empty()) throw InvalidArgument(std::string(what) + ": empty list");
  return out;
}

Point3 parse_point(const std::string& text, const char* what) {
  const auto v = parse_list(text, what);
  if (v.size() != 3) throw InvalidArgument(std::string(what) + ": expected x,y,z");
  return {v[0], v[1], v[2]};
}

int class_id_for(const std::string& cls) {
  static const std::map<std::string, int> ids{{"car", 0}, {"pedestrian", 1}, {"cyclist", 2}};
  std::string k;
  for (char c : cls) k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const auto it = ids.find(k);
  return it == ids.end() ? kSharedClass : it->second;
}

// FNV-1a over the label files, in id order: a stable fingerprint of the
// training set stored with fitted models.
std::string training_hash(const fs::path& root, const std::vector<std::string>& ids) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& id : ids) {
    mix(id);
    mix(io::read_file(root / "label_2" / (id + ".txt")));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

GroundPlane scene_plane(const io::KittiScene& s, const RansacParams& rp) {
  if (s.plane) return *s.plane;
  return estimate_ground_direct(s.cloud, rp);
}

PointCloud read_cloud(const fs::path& path, const io::KittiCalib* calib) {
  if (path.extension() == ".csv") return io::read_cloud_csv(path);
  if (!calib) throw InvalidArgument("reading a velodyne scan needs --calib");
  return io::read_velodyne(path, *calib);
}

// Grid options shared by the commands that voxelize.
struct GridOpts {
  double voxel = 0.2;
  std::string lo = "-35,-2.5,0";
  std::string hi = "35,2.5,70";

  void add(CLI::App* c) {
    c->add_option("--voxel", voxel, std::string("voxel edge length, metres") + kPublished)->check(CLI::PositiveNumber);
    c->add_option("--grid-min", lo, "grid lower corner x,y,z (camera frame)");
    c->add_option("--grid-max", hi, "grid upper corner x,y,z");
  }
  GridSpec spec() const {
    GridSpec s = make_grid_spec(parse_point(lo, "--grid-min"), parse_point(hi, "--grid-max"), voxel);
    s.validate();
    return s;
  }
};

struct RansacOpts {
  int iterations = 500;
  double threshold = 0.05;
  std::uint64_t seed = 0;
  std::size_t max_eval = 20000;

  void add(CLI::App* c) {
    c->add_option("--ransac-iterations", iterations, "RANSAC hypotheses")->check(CLI::PositiveNumber);
    c->add_option("--ransac-threshold", threshold, "RANSAC inlier distance, metres")->check(CLI::PositiveNumber);
    c->add_option("--ransac-seed", seed, "RANSAC seed");
    c->add_option("--ransac-max-eval", max_eval, "points scored per hypothesis (0: all)");
  }
  RansacParams params() const { return {iterations, threshold, seed, 0.5, max_eval}; }
};

// ---------------------------------------------------------------------------

struct SynthGen {
  std::string out;
  int scenes = 10;
  int first_id = 0;
  std::uint64_t seed = 0;
  std::string cls = "Car";
  int min_objects = 1, max_objects = 5;
  double min_distance = 5, max_distance = 50;
  double noise = 0.02, clutter = 0.0;
  double ground_density = 50, object_density = 200;
  bool rotated = false;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("synth-gen", "generate seeded synthetic scenes in the KITTI layout");
    c->add_option("--out", out, "output dataset root")->required();
    c->add_option("--scenes", scenes, "number of scenes")->check(CLI::NonNegativeNumber);
    c->add_option("--first-id", first_id, "id of the first scene")->check(CLI::NonNegativeNumber);
    c->add_option("--seed", seed, "base seed; scene i uses seed * 1000003 + id");
    c->add_option("--class", cls, "object type written to the labels");
    c->add_option("--min-objects", min_objects, "objects per scene, lower bound")->check(CLI::NonNegativeNumber);
    c->add_option("--max-objects", max_objects, "objects per scene, upper bound")->check(CLI::NonNegativeNumber);
    c->add_option("--min-distance", min_distance, "nearest object ground distance, metres");
    c->add_option("--max-distance", max_distance, "farthest object ground distance, metres");
    c->add_option("--noise", noise, "per-axis point noise sigma, metres")->check(CLI::NonNegativeNumber);
    c->add_option("--clutter", clutter, "share of uniform outlier points");
    c->add_option("--ground-density", ground_density, "road points per m^2");
    c->add_option("--object-density", object_density, "surface points per m^2");
    c->add_flag("--rotated", rotated, "uniform yaw instead of {0, 90} degrees");
    c->callback([this] { run_ = true; });
  }
  bool run_ = false;

  int run(Timer& timer) const {
    if (min_objects > max_objects) throw InvalidArgument("--min-objects exceeds --max-objects");
    for (int i = 0; i < scenes; ++i) {
      const int id = first_id + i;
      io::SyntheticSceneSpec spec;
      spec.seed = seed * 1000003ull + static_cast<std::uint64_t>(id);
      spec.classes = {io::SyntheticClass{cls, min_objects, max_objects, {}}};
      spec.min_distance = min_distance;
      spec.max_distance = max_distance;
      spec.noise_sigma = noise;
      spec.clutter_fraction = clutter;
      spec.ground_density = ground_density;
      spec.object_density = object_density;
      spec.axis_aligned = !rotated;
      char name[16];
      std::snprintf(name, sizeof name, "%06d", id);
      io::write_kitti_scene(out, name, io::generate_synthetic_scene(spec));
    }
    timer.lap("generate");
    std::printf("wrote %d scenes to %s\n", scenes, out.c_str());
    return 0;
  }
};

struct FitTemplates {
  std::string data, out, cls = "Car";
  TemplateParams params;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("fit-templates", "cluster GT box sizes into size templates");
    c->add_option("--data", data, "dataset root (label_2/)")->required()->check(CLI::ExistingDirectory);
    c->add_option("--class", cls, "object class, or 'all' for pooled templates");
    c->add_option("--out", out, "class model JSON to write")->required();
    c->add_option("--bin", params.bin, "size histogram bin width, metres")->check(CLI::PositiveNumber);
    c->add_option("--iou", params.iou_threshold, std::string("centred IoU for cluster membership") + kPublished);
    c->add_option("--min-cluster", params.min_cluster, "stop when fewer sizes remain");
    c->add_option("--max-templates", params.max_templates, std::string("templates per class") + kPublished);
    c->callback([this] { run_ = true; });
  }
  bool run_ = false;

  int run(Timer& timer) const {
    const auto ids = io::list_scene_ids(data);
    std::vector<Size3> sizes;
    for (const auto& id : ids) {
      for (const auto& b : io::class_boxes(io::read_labels(fs::path(data) / "label_2" / (id + ".txt")), cls)) {
        sizes.push_back(b.size);
      }
    }
    timer.lap("load");
    if (sizes.empty()) throw Error("no '" + cls + "' boxes under " + data);
    ClassModel m;
    m.name = cls;
    m.class_id = class_id_for(cls);
    m.templates = fit_templates(sizes, params);
    m.training_set_hash = training_hash(data, ids);
    timer.lap("fit");
    io::write_json(out, io::to_json(m));
    std::printf("%zu templates from %zu boxes\n", m.templates.size(), sizes.size());
    return 0;
  }
};

struct FitStats {
  std::string data, model, out, cls;
  RansacOpts ransac;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("fit-stats", "fit class height statistics and road-height spread");
    c->add_option("--data", data, "dataset root")->required()->check(CLI::ExistingDirectory);
    c->add_option("--model", model, "class model JSON (from fit-templates)")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "class model JSON to write (default: --model)");
    c->add_option("--class", cls, "object class (default: the model's)");
    ransac.add(c);
    c->callback([this] { run_ = true; });
  }
  bool run_ = false;

  int run(Timer& timer) const {
    ClassModel m = io::read_class_model(model);
    const std::string c = cls.empty() ? m.name : cls;
    std::vector<PlacedBox> placed;
    for (const auto& id : io::list_scene_ids(data)) {
      const bool need_cloud = !fs::exists(fs::path(data) / "planes" / (id + ".txt"));
      const auto s = io::load_scene(data, id, need_cloud);
      const auto boxes = io::class_boxes(s.labels, c);
      if (boxes.empty()) continue;
      const GroundPlane plane = scene_plane(s, ransac.params());
      for (const auto& b : boxes) placed.push_back({b, plane});
    }
    timer.lap("load");
    const auto h = fit_height_stats(std::span<const PlacedBox>(placed));
    m.mu_ht = h.mean;
    m.sigma_ht = h.sigma;
    m.sigma_road = fit_road_sigma(std::span<const PlacedBox>(placed));
    m.validate();
    timer.lap("fit");
    io::write_json(out.empty() ? model : out, io::to_json(m));
    std::printf("mu_ht %.6f sigma_ht %.6f sigma_road %.6f from %zu boxes\n", m.mu_ht, m.sigma_ht, m.sigma_road,
                placed.size());
    return 0;
  }
};

// Superpixel features for one scene: labels from a label-map image when
// given, else the regular image grid; colours from an RGB image when given.
std::vector<SuperpixelFeature> scene_features(const PointCloud& cloud, const CameraCalib& cam,
                                              const std::string& image, const std::string& superpixels,
                                              int cell, std::vector<int>& labels) {
  std::vector<Rgb> colors(cloud.size(), Rgb{0, 0, 0});
  std::vector<std::array<int, 2>> px(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto uv = cam.project(cloud.points[i]);
    px[i] = {std::clamp(static_cast<int>(std::floor(uv[0])), 0, cam.width - 1),
             std::clamp(static_cast<int>(std::floor(uv[1])), 0, cam.height - 1)};
  }
  if (!image.empty()) {
    const auto img = io::read_netpbm(image);
    io::check_image_calib(img.width, img.height, cam);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (int c = 0; c < 3; ++c) colors[i][c] = img.at(px[i][0], px[i][1], img.channels == 3 ? c : 0);
    }
  }
  if (!superpixels.empty()) {
    const auto map = io::read_netpbm(superpixels);
    io::check_image_calib(map.width, map.height, cam);
    labels.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) labels[i] = map.at(px[i][0], px[i][1]);
  } else {
    labels = grid_superpixel_labels(cloud, cam, cell);
  }
  return extract_superpixel_features(cloud, colors, labels, cam, cam.horizon_row());
}

struct TrainGround {
  std::string data, out;
  int epochs = 500;
  double lr = 0.5;
  std::uint64_t seed = 0;
  int cell = 16;
  double band = 0.1;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train-ground", "train the superpixel ground classifier");
    c->add_option("--data", data, "dataset root with planes/ (ground truth for labels)")
        ->required()
        ->check(CLI::ExistingDirectory);
    c->add_option("--out", out, "classifier JSON to write")->required();
    c->add_option("--epochs", epochs, "full-batch gradient steps")->check(CLI::NonNegativeNumber);
    c->add_option("--lr", lr, "learning rate")->check(CLI::PositiveNumber);
    c->add_option("--seed", seed, "weight initialisation seed");
    c->add_option("--cell", cell, "grid superpixel size, pixels")->check(CLI::PositiveNumber);
    c->add_option("--band", band, "a superpixel is ground when its points sit within this height of the plane");
    c->callback([this] { run_ = true; });
  }
  bool run_ = false;

  int run(Timer& timer) const {
    std::vector<SuperpixelFeature> xs;
    std::vector<int> ys;
    for (const auto& id : io::list_scene_ids(data)) {
      const auto s = io::load_scene(data, id);
      if (!s.plane) throw Error("scene " + id + " has no planes/ entry");
      const CameraCalib cam = s.calib.camera();
      std::vector<int> labels;
      const auto feats = scene_features(s.cloud, cam, "", "", cell, labels);
      std::map<int, std::pair<std::size_t, std::size_t>> near;  // id -> (near plane, total)
      for (std::size_t i = 0; i < s.cloud.size(); ++i) {
        auto& n = near[labels[i]];
        n.first += std::abs(s.plane->height_above(s.cloud.points[i])) <= band;
        ++n.second;
      }
      for (const auto& f : feats) {
        const auto& n = near[f.id];
        xs.push_back(f);
        ys.push_back(2 * n.first > n.second ? 1 : 0);
      }
    }
    timer.lap("features");
    const auto t = train_ground_classifier(xs, ys, epochs, lr, seed);
    timer.lap("train");
    io::write_json(out, io::to_json(t.classifier));
    std::size_t ok = 0;
    const auto p = classify_ground(t.classifier, xs);
    for (std::size_t i = 0; i < p.size(); ++i) ok += (p[i] > 0.5) == (ys[i] != 0);
    std::printf("%zu superpixels, final loss %.6f, training accuracy %.4f\n", xs.size(), t.classifier.final_loss,
                static_cast<double>(ok) / static_cast<double>(xs.size()));
    return 0;
  }
};

struct EstimateGround {
  std::string input, calib, classifier, image, superpixels, out;
  int cell = 16;
  RansacOpts ransac;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("estimate-ground", "estimate the road plane of one scene");
    c->add_option("--input", input, "velodyne .bin or camera-frame .csv cloud")->required()->check(CLI::ExistingFile);
    c->add_option("--calib", calib, "KITTI calibration file")->check(CLI::ExistingFile);
    c->add_option("--classifier", classifier, "ground classifier JSON; omitted: height-band RANSAC")
        ->check(CLI::ExistingFile);
    c->add_option("--image", image, "RGB image (PPM) for superpixel colours")->check(CLI::ExistingFile);
    c->add_option("--superpixels", superpixels, "superpixel label map (PGM); omitted: regular grid")
        ->check(CLI::ExistingFile);
    c->add_option("--cell", cell, "grid superpixel size, pixels")->check(CLI::PositiveNumber);
    c->add_option("--out", out, "plane file to write (KITTI planes format)")->required();
    ransac.add(c);
    c->callback([this] { run_ = true; });
  }
  bool run_ = false;

  int run(Timer& timer) const {
    std::optional<io::KittiCalib> k;
    if (!calib.empty()) k = io::read_calib(calib);
    const PointCloud cloud = read_cloud(input, k ? &*k : nullptr);
    timer.lap("load");
    GroundPlane plane;
    if (classifier.empty()) {
      plane = estimate_ground_direct(cloud, ransac.params());
    } else {
      if (!k) throw InvalidArgument("--classifier needs --calib");
      const auto clf = io::classifier_from_json(io::read_json(classifier));
      std::vector<int> labels;
      const auto feats = scene_features(cloud, k->camera(), image, superpixels, cell, labels);
      plane = estimate_ground_classified(cloud, feats, labels, clf, ransac.params());
    }
    timer.lap("estimate");
    io::write_plane(out, plane);
    std::printf("normal %.6f %.6f %.6f offset %.6f inliers %zu\n", plane.normal.x, plane.normal.y, plane.normal.z,
                plane.offset, plane.inliers);
    return 0;
  }
};

struct TrainWeights {
  std::string data, model, out, log, cls;
  SsvmConfig ssvm;
  TrainingSceneOptions scene_opts;
  GridOpts grid;
  RansacOpts ransac;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train-weights", "learn energy weights with the n-slack structured SVM");
    c->add_option("--data", data, "dataset root")->required()->check(CLI::ExistingDirectory);
    c->add_option("--model", model, "class model JSON with templates and statistics")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--out", out, "class model JSON to write (default: --model)");
    c->add_option("--class", cls, "object class (default: the model's)");
    c->add_option("--log", log, "CSV of per-round objective and violation");
    c->add_option("--c", ssvm.c, "regularisation constant C")->check(CLI::PositiveNumber);
    c->add_option("--tolerance", ssvm.tolerance, "stop when no constraint is violated by more")
        ->check(CLI::PositiveNumber);
    c->add_option("--max-rounds", ssvm.max_rounds, "cutting-plane rounds")->check(CLI::PositiveNumber);
    c->add_option("--max-negatives", scene_opts.max_negatives, "random background candidates per scene");
    c->add_option("--hard-negatives", scene_opts.hard_negatives, "densest background candidates per scene");
    c->add_option("--stride", scene_opts.sampling.stride, "candidate lattice spacing, metres")
        ->check(CLI::PositiveNumber);
    c->add_option("--far-threshold", scene_opts.sampling.far_threshold,
                  std::string("depth beyond which +-sigma_road planes are added, metres") + kPublished);
    c->add_option("--margin", scene_opts.margin, std::string("height-contrast box extension, metres") + kPublished);
    c->add_option("--seed", scene_opts.seed, "negative subsampling seed");
    grid.add(c);
    ransac.add(c);
    c->callback([this] { run_ = true; });
  }
  bool run_ = false;

  int run(Timer& timer) const {
    ClassModel m = io::read_class_model(model);
    const std::string c = cls.empty() ? m.name : cls;
    const GridSpec spec = grid.spec();
    std::vector<TrainingScene> scenes;
    const auto ids = io::list_scene_ids(data);
    for (const auto& id : ids) {
      const auto s = io::load_scene(data, id);
      auto boxes = io::class_boxes(s.labels, c);
      if (boxes.empty()) continue;
      const CameraCalib cam = s.calib.camera();
      TrainingSceneOptions opt = scene_opts;
      opt.seed = scene_opts.seed + scenes.size();
      scenes.push_back(make_training_scene(id, s.cloud, &cam, scene_plane(s, ransac.params()), std::move(boxes), m,
                                           spec, opt));
    }
    timer.lap("scenes");
    if (scenes.empty()) throw Error("no '" + c + "' objects under " + data);
    const SsvmResult r = train_ssvm(scenes, ssvm);
    timer.lap("ssvm");
    m.weights = r.weights;
    m.training_set_hash = training_hash(data, ids);
    io::write_json(out.empty() ? model : out, io::to_json(m));
    if (!log.empty()) {
      std::ofstream f(log);
      if (!f) throw Error("cannot write " + log);
      f << "round,objective,max_violation,working_set\n" << std::setprecision(17);
      for (const auto& e : r.log) f << e.round << ',' << e.objective << ',' << e.max_violation << ',' << e.working_set << '\n';
    }
    std::printf("weights %.6g %.6g %.6g %.6g after %d rounds (%s)\n", r.weights[0], r.weights[1], r.weights[2], r.weights[3], r.rounds,
                r.converged ? "converged" : "not converged");
    return r.converged ? 0 : 1;
  }
};

struct Propose {
  std::string input, calib, model, out, plane, data, out_dir;
  std::string ground = "ransac", nms = "image", format = "csv";
  ProposeConfig cfg;
  GridOpts grid;
  RansacOpts ransac;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("propose", "generate ranked 3D proposals for one scene or a dataset");
    c->add_option("--input", input, "velodyne .bin or camera-frame .csv cloud")->check(CLI::ExistingFile);
    c->add_option("--calib", calib, "KITTI calibration file")->check(CLI::ExistingFile);
    c->add_option("--model", model, "trained class model JSON")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "proposal file to write (single scene)");
    c->add_option("--data", data, "dataset root: propose for every scene")->check(CLI::ExistingDirectory);
    c->add_option("--out-dir", out_dir, "directory for per-scene proposal files (with --data)");
    c->add_option("--plane", plane, "road plane file; implies --ground provided")->check(CLI::ExistingFile);
    c->add_option("--ground", ground, "ground plane source")->check(CLI::IsMember({"ransac", "provided", "default", "dataset"}));
    c->add_option("--k", cfg.k, "proposals kept after NMS")->check(CLI::PositiveNumber);
    c->add_option("--delta", cfg.delta, std::string("NMS IoU threshold") + kPublished);
    c->add_option("--nms", nms, "NMS overlap space")->check(CLI::IsMember({"image", "bev"}));
    c->add_option("--stride", cfg.sampling.stride, "candidate lattice spacing, metres")->check(CLI::PositiveNumber);
    c->add_option("--far-threshold", cfg.sampling.far_threshold,
                  std::string("depth beyond which +-sigma_road planes are added, metres") + kPublished);
    c->add_option("--margin", cfg.margin, std::string("height-contrast box extension, metres") + kPublished);
    c->add_option("--threads", cfg.threads, "scoring threads")->check(CLI::PositiveNumber);
    c->add_option("--format", format, "output format")->check(CLI::IsMember({"csv", "kitti"}));
    grid.add(c);
    ransac.add(c);
    c->callback([this] { run_ = true; });
  }
  bool run_ = false;

  ProposeResult one(const PointCloud& cloud, const CameraCalib* cam, const ClassModel& m, ProposeConfig c,
                    const std::optional<GroundPlane>& given) const {
    if (given) {
      c.ground_mode = GroundMode::Provided;
      c.plane = given;
    }
    return propose(cloud, cam, m, c);
  }

  void write(const fs::path& path, const ProposeResult& r, const ClassModel& m, const CameraCalib* cam) const {
    if (format == "kitti") {
      if (!cam) throw InvalidArgument("--format kitti needs calibration");
      io::write_proposals_kitti(path, r.proposals, m.name, *cam);
    } else {
      io::write_proposals_csv(path, r.proposals, m.name);
    }
  }

  int run(Timer& timer) const {
    ProposeConfig c = cfg;
    c.grid = grid.spec();
    c.nms_mode = nms == "bev" ? NmsMode::Bev2D : NmsMode::Image2D;
    c.ground_mode = ground == "provided" ? GroundMode::Provided
                    : ground == "default" ? GroundMode::Default
                                          : GroundMode::Ransac;
    c.ransac = ransac.params();
    const ClassModel m = io::read_class_model(model);
    timer.lap("load_model");
    const char* ext = format == "kitti" ? ".txt" : ".csv";
    if (!data.empty()) {
      if (!input.empty()) throw InvalidArgument("use either --input or --data");
      if (out_dir.empty()) throw InvalidArgument("--data needs --out-dir");
      fs::create_directories(out_dir);
      std::size_t n = 0;
      for (const auto& id : io::list_scene_ids(data)) {
        const auto s = io::load_scene(data, id);
        const CameraCalib cam = s.calib.camera();
        std::optional<GroundPlane> given;
        if (ground == "dataset" || ground == "provided") {
          if (!s.plane) throw Error("scene " + id + " has no planes/ entry");
          given = s.plane;
        }
        const auto r = one(s.cloud, &cam, m, c, given);
        for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s: %s\n", id.c_str(), w.c_str());
        write(fs::path(out_dir) / (id + ext), r, m, &cam);
        ++n;
      }
      timer.lap("propose");
      std::printf("proposals for %zu scenes in %s\n", n, out_dir.c_str());
      return 0;
    }
    if (input.empty() || out.empty()) throw InvalidArgument("propose needs --input and --out (or --data)");
    std::optional<io::KittiCalib> k;
    if (!calib.empty()) k = io::read_calib(calib);
    const PointCloud cloud = read_cloud(input, k ? &*k : nullptr);
    std::optional<CameraCalib> cam;
    if (k) cam = k->camera();
    std::optional<GroundPlane> given;
    if (!plane.empty()) {
      given = io::read_plane(plane);
    } else if (ground == "provided" || ground == "dataset") {
      throw InvalidArgument("--ground " + ground + " needs --plane for a single scene");
    }
    timer.lap("load_scene");
    const auto r = one(cloud, cam ? &*cam : nullptr, m, c, given);
    timer.add(r.timings);
    timer.t = std::chrono::steady_clock::now();
    for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    write(out, r, m, cam ? &*cam : nullptr);
    timer.lap("write");
    std::printf("%zu proposals from %zu candidates\n", r.proposals.size(), r.candidates_scored);
    return 0;
  }
};

struct EvalRecall {
  std::string props, gt, calib, cls = "Car", space = "3d", difficulty = "moderate", out, out_dir = ".";
  std::string budgets = "1,10,50,100,200,500,1000,2000";
  std::string ious;
  double iou = 0.7;
  std::size_t budget = 2000;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval-recall", "oracle recall of ranked proposals against GT");
    c->add_option("--props", props, "directory of per-scene proposal CSVs")->required()->check(CLI::ExistingDirectory);
    c->add_option("--gt", gt, "directory of KITTI label files")->required()->check(CLI::ExistingDirectory);
    c->add_option("--calib", calib, "calibration directory for 2D IoU (default: <gt>/../calib)");
    c->add_option("--class", cls, "object class, or 'all'");
    c->add_option("--space", space, "IoU space")->check(CLI::IsMember({"2d", "bev", "3d"}));
    c->add_option("--difficulty", difficulty, "GT filter")->check(CLI::IsMember({"easy", "moderate", "hard", "none"}));
    c->add_option("--iou", iou, "IoU threshold for the recall-vs-budget curve");
    c->add_option("--budgets", budgets, "comma-separated proposal budgets");
    c->add_option("--ious", ious, "comma-separated thresholds: write recall vs IoU at --budget instead");
    c->add_option("--budget", budget, "budget for the recall-vs-IoU curve")->check(CLI::PositiveNumber);
    c->add_option("--out", out, "curve CSV path (default: <out-dir>/<standard name>)");
    c->add_option("--out-dir", out_dir, "directory for the curve CSV");
    c->callback([this] { run_ = true; });
  }
  bool run_ = false;

  int run(Timer& timer) const {
    const IouSpace sp = space == "2d" ? IouSpace::Image2D : space == "bev" ? IouSpace::Bev : IouSpace::ThreeD;
    EvalQuery q;
    q.cls = same_type(cls, "all") ? "" : cls;
    q.space = sp;
    Difficulty diff = Difficulty::Moderate;
    if (difficulty == "none") {
      q.filter = DifficultyFilter::none();
    } else {
      diff = difficulty == "easy" ? Difficulty::Easy : difficulty == "hard" ? Difficulty::Hard : Difficulty::Moderate;
      q.filter = DifficultyFilter::preset(diff);
    }
    const fs::path calib_dir = calib.empty() ? fs::path(gt).parent_path() / "calib" : fs::path(calib);
    std::vector<RankedProposals> ranked;
    std::vector<SceneGt> truth;
    for (const auto& id : io::list_ids(gt, ".txt")) {
      const fs::path pf = fs::path(props) / (id + ".csv");
      if (!fs::exists(pf)) throw Error("no proposals for scene " + id + " (" + pf.string() + ")");
      RankedProposals rp;
      for (const auto& row : io::read_proposals_csv(pf)) rp.boxes.push_back(row.box);
      if (sp == IouSpace::Image2D) {
        const fs::path cf = calib_dir / (id + ".txt");
        if (!fs::exists(cf)) throw InvalidArgument("2D recall needs calibration: missing " + cf.string());
        const CameraCalib cam = io::read_calib(cf).camera();
        for (const auto& b : rp.boxes) {
          try {
            rp.rects.push_back(project_box(b, cam));
          } catch (const Error&) {
            rp.rects.push_back({});
          }
        }
      }
      ranked.push_back(std::move(rp));
      truth.push_back(io::scene_gt(io::read_labels(fs::path(gt) / (id + ".txt"))));
    }
    timer.lap("load");
    RecallCurve curve;
    if (!ious.empty()) {
      const auto t = parse_list(ious, "--ious");
      curve = recall_vs_iou(ranked, truth, budget, t, q);
    } else {
      std::vector<std::size_t> b;
      for (double v : parse_list(budgets, "--budgets")) {
        if (v < 1 || v != std::floor(v)) throw InvalidArgument("--budgets: positive integers expected");
        b.push_back(static_cast<std::size_t>(v));
      }
      curve = recall_vs_budget(ranked, truth, iou, b, q);
    }
    curve.cls = q.cls;
    curve.difficulty = diff;
    timer.lap("evaluate");
    std::string name = curve_file_name(curve);
    if (difficulty == "none") name.replace(name.find(to_string(diff)), std::strlen(to_string(diff)), "none");
    const fs::path path = out.empty() ? fs::path(out_dir) / name : fs::path(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_curve_csv(path, curve);
    write_curve_csv(std::cout, curve);

    // Summary next to the curve: AR over the standard threshold range at
    // --budget, and recall at the usual budgets.
    auto num = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
    json summary;
    summary["ar"] = num(average_recall(ranked, truth, budget, q));
    summary["ar_budget"] = budget;
    summary["iou"] = iou;
    for (std::size_t b : {100, 500, 1000, 2000}) {
      summary["recall_at"][std::to_string(b)] = num(oracle_recall(ranked, truth, iou, b, q));
    }
    fs::path sp_path = path;
    io::write_json(sp_path.replace_extension(".json"), summary);
    return 0;
  }
};

// Config support: a JSON object whose keys are flag names (without dashes),
// either flat or nested under the subcommand name. Values are spliced in
// ahead of the command-line flags, so explicit flags win.
std::vector<std::string> config_tokens(const json& cfg, const std::string& sub) {
  const json& j = cfg.contains(sub) && cfg[sub].is_object() ? cfg[sub] : cfg;
  std::vector<std::string> out;
  for (const auto& [key, v] : j.items()) {
    if (v.is_object()) continue;  // another subcommand's section
    const std::string flag = "--" + key;
    if (v.is_boolean()) {
      if (v.get<bool>()) out.push_back(flag);
    } else if (v.is_string()) {
      out.push_back(flag);
      out.push_back(v.get<std::string>());
    } else if (v.is_array()) {
      std::string s;
      for (const auto& e : v) s += (s.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
      out.push_back(flag);
      out.push_back(s);
    } else {
      out.push_back(flag);
      out.push_back(v.dump());
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxprop: 3D object proposals from point-cloud energy minimisation"};
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.footer("[published] marks defaults taken from the published method; the rest are implementation choices.");
  app.set_version_flag("--version", "voxprop 1.0");
  std::string config;
  bool timing = false;
  app.add_option("--config", config, "JSON config; flags given on the command line override it")
      ->check(CLI::ExistingFile);
  app.add_flag("--timing", timing, "print per-stage milliseconds to stderr");
  app.fallthrough();

  SynthGen synth;
  FitTemplates templates;
  FitStats stats;
  TrainGround train_ground;
  TrainWeights train_weights;
  EstimateGround estimate;
  Propose prop;
  EvalRecall eval;
  synth.add(app);
  templates.add(app);
  stats.add(app);
  train_ground.add(app);
  train_weights.add(app);
  estimate.add(app);
  prop.add(app);
  eval.add(app);

  std::vector<std::string> args(argv + 1, argv + argc);
  // Locate --config before the real parse so its values can be spliced in.
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      continue;
    }
    std::size_t sub = args.size();
    for (std::size_t k = 0; k < args.size(); ++k) {
      if (app.get_subcommand_no_throw(args[k]) != nullptr) {
        sub = k;
        break;
      }
    }
    try {
      const json cfg = io::read_json(path);
      if (!cfg.is_object()) throw Error(path + ": config must be a JSON object");
      if (sub < args.size()) {
        const auto tok = config_tokens(cfg, args[sub]);
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub) + 1, tok.begin(), tok.end());
      }
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 2;
    }
    break;
  }
  std::reverse(args.begin(), args.end());

  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Timer timer;
  timer.enabled = timing;
  try {
    int rc = 0;
    if (synth.run_) rc = synth.run(timer);
    else if (templates.run_) rc = templates.run(timer);
    else if (stats.run_) rc = stats.run(timer);
    else if (train_ground.run_) rc = train_ground.run(timer);
    else if (train_weights.run_) rc = train_weights.run(timer);
    else if (estimate.run_) rc = estimate.run(timer);
    else if (prop.run_) rc = prop.run(timer);
    else if (eval.run_) rc = eval.run(timer);
    timer.report();
    return rc;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
