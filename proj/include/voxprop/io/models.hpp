#pragma once

// JSON persistence for class models, the ground classifier and proposal /
// training-scene artifacts.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "json.hpp"

#include "voxprop/energy.hpp"
#include "voxprop/error.hpp"
#include "voxprop/ground_plane.hpp"
#include "voxprop/io/kitti.hpp"
#include "voxprop/sampler.hpp"

namespace voxprop::io {

using nlohmann::json;

inline json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  auto f = open_out(path);
  f << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// ClassModel

inline json to_json(const ClassModel& m) {
  json t = json::array();
  for (const auto& s : m.templates) t.push_back({s.sx, s.sy, s.sz});
  json prov = {{"training_set_hash", m.training_set_hash}};
  if (!m.date.empty()) prov["date"] = m.date;
  return {{"class", m.name},
          {"class_id", m.class_id},
          {"weights", {{"pcd", m.weights[0]}, {"fs", m.weights[1]}, {"ht", m.weights[2]}, {"ht_contr", m.weights[3]}}},
          {"templates", t},
          {"mu_ht", m.mu_ht},
          {"sigma_ht", m.sigma_ht},
          {"sigma_road", m.sigma_road},
          {"provenance", prov}};
}

inline ClassModel class_model_from_json(const json& j) {
  try {
    ClassModel m;
    m.name = j.at("class").get<std::string>();
    m.class_id = j.value("class_id", kSharedClass);
    const auto& w = j.at("weights");
    m.weights = {w.at("pcd").get<double>(), w.at("fs").get<double>(), w.at("ht").get<double>(),
                 w.at("ht_contr").get<double>()};
    for (const auto& t : j.at("templates")) {
      if (!t.is_array() || t.size() != 3) throw Error("class model: templates must be [sx, sy, sz] triples");
      m.templates.push_back({t[0].get<double>(), t[1].get<double>(), t[2].get<double>()});
    }
    m.mu_ht = j.at("mu_ht").get<double>();
    m.sigma_ht = j.at("sigma_ht").get<double>();
    m.sigma_road = j.at("sigma_road").get<double>();
    if (j.contains("provenance")) {
      m.training_set_hash = j["provenance"].value("training_set_hash", "");
      m.date = j["provenance"].value("date", "");
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw Error(std::string("class model: ") + e.what());
  }
}

inline ClassModel read_class_model(const std::filesystem::path& path) {
  try {
    return class_model_from_json(read_json(path));
  } catch (const InvalidArgument& e) {
    throw Error(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// GroundClassifier

template <typename A>
json array_json(const A& a) {
  return json(std::vector<double>(a.begin(), a.end()));
}

template <typename A>
void array_from_json(const json& j, A& a, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != a.size()) {
    throw Error(std::string("classifier: ") + what + " has " + std::to_string(v.size()) + " values, expected " +
                std::to_string(a.size()));
  }
  std::copy(v.begin(), v.end(), a.begin());
}

inline json to_json(const GroundClassifier& c) {
  return {{"layers",
           {{{"shape", {GroundClassifier::kHidden, GroundClassifier::kIn}}, {"weights", array_json(c.w1)},
             {"bias", array_json(c.b1)}, {"activation", "tanh"}},
            {{"shape", {1, GroundClassifier::kHidden}}, {"weights", array_json(c.w2)},
             {"bias", {c.b2}}, {"activation", "sigmoid"}}}},
          {"input_mean", array_json(c.input_mean)},
          {"input_scale", array_json(c.input_scale)},
          {"seed", c.seed},
          {"training", {{"epochs", c.epochs}, {"learning_rate", c.learning_rate}, {"final_loss", c.final_loss}}}};
}

inline GroundClassifier classifier_from_json(const json& j) {
  try {
    GroundClassifier c;
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != 2) throw Error("classifier: expected 2 layers");
    array_from_json(layers[0].at("weights"), c.w1, "layer 1 weights");
    array_from_json(layers[0].at("bias"), c.b1, "layer 1 bias");
    array_from_json(layers[1].at("weights"), c.w2, "layer 2 weights");
    std::array<double, 1> b2{};
    array_from_json(layers[1].at("bias"), b2, "layer 2 bias");
    c.b2 = b2[0];
    array_from_json(j.at("input_mean"), c.input_mean, "input_mean");
    array_from_json(j.at("input_scale"), c.input_scale, "input_scale");
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("training")) {
      c.epochs = j["training"].value("epochs", 0);
      c.learning_rate = j["training"].value("learning_rate", 0.0);
      c.final_loss = j["training"].value("final_loss", 0.0);
    }
    if (!c.finite()) throw Error("classifier: non-finite weights");
    return c;
  } catch (const json::exception& e) {
    throw Error(std::string("classifier: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Proposals

inline constexpr const char* kProposalHeader = "rank,energy,cx,cy,cz,sx,sy,sz,azimuth_deg,class,template_id";

inline std::string proposal_row(const Proposal& p, const std::string& cls) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s,%d", p.rank, p.energy,
                p.box.center.x, p.box.center.y, p.box.center.z, p.box.size.sx, p.box.size.sy, p.box.size.sz,
                p.box.azimuth * 180.0 / std::numbers::pi, cls.c_str(), p.box.template_id.value_or(-1));
  return buf;
}

inline void write_proposals_csv(const std::filesystem::path& path, const ProposalList& list, const std::string& cls) {
  auto f = open_out(path);
  f << kProposalHeader << '\n';
  for (const auto& p : list.items) f << proposal_row(p, cls) << '\n';
}

struct ProposalRow {
  int rank = 0;
  double energy = 0.0;
  OrientedBox3D box;
  std::string cls;
};

inline std::vector<ProposalRow> read_proposals_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::vector<ProposalRow> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != kProposalHeader) throw Error(path.string() + ":1: unexpected proposal CSV header");
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    if (f.size() != 11) throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 11 columns");
    try {
      ProposalRow r;
      r.rank = std::stoi(f[0]);
      r.energy = std::stod(f[1]);
      r.box = make_box({std::stod(f[2]), std::stod(f[3]), std::stod(f[4])},
                       {std::stod(f[5]), std::stod(f[6]), std::stod(f[7])}, std::stod(f[8]) * std::numbers::pi / 180.0);
      r.cls = f[9];
      const int t = std::stoi(f[10]);
      if (t >= 0) r.box.template_id = t;
      out.push_back(r);
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// KITTI result lines: 2D rect from projection, score = -energy.
inline void write_proposals_kitti(const std::filesystem::path& path, const ProposalList& list, const std::string& cls,
                                  const CameraCalib& calib) {
  std::vector<KittiLabel> labels;
  for (const auto& p : list.items) {
    KittiLabel l = label_from_box(cls, p.box, &calib);
    l.score = -p.energy;
    labels.push_back(l);
  }
  write_labels(path, labels);
}

}  // namespace voxprop::io
