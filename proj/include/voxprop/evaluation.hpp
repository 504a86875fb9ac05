#pragma once

// Oracle recall, average recall and localisation precision over ranked
// proposal lists. Undefined results (no ground truth left after filtering)
// are std::nullopt, never 0.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "voxprop/error.hpp"
#include "voxprop/geometry.hpp"

namespace voxprop {

enum class IouSpace { Image2D, Bev, ThreeD };
enum class Difficulty { Easy, Moderate, Hard };
enum class CurveAxis { Budget, Iou, Distance };

inline const char* to_string(IouSpace s) {
  switch (s) {
    case IouSpace::Image2D: return "2d";
    case IouSpace::Bev: return "bev";
    default: return "3d";
  }
}

inline const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Moderate: return "moderate";
    default: return "hard";
  }
}

struct DifficultyFilter {
  double min_height = 0.0;  // 2D box height, pixels
  int max_occlusion = 3;
  double max_truncation = 1.0;

  static DifficultyFilter none() { return {}; }
  static DifficultyFilter preset(Difficulty d) {
    switch (d) {
      case Difficulty::Easy: return {40.0, 0, 0.15};
      case Difficulty::Moderate: return {25.0, 1, 0.30};
      default: return {25.0, 2, 0.50};
    }
  }
};

struct GtObject {
  std::string type;
  OrientedBox3D box;
  Rect2D bbox;  // image frame
  int occlusion = 0;
  double truncation = 0.0;
};

struct SceneGt {
  std::vector<GtObject> objects;
};

// Ranked proposals for one scene; rects are used for image-space IoU.
struct RankedProposals {
  std::vector<OrientedBox3D> boxes;
  std::vector<Rect2D> rects;
};

inline bool same_type(const std::string& a, const std::string& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

// Empty class string keeps every type.
inline bool passes(const GtObject& g, const std::string& cls, const DifficultyFilter& f) {
  if (!cls.empty() && !same_type(g.type, cls)) return false;
  return g.bbox.height() >= f.min_height && g.occlusion <= f.max_occlusion && g.truncation <= f.max_truncation;
}

inline double overlap(const RankedProposals& p, std::size_t i, const GtObject& g, IouSpace space) {
  switch (space) {
    case IouSpace::Image2D:
      if (i >= p.rects.size()) throw InvalidArgument("image-space recall needs proposal rectangles");
      return iou_2d(p.rects[i], g.bbox);
    case IouSpace::Bev: return bev_iou(p.boxes[i], g.box);
    default: return iou_3d(p.boxes[i], g.box);
  }
}

inline constexpr std::size_t kNeverMatched = std::numeric_limits<std::size_t>::max();

// For one GT object: the best (lowest) rank among proposals whose IoU meets
// the threshold, or kNeverMatched.
inline std::size_t first_match_rank(const RankedProposals& p, const GtObject& g, double threshold, IouSpace space,
                                    std::size_t limit = kNeverMatched) {
  const std::size_t n = std::min(p.boxes.size(), limit);
  for (std::size_t i = 0; i < n; ++i) {
    if (overlap(p, i, g, space) >= threshold) return i;
  }
  return kNeverMatched;
}

struct EvalQuery {
  std::string cls;
  DifficultyFilter filter;
  IouSpace space = IouSpace::ThreeD;
};

inline void check_scenes(std::span<const RankedProposals> props, std::span<const SceneGt> gt) {
  if (props.size() != gt.size()) throw InvalidArgument("recall: proposal and GT scene counts differ");
}

inline std::optional<double> oracle_recall(std::span<const RankedProposals> props, std::span<const SceneGt> gt,
                                           double threshold, std::size_t budget, const EvalQuery& q) {
  require(budget >= 1, "oracle_recall: budget must be at least 1");
  check_scenes(props, gt);
  std::size_t total = 0, hit = 0;
  for (std::size_t s = 0; s < gt.size(); ++s) {
    for (const auto& g : gt[s].objects) {
      if (!passes(g, q.cls, q.filter)) continue;
      ++total;
      if (first_match_rank(props[s], g, threshold, q.space, budget) != kNeverMatched) ++hit;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(total);
}

struct RecallPoint {
  double x = 0.0;
  std::optional<double> recall;
};

struct RecallCurve {
  CurveAxis axis = CurveAxis::Budget;
  std::string cls;
  Difficulty difficulty = Difficulty::Moderate;
  IouSpace space = IouSpace::ThreeD;
  double fixed = 0.0;  // the held parameter: IoU threshold, or budget for the IoU axis
  std::vector<RecallPoint> points;
};

// Recall at every budget from one rank scan per GT.
inline RecallCurve recall_vs_budget(std::span<const RankedProposals> props, std::span<const SceneGt> gt,
                                    double threshold, std::span<const std::size_t> budgets, const EvalQuery& q) {
  check_scenes(props, gt);
  std::vector<std::size_t> ranks;
  for (std::size_t s = 0; s < gt.size(); ++s) {
    for (const auto& g : gt[s].objects) {
      if (passes(g, q.cls, q.filter)) ranks.push_back(first_match_rank(props[s], g, threshold, q.space));
    }
  }
  RecallCurve c;
  c.axis = CurveAxis::Budget;
  c.cls = q.cls;
  c.space = q.space;
  c.fixed = threshold;
  for (std::size_t b : budgets) {
    require(b >= 1, "recall_vs_budget: budgets must be at least 1");
    RecallPoint pt{static_cast<double>(b), std::nullopt};
    if (!ranks.empty()) {
      const auto hit = std::count_if(ranks.begin(), ranks.end(), [&](std::size_t r) { return r < b; });
      pt.recall = static_cast<double>(hit) / static_cast<double>(ranks.size());
    }
    c.points.push_back(pt);
  }
  return c;
}

inline RecallCurve recall_vs_iou(std::span<const RankedProposals> props, std::span<const SceneGt> gt,
                                 std::size_t budget, std::span<const double> thresholds, const EvalQuery& q) {
  require(budget >= 1, "recall_vs_iou: budget must be at least 1");
  check_scenes(props, gt);
  // best IoU per GT among the top-budget proposals
  std::vector<double> best;
  for (std::size_t s = 0; s < gt.size(); ++s) {
    const std::size_t n = std::min(budget, props[s].boxes.size());
    for (const auto& g : gt[s].objects) {
      if (!passes(g, q.cls, q.filter)) continue;
      double m = -1.0;
      for (std::size_t i = 0; i < n; ++i) m = std::max(m, overlap(props[s], i, g, q.space));
      best.push_back(m);
    }
  }
  RecallCurve c;
  c.axis = CurveAxis::Iou;
  c.cls = q.cls;
  c.space = q.space;
  c.fixed = static_cast<double>(budget);
  for (double t : thresholds) {
    RecallPoint pt{t, std::nullopt};
    if (!best.empty()) {
      const auto hit = std::count_if(best.begin(), best.end(), [&](double v) { return v >= t; });
      pt.recall = static_cast<double>(hit) / static_cast<double>(best.size());
    }
    c.points.push_back(pt);
  }
  return c;
}

// Thresholds are generated from integer steps so 0.95 is hit exactly once.
inline std::vector<double> ar_thresholds(IouSpace space) {
  std::vector<double> t;
  if (space == IouSpace::ThreeD) {
    for (int i = 0; i <= 5; ++i) t.push_back((25 + 5 * i) / 100.0);
  } else {
    for (int i = 0; i <= 9; ++i) t.push_back((50 + 5 * i) / 100.0);
  }
  return t;
}

inline std::optional<double> average_recall(std::span<const RankedProposals> props, std::span<const SceneGt> gt,
                                            std::size_t budget, const EvalQuery& q,
                                            std::span<const double> thresholds = {}) {
  const std::vector<double> def = ar_thresholds(q.space);
  if (thresholds.empty()) thresholds = def;
  const RecallCurve c = recall_vs_iou(props, gt, budget, thresholds, q);
  double sum = 0.0;
  for (const auto& p : c.points) {
    if (!p.recall) return std::nullopt;
    sum += *p.recall;
  }
  return sum / static_cast<double>(c.points.size());
}

// Bins are [edges[i], edges[i+1]) over the GT's ground distance |(x, z)|;
// point abscissae are bin centres.
inline RecallCurve recall_vs_distance(std::span<const RankedProposals> props, std::span<const SceneGt> gt,
                                      double threshold, std::size_t budget, std::span<const double> edges,
                                      const EvalQuery& q) {
  require(budget >= 1, "recall_vs_distance: budget must be at least 1");
  require(edges.size() >= 2 && std::is_sorted(edges.begin(), edges.end()),
          "recall_vs_distance: need at least two ascending bin edges");
  check_scenes(props, gt);
  const std::size_t nb = edges.size() - 1;
  std::vector<std::size_t> total(nb, 0), hit(nb, 0);
  for (std::size_t s = 0; s < gt.size(); ++s) {
    for (const auto& g : gt[s].objects) {
      if (!passes(g, q.cls, q.filter)) continue;
      const double d = std::hypot(g.box.center.x, g.box.center.z);
      const auto it = std::upper_bound(edges.begin(), edges.end(), d);
      if (it == edges.begin() || it == edges.end()) continue;
      const std::size_t b = static_cast<std::size_t>(it - edges.begin()) - 1;
      ++total[b];
      if (first_match_rank(props[s], g, threshold, q.space, budget) != kNeverMatched) ++hit[b];
    }
  }
  RecallCurve c;
  c.axis = CurveAxis::Distance;
  c.cls = q.cls;
  c.space = q.space;
  c.fixed = threshold;
  for (std::size_t b = 0; b < nb; ++b) {
    RecallPoint pt{0.5 * (edges[b] + edges[b + 1]), std::nullopt};
    if (total[b]) pt.recall = static_cast<double>(hit[b]) / static_cast<double>(total[b]);
    c.points.push_back(pt);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Average localisation precision

struct ScoredDetection {
  Point3 center;
  double score = 0.0;
};

// Detections are matched greedily in descending score (ties in input order)
// to the nearest unmatched GT centre within the threshold, per scene. ALP is
// the all-point interpolated area under the precision-recall curve, with one
// curve point per distinct score.
inline std::optional<double> alp(std::span<const std::vector<ScoredDetection>> dets,
                                 std::span<const std::vector<Point3>> gt, double distance_threshold) {
  require(dets.size() == gt.size(), "alp: detection and GT scene counts differ");
  require(distance_threshold > 0.0, "alp: distance threshold must be positive");
  std::size_t n_gt = 0;
  for (const auto& g : gt) n_gt += g.size();
  if (n_gt == 0) return std::nullopt;

  struct Flat {
    double score;
    std::size_t scene, index, order;
  };
  std::vector<Flat> all;
  for (std::size_t s = 0; s < dets.size(); ++s)
    for (std::size_t i = 0; i < dets[s].size(); ++i) all.push_back({dets[s][i].score, s, i, all.size()});
  std::stable_sort(all.begin(), all.end(), [](const Flat& a, const Flat& b) { return a.score > b.score; });

  std::vector<std::vector<char>> used(gt.size());
  for (std::size_t s = 0; s < gt.size(); ++s) used[s].assign(gt[s].size(), 0);
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < all.size(); ++k) {
    const auto& d = all[k];
    const Point3 c = dets[d.scene][d.index].center;
    std::size_t best = kNeverMatched;
    double best_d = distance_threshold;
    for (std::size_t j = 0; j < gt[d.scene].size(); ++j) {
      if (used[d.scene][j]) continue;
      const double dist = norm(c - gt[d.scene][j]);
      if (dist < best_d) {
        best_d = dist;
        best = j;
      }
    }
    if (best != kNeverMatched) {
      used[d.scene][best] = 1;
      ++tp;
    }
    // one operating point per distinct score
    if (k + 1 < all.size() && all[k + 1].score == d.score) continue;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  // interpolate: precision envelope from the right
  for (std::size_t k = prec.size(); k-- > 1;) prec[k - 1] = std::max(prec[k - 1], prec[k]);
  double area = 0.0, prev_r = 0.0;
  for (std::size_t k = 0; k < prec.size(); ++k) {
    area += (rec[k] - prev_r) * prec[k];
    prev_r = rec[k];
  }
  return area;
}

// ---------------------------------------------------------------------------
// Output

inline std::string curve_file_name(const RecallCurve& c) {
  std::string cls = c.cls.empty() ? "all" : c.cls;
  for (auto& ch : cls) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return "recall_" + cls + "_" + to_string(c.difficulty) + "_" + to_string(c.space) + ".csv";
}

inline void write_curve_csv(std::ostream& os, const RecallCurve& c) {
  const char* col = c.axis == CurveAxis::Budget ? "budget" : c.axis == CurveAxis::Iou ? "iou" : "distance";
  os << col << ",recall\n";
  char buf[64];
  for (const auto& p : c.points) {
    std::snprintf(buf, sizeof buf, "%.17g", p.x);
    os << buf << ',';
    if (p.recall) {
      std::snprintf(buf, sizeof buf, "%.17g", *p.recall);
      os << buf;
    } else {
      os << "null";
    }
    os << '\n';
  }
}

inline void write_curve_csv(const std::string& path, const RecallCurve& c) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  write_curve_csv(f, c);
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace voxprop
