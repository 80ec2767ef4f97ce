#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fieldanno/annotation_format.hpp"
#include "fieldanno/detector.hpp"

namespace fieldanno {

class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// IoU thresholds are inclusive; the slack absorbs rounding in the IoU
// itself so that e.g. a box at IoU 0.7 counts at threshold 0.70.
inline constexpr double kIouSlack = 1e-12;

inline bool passes_iou(double value, double threshold) { return value >= threshold - kIouSlack; }

// 0.50, 0.55, ..., 0.95
inline std::array<double, 10> iou_thresholds() {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[i] = (50 + 5 * i) / 100.0;
  return t;
}

inline double f1(double precision, double recall) {
  const double sum = precision + recall;
  return sum > 0 ? 2 * precision * recall / sum : 0.0;
}

// ---------------------------------------------------------------------------
// Matching

struct MatchOutcome {
  std::vector<bool> is_tp;                               // per prediction, input order
  std::vector<std::optional<std::size_t>> matched_gt;   // per prediction
  std::vector<bool> gt_matched;                          // per ground truth
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

// Processing order: confidence descending, then best same-class IoU
// descending, then input order.
inline std::vector<std::size_t> match_order(const std::vector<Detection>& preds,
                                            const std::vector<NormalizedBox>& gts) {
  std::vector<double> best(preds.size(), 0.0);
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (const auto& g : gts)
      if (g.class_id == preds[p].box.class_id) best[p] = std::max(best[p], iou(preds[p].box, g));
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (preds[a].confidence != preds[b].confidence) return preds[a].confidence > preds[b].confidence;
    return best[a] > best[b];
  });
  return order;
}

// Greedy: each prediction in match_order() takes the unmatched same-class
// ground truth with the highest IoU at or above the threshold.
inline MatchOutcome match_predictions(const std::vector<Detection>& preds,
                                      const std::vector<NormalizedBox>& gts, double iou_thresh) {
  if (!(iou_thresh > 0 && iou_thresh < 1)) throw std::invalid_argument("iou_thresh must lie in (0, 1)");
  MatchOutcome m;
  m.is_tp.assign(preds.size(), false);
  m.matched_gt.assign(preds.size(), std::nullopt);
  m.gt_matched.assign(gts.size(), false);
  for (auto p : match_order(preds, gts)) {
    std::optional<std::size_t> pick;
    double pick_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (m.gt_matched[g] || gts[g].class_id != preds[p].box.class_id) continue;
      const double v = iou(preds[p].box, gts[g]);
      if (passes_iou(v, iou_thresh) && v > pick_iou) {
        pick = g;
        pick_iou = v;
      }
    }
    if (pick) {
      m.gt_matched[*pick] = true;
      m.matched_gt[p] = pick;
      m.is_tp[p] = true;
      ++m.tp;
    } else {
      ++m.fp;
    }
  }
  m.fn = gts.size() - m.tp;
  return m;
}

// ---------------------------------------------------------------------------
// Precision-recall sweep and AP

struct ImageEval {
  std::vector<Detection> preds;
  std::vector<NormalizedBox> gts;
};

struct PRPoint {
  double confidence = 0;
  double recall = 0;
  double precision = 0;
  std::size_t tp = 0;  // cumulative
  std::size_t count = 0;
};

struct PRCurve {
  std::size_t ground_truths = 0;
  std::vector<PRPoint> points;
};

// Sweep over every prediction of `cls` across the dataset in descending
// confidence (ties: IoU with the matched or best ground truth descending,
// then image order, then input order).
inline PRCurve pr_curve(const std::vector<ImageEval>& images, double iou_thresh, ClassId cls) {
  struct Entry {
    double conf;
    double tie_iou;
    std::size_t image;
    std::size_t index;
    bool tp;
  };
  std::vector<Entry> entries;
  PRCurve curve;
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<Detection> preds;
    std::vector<std::size_t> origin;
    for (std::size_t p = 0; p < images[i].preds.size(); ++p)
      if (images[i].preds[p].box.class_id == cls) {
        preds.push_back(images[i].preds[p]);
        origin.push_back(p);
      }
    std::vector<NormalizedBox> gts;
    for (const auto& g : images[i].gts)
      if (g.class_id == cls) gts.push_back(g);
    curve.ground_truths += gts.size();
    const auto m = match_predictions(preds, gts, iou_thresh);
    for (std::size_t p = 0; p < preds.size(); ++p) {
      double tie = 0;
      for (const auto& g : gts) tie = std::max(tie, iou(preds[p].box, g));
      entries.push_back({preds[p].confidence, tie, i, origin[p], m.is_tp[p]});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    if (a.tie_iou != b.tie_iou) return a.tie_iou > b.tie_iou;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });
  std::size_t tp = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    tp += entries[k].tp ? 1 : 0;
    PRPoint pt;
    pt.confidence = entries[k].conf;
    pt.tp = tp;
    pt.count = k + 1;
    pt.precision = static_cast<double>(tp) / (k + 1);
    pt.recall = curve.ground_truths ? static_cast<double>(tp) / curve.ground_truths : 0.0;
    curve.points.push_back(pt);
  }
  return curve;
}

// 101-point interpolated AP: mean over r in {0, 0.01, ..., 1} of the best
// precision reached at recall >= r (0 where unreachable). Recall levels are
// compared in integers (tp * 100 >= r_index * gt) so no level is lost to
// rounding.
inline double interpolated_ap(const PRCurve& curve) {
  if (curve.ground_truths == 0) throw UndefinedMetricError("AP undefined without ground truth");
  const auto& pts = curve.points;
  std::vector<double> envelope(pts.size());
  double running = 0;
  for (std::size_t k = pts.size(); k-- > 0;) {
    running = std::max(running, pts[k].precision);
    envelope[k] = running;
  }
  double sum = 0;
  std::size_t k = 0;
  for (std::size_t r = 0; r <= 100; ++r) {
    while (k < pts.size() && pts[k].tp * 100 < r * curve.ground_truths) ++k;
    if (k == pts.size()) break;
    sum += envelope[k];
  }
  return sum / 101.0;
}

inline std::set<ClassId> classes_with_ground_truth(const std::vector<ImageEval>& images) {
  std::set<ClassId> out;
  for (const auto& im : images)
    for (const auto& g : im.gts) out.insert(g.class_id);
  return out;
}

inline double class_average_precision(const std::vector<ImageEval>& images, double iou_thresh, ClassId cls) {
  return interpolated_ap(pr_curve(images, iou_thresh, cls));
}

// Mean of per-class AP over the classes that have ground truth.
inline double average_precision(const std::vector<ImageEval>& images, double iou_thresh) {
  const auto classes = classes_with_ground_truth(images);
  if (classes.empty()) throw UndefinedMetricError("AP undefined without ground truth");
  double sum = 0;
  for (auto c : classes) sum += class_average_precision(images, iou_thresh, c);
  return sum / classes.size();
}

// ---------------------------------------------------------------------------
// Report

struct ClassMetrics {
  std::array<double, 10> ap{};  // per iou_thresholds()
  double map_50_95 = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t ground_truths = 0;
};

struct EvalReport {
  std::map<ClassId, ClassMetrics> per_class;
  ClassMetrics overall;
  double reporting_confidence = 0.25;
  std::vector<std::string> class_names;  // optional, indexed by ClassId
};

// mAP@50-95 plus precision/recall/F1 at IoU 0.50 for predictions with
// confidence >= `reporting_confidence`. Per-class values are averaged
// (macro) into `overall`.
inline EvalReport map_50_95(const std::vector<ImageEval>& images, double reporting_confidence = 0.25) {
  const auto classes = classes_with_ground_truth(images);
  if (classes.empty()) throw UndefinedMetricError("mAP undefined: ground-truth set is empty");
  const auto thresholds = iou_thresholds();
  EvalReport report;
  report.reporting_confidence = reporting_confidence;
  for (auto c : classes) {
    ClassMetrics cm;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const auto curve = pr_curve(images, thresholds[t], c);
      cm.ground_truths = curve.ground_truths;
      cm.ap[t] = interpolated_ap(curve);
    }
    cm.map_50_95 = std::accumulate(cm.ap.begin(), cm.ap.end(), 0.0) / cm.ap.size();

    std::size_t tp = 0, fp = 0;
    for (const auto& im : images) {
      std::vector<Detection> preds;
      for (const auto& d : im.preds)
        if (d.box.class_id == c && d.confidence >= reporting_confidence) preds.push_back(d);
      std::vector<NormalizedBox> gts;
      for (const auto& g : im.gts)
        if (g.class_id == c) gts.push_back(g);
      const auto m = match_predictions(preds, gts, thresholds[0]);
      tp += m.tp;
      fp += m.fp;
    }
    cm.precision = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
    cm.recall = static_cast<double>(tp) / cm.ground_truths;
    cm.f1 = f1(cm.precision, cm.recall);
    report.per_class.emplace(c, cm);
  }

  auto& o = report.overall;
  const double n = static_cast<double>(report.per_class.size());
  for (const auto& [c, cm] : report.per_class) {
    for (std::size_t t = 0; t < o.ap.size(); ++t) o.ap[t] += cm.ap[t] / n;
    o.precision += cm.precision / n;
    o.recall += cm.recall / n;
    o.ground_truths += cm.ground_truths;
  }
  o.map_50_95 = std::accumulate(o.ap.begin(), o.ap.end(), 0.0) / o.ap.size();
  o.f1 = f1(o.precision, o.recall);
  return report;
}

namespace detail {
inline std::string fixed6(double v) {
  std::string s;
  append_fixed6(s, v);
  return s;
}
inline std::string threshold_label(double t) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}
}  // namespace detail

inline std::string class_label(const EvalReport& r, ClassId c) {
  return c < r.class_names.size() ? r.class_names[c] : std::to_string(c);
}

// One `key=value` per line.
inline std::string format_report(const EvalReport& r) {
  std::string out;
  auto put = [&](const std::string& prefix, const ClassMetrics& m) {
    out += prefix + "map_50_95=" + detail::fixed6(m.map_50_95) + "\n";
    out += prefix + "precision=" + detail::fixed6(m.precision) + "\n";
    out += prefix + "recall=" + detail::fixed6(m.recall) + "\n";
    out += prefix + "f1=" + detail::fixed6(m.f1) + "\n";
    const auto t = iou_thresholds();
    for (std::size_t i = 0; i < t.size(); ++i)
      out += prefix + "ap@" + detail::threshold_label(t[i]) + "=" + detail::fixed6(m.ap[i]) + "\n";
    out += prefix + "ground_truths=" + std::to_string(m.ground_truths) + "\n";
  };
  out += "classes=" + std::to_string(r.per_class.size()) + "\n";
  out += "reporting_confidence=" + detail::fixed6(r.reporting_confidence) + "\n";
  put("", r.overall);
  for (const auto& [c, m] : r.per_class) put("class." + class_label(r, c) + ".", m);
  return out;
}

// CSV rows `class,iou_thresh,ap`; the aggregate is labelled `all`.
inline std::string format_ap_csv(const EvalReport& r) {
  std::string out = "class,iou_thresh,ap\n";
  const auto t = iou_thresholds();
  auto rows = [&](const std::string& label, const ClassMetrics& m) {
    for (std::size_t i = 0; i < t.size(); ++i)
      out += label + "," + detail::threshold_label(t[i]) + "," + detail::fixed6(m.ap[i]) + "\n";
  };
  rows("all", r.overall);
  for (const auto& [c, m] : r.per_class) rows(class_label(r, c), m);
  return out;
}

inline std::string format_pr_csv(const std::vector<ImageEval>& images, double iou_thresh,
                                 const std::vector<std::string>& names = {}) {
  std::string out = "class,confidence,recall,precision\n";
  for (auto c : classes_with_ground_truth(images)) {
    const std::string label = c < names.size() ? names[c] : std::to_string(c);
    for (const auto& p : pr_curve(images, iou_thresh, c).points)
      out += label + "," + detail::fixed6(p.confidence) + "," + detail::fixed6(p.recall) + "," +
             detail::fixed6(p.precision) + "\n";
  }
  return out;
}

}  // namespace fieldanno
