#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "flowrisk/csv.hpp"
#include "flowrisk/error.hpp"

namespace flowrisk {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
};

// Counts at a fixed decision threshold; score >= threshold predicts positive.
inline ConfusionCounts confusion_at(std::span<const double> scores,
                                    std::span<const std::uint8_t> labels, double threshold) {
  if (scores.size() != labels.size()) fail("internal", "score/label size mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i]) {
      (predicted ? c.tp : c.fn)++;
    } else {
      (predicted ? c.fp : c.tn)++;
    }
  }
  return c;
}

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double threshold = 0.0;  // the score value producing this point
};

struct PrCurve {
  std::vector<PrPoint> points;  // recall non-decreasing, thresholds strictly decreasing
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

namespace detail {

// Indices ordered by score descending; ties broken by index so the sweep
// order is deterministic (tied scores are collapsed into one operating point
// anyway, so the tie-break cannot affect the curve).
inline std::vector<std::size_t> rank_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

}  // namespace detail

// Precision-recall curve swept over all distinct score thresholds, highest
// first (decision rule: score >= threshold). Equal scores enter together.
// Leading points with zero true positives are dropped: they have recall 0
// and contribute nothing to the area, and dropping them keeps precision
// within (0, 1] everywhere on the curve.
inline PrCurve pr_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) fail("internal", "score/label size mismatch");
  if (scores.empty()) fail("degenerate-labels", "no scores to sweep");
  PrCurve curve;
  for (auto y : labels) (y ? curve.positives : curve.negatives)++;
  if (curve.positives == 0)
    fail("degenerate-labels", "no positive labels; precision-recall is undefined");

  const auto order = detail::rank_order(scores);
  const double np = static_cast<double>(curve.positives);
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] ? tp : fp)++;
      ++i;
    }
    if (tp == 0) continue;  // zero-recall prefix; see note above
    curve.points.push_back({static_cast<double>(tp) / np,
                            static_cast<double>(tp) / static_cast<double>(tp + fp), threshold});
  }
  return curve;
}

// Average precision: step integration of the precision-recall curve,
//   AP = sum_k (R_k - R_{k-1}) * P_k
// over distinct-threshold points in descending score order.
inline double pr_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const PrCurve curve = pr_curve(scores, labels);
  double area = 0.0;
  double prev_recall = 0.0;
  for (const PrPoint& pt : curve.points) {
    area += (pt.recall - prev_recall) * pt.precision;
    prev_recall = pt.recall;
  }
  return area;
}

inline void write_pr_curve_csv(const PrCurve& curve, std::ostream& out) {
  out << "threshold,recall,precision\n";
  for (const PrPoint& pt : curve.points)
    out << format_double(pt.threshold) << ',' << format_double(pt.recall) << ','
        << format_double(pt.precision) << '\n';
}

}  // namespace flowrisk
