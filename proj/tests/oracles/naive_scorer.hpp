#pragma once

// Reference ODS/OIS/AP without thinning, written from the definitions:
// thresholds k/(T+1), brute-force matching, AP as the integral of the
// upper-envelope precision over recall evaluated piecewise on breakpoints.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "brute_matcher.hpp"
#include "dexined/image.hpp"

namespace oracle {

struct NaiveScores {
  double ods = 0;
  double ois = 0;
  double ap = 0;
};

inline double safe_ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline double harmonic(double p, double r) { return p + r == 0 ? 0.0 : 2 * p * r / (p + r); }

inline NaiveScores naive_score(const std::vector<dexined::Image>& preds, const std::vector<dexined::Image>& gts,
                               int thresholds, double max_distance) {
  NaiveScores s;
  std::vector<double> recalls;
  std::vector<double> precisions;
  std::vector<double> best_per_image(preds.size(), 0.0);
  for (int k = 1; k <= thresholds; ++k) {
    const double t = static_cast<double>(k) / (thresholds + 1);
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      dexined::BinaryMap p(preds[i].width, preds[i].height);
      dexined::BinaryMap g(gts[i].width, gts[i].height);
      for (std::size_t j = 0; j < p.data.size(); ++j) {
        p.data[j] = preds[i].data[j] >= t ? 1 : 0;
        g.data[j] = gts[i].data[j] >= 0.5f ? 1 : 0;
      }
      const double radius = max_distance * std::sqrt(double(p.width) * p.width + double(p.height) * p.height);
      const auto c = brute_match(p, g, radius);
      tp += c.tp;
      fp += c.fp;
      fn += c.fn;
      best_per_image[i] = std::max(best_per_image[i], harmonic(safe_ratio(c.tp, c.tp + c.fp), safe_ratio(c.tp, c.tp + c.fn)));
    }
    const double prec = safe_ratio(tp, tp + fp);
    const double rec = safe_ratio(tp, tp + fn);
    s.ods = std::max(s.ods, harmonic(prec, rec));
    precisions.push_back(prec);
    recalls.push_back(rec);
  }
  for (double f : best_per_image) s.ois += f;
  s.ois /= static_cast<double>(preds.size());

  std::set<double> breaks(recalls.begin(), recalls.end());
  breaks.insert(0.0);
  double prev = 0.0;
  for (double b : breaks) {
    if (b <= 0.0) continue;
    double env = 0.0;
    for (std::size_t j = 0; j < recalls.size(); ++j)
      if (recalls[j] >= b) env = std::max(env, precisions[j]);
    s.ap += (b - prev) * env;
    prev = b;
  }
  return s;
}

}  // namespace oracle
