#include "dexined/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"

namespace dexined {

namespace fs = std::filesystem;

void MatchConfig::validate() const {
  if (!(max_distance > 0) || !std::isfinite(max_distance)) fail(ErrorKind::Config, "match tolerance must be > 0");
  if (thresholds < 1) fail(ErrorKind::Config, "threshold count must be >= 1");
}

double MatchConfig::radius_pixels(int width, int height) const {
  return max_distance * std::hypot(static_cast<double>(width), static_cast<double>(height));
}

double precision_of(const MatchCounts& c) {
  const std::int64_t d = c.tp + c.fp;
  return d == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double recall_of(const MatchCounts& c) {
  const std::int64_t d = c.tp + c.fn;
  return d == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double f_measure(double p, double r) {
  if (p + r <= 0) return 0.0;
  return 2 * p * r / (p + r);
}

std::vector<double> eval_thresholds(int count) {
  std::vector<double> t;
  for (int k = 1; k <= count; ++k) t.push_back(static_cast<double>(k) / (count + 1));
  return t;
}

double average_precision(std::span<const PRPoint> curve) {
  std::vector<std::pair<double, double>> pts;  // (recall, precision)
  for (const auto& p : curve) pts.emplace_back(p.recall, p.precision);
  std::sort(pts.begin(), pts.end());
  // Running max from the right gives the interpolated precision.
  std::vector<double> interp(pts.size());
  double best = 0;
  for (std::size_t i = pts.size(); i-- > 0;) {
    best = std::max(best, pts[i].second);
    interp[i] = best;
  }
  double ap = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ap += (pts[i].first - prev_recall) * interp[i];
    prev_recall = pts[i].first;
  }
  return ap;
}

EvalSummary evaluate_dataset(std::span<const Image> preds, std::span<const Image> gts, const MatchConfig& config,
                             std::span<const std::string> stems) {
  config.validate();
  if (preds.size() != gts.size()) {
    fail(ErrorKind::Argument, "evaluate_dataset: " + std::to_string(preds.size()) + " predictions but " +
                                  std::to_string(gts.size()) + " ground-truth maps");
  }
  if (preds.empty()) fail(ErrorKind::Config, "nothing to evaluate: no prediction/GT pairs");
  if (!stems.empty() && stems.size() != preds.size()) fail(ErrorKind::Argument, "evaluate_dataset: stem count mismatch");

  const std::vector<double> thresholds = eval_thresholds(config.thresholds);
  const std::size_t nt = thresholds.size();
  std::vector<MatchCounts> totals(nt);
  EvalSummary summary;
  summary.config = config;
  double ois_sum = 0;

  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Image& pred = preds[i];
    const Image& gt = gts[i];
    const std::string stem = stems.empty() ? std::to_string(i) : stems[i];
    if (pred.channels != 1 || gt.channels != 1) fail(ErrorKind::Shape, stem + ": maps must be single channel");
    if (pred.width != gt.width || pred.height != gt.height) {
      fail(ErrorKind::Shape, stem + ": prediction and GT sizes differ");
    }
    for (float v : pred.data) {
      if (!(v >= 0.0f && v <= 1.0f)) fail(ErrorKind::Argument, stem + ": prediction values must lie in [0, 1]");
    }
    BinaryMap gt_bin = binarize(gt, 0.5);
    if (config.thinning) gt_bin = thin(gt_bin);
    const double radius = config.radius_pixels(gt.width, gt.height);

    ImageScore score{stem, -1, 0};
    BinaryMap previous;
    MatchCounts counts;
    for (std::size_t k = 0; k < nt; ++k) {
      BinaryMap bin = binarize(pred, thresholds[k]);
      if (k == 0 || bin != previous) {
        previous = bin;
        if (config.thinning) bin = thin(bin);
        counts = match_edges(bin, gt_bin, radius);
      }
      totals[k].tp += counts.tp;
      totals[k].fp += counts.fp;
      totals[k].fn += counts.fn;
      const double f = f_measure(precision_of(counts), recall_of(counts));
      if (f > score.best_f) {
        score.best_f = f;
        score.best_threshold = thresholds[k];
      }
    }
    ois_sum += score.best_f;
    summary.per_image.push_back(score);
  }

  summary.ods = -1;
  for (std::size_t k = 0; k < nt; ++k) {
    PRPoint p;
    p.threshold = thresholds[k];
    p.tp = totals[k].tp;
    p.fp = totals[k].fp;
    p.fn = totals[k].fn;
    p.precision = precision_of(totals[k]);
    p.recall = recall_of(totals[k]);
    p.f = f_measure(p.precision, p.recall);
    if (p.f > summary.ods) {
      summary.ods = p.f;
      summary.ods_threshold = p.threshold;
    }
    summary.curve.push_back(p);
  }
  summary.ois = ois_sum / static_cast<double>(preds.size());
  summary.ap = average_precision(summary.curve);
  return summary;
}

namespace {

std::map<std::string, fs::path> pngs_by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
  }
  return out;
}

fs::path locate_gt_dir(const fs::path& gt_dir) {
  if (!pngs_by_stem(gt_dir).empty()) return gt_dir;
  const fs::path maps = gt_dir / "edge_maps";
  if (fs::is_directory(maps)) {
    if (fs::is_directory(maps / "test")) return maps / "test";
    std::vector<fs::path> splits;
    for (const auto& e : fs::directory_iterator(maps)) {
      if (e.is_directory()) splits.push_back(e.path());
    }
    std::sort(splits.begin(), splits.end());
    if (!splits.empty()) return splits.front();
  }
  return gt_dir;
}

}  // namespace

EvalInputs ingest_for_evaluation(const fs::path& pred_dir, const fs::path& gt_dir) {
  if (!fs::is_directory(pred_dir)) fail(ErrorKind::Io, "prediction directory not found: " + pred_dir.string());
  if (!fs::is_directory(gt_dir)) fail(ErrorKind::Io, "ground-truth directory not found: " + gt_dir.string());
  const auto preds = pngs_by_stem(pred_dir);
  const auto gts = pngs_by_stem(locate_gt_dir(gt_dir));

  std::vector<std::string> missing;
  for (const auto& [stem, path] : preds) {
    if (!gts.count(stem)) missing.push_back(stem + " (no GT)");
  }
  for (const auto& [stem, path] : gts) {
    if (!preds.count(stem)) missing.push_back(stem + " (no prediction)");
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    fail(ErrorKind::Config, "prediction and GT stems differ: " + list);
  }

  EvalInputs in;
  for (const auto& [stem, path] : preds) {
    in.stems.push_back(stem);
    in.preds.push_back(read_png(path, 1));
    in.gts.push_back(read_png(gts.at(stem), 1));
  }
  return in;
}

std::string eval_summary_json(const EvalSummary& s) {
  nlohmann::ordered_json doc;
  doc["ods"] = s.ods;
  doc["ods_threshold"] = s.ods_threshold;
  doc["ois"] = s.ois;
  doc["ap"] = s.ap;
  doc["config"] = {{"max_distance", s.config.max_distance},
                   {"thresholds", s.config.thresholds},
                   {"thinning", s.config.thinning}};
  nlohmann::ordered_json images = nlohmann::ordered_json::array();
  for (const auto& img : s.per_image) {
    images.push_back({{"stem", img.stem}, {"best_f", img.best_f}, {"best_threshold", img.best_threshold}});
  }
  doc["per_image"] = std::move(images);
  return doc.dump(2) + "\n";
}

void write_eval_outputs(const fs::path& out_dir, const EvalSummary& summary) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) fail(ErrorKind::Io, "cannot create " + out_dir.string());
  {
    std::ofstream csv(out_dir / "pr_curve.csv", std::ios::trunc);
    csv << "threshold,tp,fp,fn,precision,recall,f\n";
    char row[256];
    for (const auto& p : summary.curve) {
      std::snprintf(row, sizeof(row), "%.6f,%lld,%lld,%lld,%.10f,%.10f,%.10f\n", p.threshold,
                    static_cast<long long>(p.tp), static_cast<long long>(p.fp), static_cast<long long>(p.fn),
                    p.precision, p.recall, p.f);
      csv << row;
    }
    if (!csv) fail(ErrorKind::Io, "cannot write pr_curve.csv");
  }
  std::ofstream json_out(out_dir / "summary.json", std::ios::trunc);
  json_out << eval_summary_json(summary);
  if (!json_out) fail(ErrorKind::Io, "cannot write summary.json");
}

}  // namespace dexined
