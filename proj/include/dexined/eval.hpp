#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dexined/image.hpp"

namespace dexined {

struct BinaryMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // row-major, 0 or 1

  BinaryMap() = default;
  BinaryMap(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::int64_t count() const;
  bool operator==(const BinaryMap&) const = default;
};

// value >= threshold -> 1. Single-channel images only.
BinaryMap binarize(const Image& map, double threshold);

// Zhang-Suen skeletonization.
BinaryMap thin(const BinaryMap& map);

struct MatchConfig {
  double max_distance = 0.0075;  // fraction of the image diagonal
  int thresholds = 99;
  bool thinning = true;

  void validate() const;
  double radius_pixels(int width, int height) const;
};

struct MatchCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
};

// Maximum-cardinality one-to-one matching between edge pixels no farther than
// radius apart.
MatchCounts match_edges(const BinaryMap& pred, const BinaryMap& gt, double radius);
MatchCounts match_edges(const BinaryMap& pred, const BinaryMap& gt, const MatchConfig& config);

double precision_of(const MatchCounts& c);
double recall_of(const MatchCounts& c);
double f_measure(double precision, double recall);

struct PRPoint {
  double threshold = 0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  double precision = 0;
  double recall = 0;
  double f = 0;
};

struct ImageScore {
  std::string stem;
  double best_f = 0;
  double best_threshold = 0;
};

struct EvalSummary {
  double ods = 0;
  double ods_threshold = 0;
  double ois = 0;
  double ap = 0;
  std::vector<PRPoint> curve;
  std::vector<ImageScore> per_image;
  MatchConfig config;
};

// Thresholds k / (T + 1), k = 1..T.
std::vector<double> eval_thresholds(int count);

// Area under the precision-recall curve with precision made non-increasing in
// recall; zero precision beyond the largest recall.
double average_precision(std::span<const PRPoint> curve);

// Predictions are probability maps in [0, 1]; GT maps are binarized at 0.5.
EvalSummary evaluate_dataset(std::span<const Image> preds, std::span<const Image> gts, const MatchConfig& config,
                             std::span<const std::string> stems = {});

struct EvalInputs {
  std::vector<std::string> stems;
  std::vector<Image> preds;
  std::vector<Image> gts;
};

// Pairs PNGs by stem. gt_dir may be flat or a dataset root holding
// edge_maps/<split>/ (the "test" split is preferred).
EvalInputs ingest_for_evaluation(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir);

// pr_curve.csv and summary.json.
void write_eval_outputs(const std::filesystem::path& out_dir, const EvalSummary& summary);
std::string eval_summary_json(const EvalSummary& summary);

}  // namespace dexined
