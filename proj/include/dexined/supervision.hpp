#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dexined/model.hpp"

namespace dexined {

// Binary edge annotation: 1 = edge pixel.
class GroundTruthMap {
 public:
  GroundTruthMap() = default;
  GroundTruthMap(std::int64_t height, std::int64_t width, std::vector<std::uint8_t> mask);

  // Binarizes fractional annotations: value >= threshold is an edge.
  template <typename T>
  static GroundTruthMap from_values(std::int64_t height, std::int64_t width, std::span<const T> values,
                                    double threshold = 0.5) {
    std::vector<std::uint8_t> mask(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) mask[i] = values[i] >= threshold ? 1 : 0;
    return GroundTruthMap(height, width, std::move(mask));
  }

  std::int64_t height() const { return height_; }
  std::int64_t width() const { return width_; }
  std::span<const std::uint8_t> mask() const { return mask_; }
  std::int64_t positives() const { return positives_; }
  std::int64_t negatives() const { return static_cast<std::int64_t>(mask_.size()) - positives_; }

 private:
  std::int64_t height_ = 0;
  std::int64_t width_ = 0;
  std::vector<std::uint8_t> mask_;
  std::int64_t positives_ = 0;
};

struct ClassBalance {
  double beta = 0;            // fraction of non-edge pixels, weights the edge term
  double one_minus_beta = 0;  // fraction of edge pixels, weights the non-edge term
};

ClassBalance class_balance(const GroundTruthMap& gt);

struct SupervisionConfig {
  std::vector<double> deltas = std::vector<double>(kSupervisedOutputs, 1.0);
  // Divide each per-image loss by H*W instead of summing over pixels.
  bool mean_reduction = false;

  void validate() const;
};

// Class-balanced sigmoid cross-entropy summed over pixels and batch.
// logits is [N, 1, H, W]; gts holds one map per batch entry.
template <typename Real>
Var weighted_bce(Tape<Real>& tape, Var logits, std::span<const GroundTruthMap> gts, bool mean_reduction = false);

struct LossTerms {
  Var total;
  std::array<Var, kSupervisedOutputs> per_output;
};

// sum_n delta_n * loss_n over the six side logits and the fused logits.
template <typename Real>
LossTerms total_loss(Tape<Real>& tape, std::span<const Var> logits, std::span<const GroundTruthMap> gts,
                     const SupervisionConfig& config);

}  // namespace dexined
