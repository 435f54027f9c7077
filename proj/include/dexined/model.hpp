#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dexined/ops.hpp"

namespace dexined {

enum class UpsampleVariant {
  Bdc,  // transpose conv, bilinear-initialized, trainable
  Dc,   // transpose conv, trainable
  Sp,   // subpixel conv (conv + pixel shuffle)
};

std::string_view to_string(UpsampleVariant variant);
UpsampleVariant parse_variant(std::string_view name);

inline constexpr int kMainBlocks = 6;
inline constexpr int kSideOutputs = 6;
inline constexpr int kSupervisedOutputs = 7;  // six sides + fused

struct ModelConfig {
  int stem_width = 32;
  std::array<int, kMainBlocks> widths{64, 128, 256, 512, 512, 256};
  std::array<int, kMainBlocks> sub_blocks{1, 1, 2, 3, 3, 3};
  UpsampleVariant variant = UpsampleVariant::Dc;
  double width_multiplier = 1.0;
  int pad_multiple = 16;
  int upsample_filters = 16;
  // 0 picks the variant default: 2 (dc), 4 (bdc), 3 (sp subpixel conv).
  int upsample_kernel = 0;
  BatchNormOptions batch_norm;

  void validate() const;
  // Width after the multiplier; throws a config error when it rounds to zero.
  int scaled(int width) const;
  int block_width(int block) const { return scaled(widths[static_cast<std::size_t>(block)]); }
  int effective_upsample_kernel() const;

  static ModelConfig toy();
};

enum class UpsampleStage { SubBlock2, SubBlock1 };

// Upsampler layout for one side output: zero or more 16-filter stages, each
// halving the scale, then a single 1-filter stage at scale 2.
struct ScalePlan {
  int scale = 0;
  std::vector<UpsampleStage> stages;
  int sub_block2_count() const;
};

ScalePlan plan_upsampling(int scale);

// Scale of each side feature relative to the input.
inline constexpr std::array<int, kSideOutputs> kSideScales{2, 4, 8, 16, 16, 16};

template <typename Real>
struct EdgeMapSet {
  // Logits at input resolution: out1..out6, fused.
  std::array<Tensor<Real>, kSupervisedOutputs> logits;
  // Probabilities: out1..out6, fused, averaged.
  std::array<Tensor<Real>, kSupervisedOutputs + 1> probabilities;

  const Tensor<Real>& averaged() const { return probabilities[kSupervisedOutputs]; }
  const Tensor<Real>& fused_logits() const { return logits[kSideOutputs]; }
};

// Handles into a tape after one traced forward pass.
struct TracedOutputs {
  std::array<Var, kSideOutputs> side_features;
  std::array<Var, kSupervisedOutputs> logits;
  std::array<Var, kSupervisedOutputs> probabilities;
  Var averaged;
};

template <typename Real>
class DexiNed {
 public:
  DexiNed(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore<Real>& parameters() { return params_; }
  const ParameterStore<Real>& parameters() const { return params_; }
  const std::array<ScalePlan, kSideOutputs>& plans() const { return plans_; }

  // Records the full forward pass on `tape`. image is [N, 3, H, W].
  TracedOutputs trace(Tape<Real>& tape, const Tensor<Real>& image, BatchNormMode mode);

  // Encoder only. `padded` must have spatial dims divisible by 16.
  std::array<Var, kSideOutputs> encode(Tape<Real>& tape, Var padded, BatchNormMode mode);

  // Runs one side output's upsampler; result has scale 1 relative to the input.
  Var upsample(Tape<Real>& tape, int side, Var feature);

  EdgeMapSet<Real> forward(const Tensor<Real>& image, BatchNormMode mode = BatchNormMode::Infer);

  // Channel count of the side feature of block b (0-based).
  int side_channels(int block) const { return config_.block_width(block); }

 private:
  Var conv_bn(Tape<Real>& tape, Var x, const std::string& prefix, int index, bool activate, BatchNormMode mode);
  Var conv(Tape<Real>& tape, Var x, const std::string& prefix, int stride, Padding padding, bool with_bias);
  void add_conv(std::mt19937_64& rng, const std::string& prefix, int in_c, int out_c, int kernel,
                bool with_bias);
  void add_batch_norm(const std::string& prefix, int channels);
  void add_upsampler(std::mt19937_64& rng, int side, int in_c);

  ModelConfig config_;
  ParameterStore<Real> params_;
  std::array<ScalePlan, kSideOutputs> plans_;
};

extern template class DexiNed<float>;
extern template class DexiNed<double>;

}  // namespace dexined
