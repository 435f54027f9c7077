#include "dexined/model.hpp"

#include <cmath>

namespace dexined {

std::string_view to_string(UpsampleVariant variant) {
  switch (variant) {
    case UpsampleVariant::Bdc: return "bdc";
    case UpsampleVariant::Dc: return "dc";
    case UpsampleVariant::Sp: return "sp";
  }
  return "dc";
}

UpsampleVariant parse_variant(std::string_view name) {
  if (name == "bdc") return UpsampleVariant::Bdc;
  if (name == "dc") return UpsampleVariant::Dc;
  if (name == "sp") return UpsampleVariant::Sp;
  fail(ErrorKind::Config, "unknown upsampling variant '" + std::string(name) + "' (expected bdc, dc or sp)");
}

int ModelConfig::scaled(int width) const {
  const long v = std::lround(width * width_multiplier);
  if (v <= 0) {
    fail(ErrorKind::Config, "width multiplier " + std::to_string(width_multiplier) + " turns width " +
                                std::to_string(width) + " into zero channels");
  }
  return static_cast<int>(v);
}

int ModelConfig::effective_upsample_kernel() const {
  if (upsample_kernel > 0) return upsample_kernel;
  switch (variant) {
    case UpsampleVariant::Dc: return 2;
    case UpsampleVariant::Bdc: return 4;
    case UpsampleVariant::Sp: return 3;
  }
  return 2;
}

void ModelConfig::validate() const {
  if (!(width_multiplier > 0)) fail(ErrorKind::Config, "width_multiplier must be positive");
  if (stem_width <= 0) fail(ErrorKind::Config, "stem_width must be positive");
  scaled(stem_width);
  for (int b = 0; b < kMainBlocks; ++b) {
    if (widths[static_cast<std::size_t>(b)] <= 0) fail(ErrorKind::Config, "block widths must be positive");
    if (sub_blocks[static_cast<std::size_t>(b)] < 1) fail(ErrorKind::Config, "every main block needs >= 1 sub-block");
    block_width(b);
  }
  if (pad_multiple <= 0 || pad_multiple % 16 != 0) fail(ErrorKind::Config, "pad_multiple must be a positive multiple of 16");
  if (upsample_filters <= 0) fail(ErrorKind::Config, "upsample_filters must be positive");
  const int k = effective_upsample_kernel();
  if (variant == UpsampleVariant::Sp) {
    if (k % 2 == 0) fail(ErrorKind::Config, "subpixel conv kernel must be odd");
  } else if (k < 2 || k % 2 != 0) {
    fail(ErrorKind::Config, "transpose conv kernel must be even and >= 2");
  }
  if (!(batch_norm.epsilon > 0) || batch_norm.momentum < 0 || batch_norm.momentum > 1) {
    fail(ErrorKind::Config, "batch norm epsilon must be > 0 and momentum in [0, 1]");
  }
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.width_multiplier = 0.125;
  return c;
}

int ScalePlan::sub_block2_count() const {
  int n = 0;
  for (auto s : stages) n += s == UpsampleStage::SubBlock2 ? 1 : 0;
  return n;
}

ScalePlan plan_upsampling(int scale) {
  if (scale < 2 || (scale & (scale - 1)) != 0) {
    fail(ErrorKind::Argument, "plan_upsampling: scale must be a power of two >= 2, got " + std::to_string(scale));
  }
  ScalePlan plan;
  plan.scale = scale;
  for (int s = scale; s > 2; s /= 2) plan.stages.push_back(UpsampleStage::SubBlock2);
  if (testing::perturbed("scale_plan")) plan.stages.push_back(UpsampleStage::SubBlock2);
  plan.stages.push_back(UpsampleStage::SubBlock1);
  return plan;
}

namespace {

std::string block_name(int b) { return "block" + std::to_string(b); }
std::string sub_name(int b, int j) { return block_name(b) + "/sub" + std::to_string(j); }
std::string stage_name(int side, int j) {
  return "up" + std::to_string(side + 1) + "/stage" + std::to_string(j + 1);
}

}  // namespace

template <typename Real>
void DexiNed<Real>::add_conv(std::mt19937_64& rng, const std::string& prefix, int in_c, int out_c, int kernel,
                             bool with_bias) {
  Tensor<Real> k(Shape{out_c, in_c, kernel, kernel});
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (in_c * kernel * kernel)));
  for (auto& v : k.data()) v = static_cast<Real>(normal(rng));
  params_.add(prefix + "/kernel", std::move(k));
  if (with_bias) params_.add(prefix + "/bias", Tensor<Real>(Shape{1, out_c, 1, 1}));
}

template <typename Real>
void DexiNed<Real>::add_batch_norm(const std::string& prefix, int channels) {
  const Shape s{1, channels, 1, 1};
  params_.add(prefix + "/gamma", Tensor<Real>(s, Real(1)));
  params_.add(prefix + "/beta", Tensor<Real>(s));
  params_.add(prefix + "/running_mean", Tensor<Real>(s), false);
  params_.add(prefix + "/running_var", Tensor<Real>(s, Real(1)), false);
}

template <typename Real>
void DexiNed<Real>::add_upsampler(std::mt19937_64& rng, int side, int in_c) {
  const int k = config_.effective_upsample_kernel();
  const auto& plan = plans_[static_cast<std::size_t>(side)];
  for (std::size_t j = 0; j < plan.stages.size(); ++j) {
    const int out_c = plan.stages[j] == UpsampleStage::SubBlock2 ? config_.upsample_filters : 1;
    const std::string prefix = stage_name(side, static_cast<int>(j));
    add_conv(rng, prefix + "/conv", in_c, out_c, 1, true);
    switch (config_.variant) {
      case UpsampleVariant::Dc: {
        // Transpose-conv layout [in, out, k, k]; each output sums in*(k/2)^2 taps.
        Tensor<Real> w(Shape{out_c, out_c, k, k});
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (out_c * (k / 2.0) * (k / 2.0))));
        for (auto& v : w.data()) v = static_cast<Real>(normal(rng));
        params_.add(prefix + "/up/kernel", std::move(w));
        params_.add(prefix + "/up/bias", Tensor<Real>(Shape{1, out_c, 1, 1}));
        break;
      }
      case UpsampleVariant::Bdc:
        params_.add(prefix + "/up/kernel", bilinear_kernel<Real>(k, out_c));
        params_.add(prefix + "/up/bias", Tensor<Real>(Shape{1, out_c, 1, 1}));
        break;
      case UpsampleVariant::Sp:
        add_conv(rng, prefix + "/up", out_c, out_c * 4, k, true);
        break;
    }
    in_c = out_c;
  }
}

template <typename Real>
DexiNed<Real>::DexiNed(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  for (int i = 0; i < kSideOutputs; ++i) plans_[static_cast<std::size_t>(i)] = plan_upsampling(kSideScales[static_cast<std::size_t>(i)]);

  std::mt19937_64 rng(seed);
  auto add_pair = [&](int b, int j, int in_c, int out_c) {
    add_conv(rng, sub_name(b, j) + "/conv1", in_c, out_c, 3, false);
    add_batch_norm(sub_name(b, j) + "/bn1", out_c);
    add_conv(rng, sub_name(b, j) + "/conv2", out_c, out_c, 3, false);
    add_batch_norm(sub_name(b, j) + "/bn2", out_c);
  };

  // Block 1: strided stem conv, then the widening conv.
  const int stem = config_.scaled(config_.stem_width);
  const int w1 = config_.block_width(0);
  add_conv(rng, sub_name(1, 1) + "/conv1", 3, stem, 3, false);
  add_batch_norm(sub_name(1, 1) + "/bn1", stem);
  add_conv(rng, sub_name(1, 1) + "/conv2", stem, w1, 3, false);
  add_batch_norm(sub_name(1, 1) + "/bn2", w1);
  for (int j = 2; j <= config_.sub_blocks[0]; ++j) add_pair(1, j, w1, w1);

  int prev = w1;
  for (int b = 2; b <= kMainBlocks; ++b) {
    const int w = config_.block_width(b - 1);
    if (b >= 3) {
      const int edge_in = b == 6 ? prev : config_.block_width(1);
      add_conv(rng, block_name(b) + "/edge", edge_in, w, 1, true);
    }
    for (int j = 1; j <= config_.sub_blocks[static_cast<std::size_t>(b - 1)]; ++j) add_pair(b, j, j == 1 ? prev : w, w);
    add_conv(rng, block_name(b) + "/main", prev, w, 1, true);
    prev = w;
  }

  for (int i = 0; i < kSideOutputs; ++i) add_upsampler(rng, i, config_.block_width(i));

  Tensor<Real> fuse(Shape{1, kSideOutputs, 1, 1}, Real(1) / static_cast<Real>(kSideOutputs));
  if (testing::perturbed("fusion")) fuse[0] *= Real(1.001);
  params_.add("fuse/kernel", std::move(fuse));
  params_.add("fuse/bias", Tensor<Real>(Shape{1, 1, 1, 1}));
}

template <typename Real>
Var DexiNed<Real>::conv(Tape<Real>& tape, Var x, const std::string& prefix, int stride, Padding padding,
                        bool with_bias) {
  Var k = tape.parameter(params_.get(prefix + "/kernel"));
  std::optional<Var> b;
  if (with_bias) b = tape.parameter(params_.get(prefix + "/bias"));
  return conv2d(tape, x, k, b, stride, padding);
}

template <typename Real>
Var DexiNed<Real>::conv_bn(Tape<Real>& tape, Var x, const std::string& prefix, int index, bool activate,
                           BatchNormMode mode) {
  const std::string idx = std::to_string(index);
  const int stride = (prefix == sub_name(1, 1) && index == 1) ? 2 : 1;
  Var y = conv(tape, x, prefix + "/conv" + idx, stride, Padding::Same, false);
  const std::string bn = prefix + "/bn" + idx;
  Var gamma = tape.parameter(params_.get(bn + "/gamma"));
  Var beta = tape.parameter(params_.get(bn + "/beta"));
  y = batch_norm(tape, y, gamma, beta, params_.get(bn + "/running_mean").value,
                 params_.get(bn + "/running_var").value, mode, config_.batch_norm);
  return activate ? relu(tape, y) : y;
}

template <typename Real>
std::array<Var, kSideOutputs> DexiNed<Real>::encode(Tape<Real>& tape, Var padded, BatchNormMode mode) {
  const Shape s = tape.shape(padded);
  if (s.c != 3) fail(ErrorKind::Shape, "encoder expects 3 input channels, got " + s.str());
  if (s.h % 16 != 0 || s.w % 16 != 0 || s.h == 0 || s.w == 0) {
    fail(ErrorKind::Shape, "encoder input " + s.str() + " must have spatial dims divisible by 16");
  }
  std::array<Var, kSideOutputs> features;

  // Each sub-block is a conv pair; the last sub-block of a block ends without ReLU.
  auto run_pairs = [&](int b, Var x, Var edge) {
    const int count = config_.sub_blocks[static_cast<std::size_t>(b - 1)];
    for (int j = 1; j <= count; ++j) {
      const bool last = j == count;
      x = conv_bn(tape, x, sub_name(b, j), 1, true, mode);
      x = conv_bn(tape, x, sub_name(b, j), 2, !last, mode);
      if (edge.valid()) {
        const std::array<Var, 2> pair{x, edge};
        x = average<Real>(tape, pair);
      }
    }
    return x;
  };

  Var x = run_pairs(1, padded, Var{});
  features[0] = x;

  // Block 2 supplies the edge-connection source: its max-pooled output.
  Var block_in = x;
  Var pooled = max_pool(tape, run_pairs(2, block_in, Var{}));
  Var edge_source = pooled;
  x = add(tape, pooled, conv(tape, block_in, block_name(2) + "/main", 2, Padding::Same, true));
  features[1] = x;

  std::array<Var, 3> edge_levels{edge_source, Var{}, Var{}};
  for (int b = 3; b <= kMainBlocks; ++b) {
    block_in = x;
    Var edge_feature;
    if (b == 6) {
      edge_feature = block_in;
    } else {
      const auto level = static_cast<std::size_t>(b - 3);
      for (std::size_t l = 1; l <= level; ++l) {
        if (!edge_levels[l].valid()) edge_levels[l] = max_pool(tape, edge_levels[l - 1]);
      }
      edge_feature = edge_levels[level];
    }
    Var edge = conv(tape, edge_feature, block_name(b) + "/edge", 1, Padding::Same, true);
    Var body = run_pairs(b, block_in, edge);
    const bool pools = b <= 4;
    if (pools) body = max_pool(tape, body);
    x = add(tape, body, conv(tape, block_in, block_name(b) + "/main", pools ? 2 : 1, Padding::Same, true));
    features[static_cast<std::size_t>(b - 1)] = x;
  }
  return features;
}

template <typename Real>
Var DexiNed<Real>::upsample(Tape<Real>& tape, int side, Var feature) {
  const auto& plan = plans_.at(static_cast<std::size_t>(side));
  Var x = feature;
  for (std::size_t j = 0; j < plan.stages.size(); ++j) {
    const std::string prefix = stage_name(side, static_cast<int>(j));
    x = relu(tape, conv(tape, x, prefix + "/conv", 1, Padding::Same, true));
    if (config_.variant == UpsampleVariant::Sp) {
      x = pixel_shuffle(tape, conv(tape, x, prefix + "/up", 1, Padding::Same, true), 2);
    } else {
      Var k = tape.parameter(params_.get(prefix + "/up/kernel"));
      Var b = tape.parameter(params_.get(prefix + "/up/bias"));
      x = transpose_conv2d(tape, x, k, b, 2);
    }
  }
  return x;
}

template <typename Real>
TracedOutputs DexiNed<Real>::trace(Tape<Real>& tape, const Tensor<Real>& image, BatchNormMode mode) {
  const Shape s = image.shape();
  if (s.c != 3) fail(ErrorKind::Shape, "forward expects an N x 3 x H x W image, got " + s.str());
  if (s.n < 1 || s.h < 1 || s.w < 1) fail(ErrorKind::Shape, "forward: empty image " + s.str());
  const std::int64_t m = config_.pad_multiple;
  const std::int64_t ph = (s.h + m - 1) / m * m;
  const std::int64_t pw = (s.w + m - 1) / m * m;
  const std::int64_t top = (ph - s.h) / 2;
  const std::int64_t left = (pw - s.w) / 2;

  TracedOutputs out;
  Var input = tape.constant(reflect_pad(image, top, ph - s.h - top, left, pw - s.w - left));
  out.side_features = encode(tape, input, mode);
  for (int i = 0; i < kSideOutputs; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out.logits[idx] = crop(tape, upsample(tape, i, out.side_features[idx]), top, left, s.h, s.w);
  }
  const std::span<const Var> sides(out.logits.data(), kSideOutputs);
  out.logits[kSideOutputs] = conv(tape, concat_channels(tape, sides), "fuse", 1, Padding::Same, true);
  for (std::size_t i = 0; i < out.logits.size(); ++i) out.probabilities[i] = sigmoid(tape, out.logits[i]);
  out.averaged = average<Real>(tape, out.probabilities);
  return out;
}

template <typename Real>
EdgeMapSet<Real> DexiNed<Real>::forward(const Tensor<Real>& image, BatchNormMode mode) {
  Tape<Real> tape;
  const TracedOutputs traced = trace(tape, image, mode);
  EdgeMapSet<Real> maps;
  for (std::size_t i = 0; i < traced.logits.size(); ++i) {
    maps.logits[i] = tape.value(traced.logits[i]);
    maps.probabilities[i] = tape.value(traced.probabilities[i]);
  }
  maps.probabilities[kSupervisedOutputs] = tape.value(traced.averaged);
  return maps;
}

template class DexiNed<float>;
template class DexiNed<double>;

}  // namespace dexined
