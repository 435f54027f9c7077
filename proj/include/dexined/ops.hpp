#pragma once

#include <optional>
#include <span>
#include <string_view>

#include "dexined/tape.hpp"

namespace dexined {

enum class Padding { Same, Valid };

// Spatial geometry shared by conv2d, max_pool and the transpose conv adjoint.
// SAME padding follows out = ceil(in / stride); the odd pixel of padding goes
// to the bottom/right.
struct Window {
  std::int64_t out = 0;
  std::int64_t pad_before = 0;
};
Window same_window(std::int64_t in, std::int64_t kernel, std::int64_t stride);
Window valid_window(std::int64_t in, std::int64_t kernel, std::int64_t stride);

// Cross-correlation. kernel is [outC, inC, kH, kW]; bias is [1, outC, 1, 1].
template <typename Real>
Var conv2d(Tape<Real>& tape, Var input, Var kernel, std::optional<Var> bias, int stride,
           Padding padding);

// Adjoint of a SAME-padded stride-s conv2d: output spatial = input * stride.
// kernel is [inC, outC, k, k] with k >= stride and (k - stride) even.
template <typename Real>
Var transpose_conv2d(Tape<Real>& tape, Var input, Var kernel, std::optional<Var> bias, int stride);

// Separable bilinear upsampling kernel, [channels, channels, size, size],
// zero off the channel diagonal.
template <typename Real>
Tensor<Real> bilinear_kernel(int size, int channels);

// 1-D bilinear weights for a kernel of `size` taps.
std::vector<double> bilinear_weights(int size);

// 3x3 window, stride 2, SAME. Gradient goes to the first maximum in
// row-major order.
template <typename Real>
Var max_pool(Tape<Real>& tape, Var input, int window = 3, int stride = 2);

enum class BatchNormMode { Train, Infer };

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.99;
};

// gamma/beta are [1, C, 1, 1]. Running stats are updated in train mode as
// running = momentum * running + (1 - momentum) * batch.
template <typename Real>
Var batch_norm(Tape<Real>& tape, Var input, Var gamma, Var beta, Tensor<Real>& running_mean,
               Tensor<Real>& running_var, BatchNormMode mode, const BatchNormOptions& options);

template <typename Real>
Var relu(Tape<Real>& tape, Var input);

template <typename Real>
Var sigmoid(Tape<Real>& tape, Var input);

enum class Activation { Relu, Sigmoid };

template <typename Real>
Var activation(Tape<Real>& tape, Var input, Activation kind);

// [N, C*r*r, H, W] -> [N, C, H*r, W*r]; channel c*r*r + i*r + j lands at
// row offset i, column offset j.
template <typename Real>
Var pixel_shuffle(Tape<Real>& tape, Var input, int r);

template <typename Real>
Tensor<Real> pixel_unshuffle(const Tensor<Real>& input, int r);

template <typename Real>
Var add(Tape<Real>& tape, Var a, Var b);

template <typename Real>
Var mul(Tape<Real>& tape, Var a, Var b);

template <typename Real>
Var scale(Tape<Real>& tape, Var a, Real factor);

// Accumulates (1/k) * x_i in list order.
template <typename Real>
Var average(Tape<Real>& tape, std::span<const Var> inputs);

template <typename Real>
Var concat_channels(Tape<Real>& tape, std::span<const Var> inputs);

template <typename Real>
Var crop(Tape<Real>& tape, Var input, std::int64_t top, std::int64_t left, std::int64_t height,
         std::int64_t width);

// Sum of all elements as a [1,1,1,1] tensor.
template <typename Real>
Var sum(Tape<Real>& tape, Var input);

// Non-differentiable: mirror padding (periodic reflection, edge not repeated).
template <typename Real>
Tensor<Real> reflect_pad(const Tensor<Real>& input, std::int64_t top, std::int64_t bottom,
                         std::int64_t left, std::int64_t right);

namespace testing {
// Selfcheck hook: when set to an op name ("conv2d", "sigmoid", ...), that op's
// backward is deliberately perturbed. Empty string disables.
void set_perturbation(std::string_view op);
bool perturbed(std::string_view op);
}  // namespace testing

}  // namespace dexined
