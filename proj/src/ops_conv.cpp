#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>

#include "dexined/ops.hpp"
#include "gemm.hpp"

namespace dexined {

namespace testing {
namespace {
std::mutex g_perturb_mutex;
std::string g_perturb_op;
std::atomic<bool> g_perturb_active{false};
}  // namespace

void set_perturbation(std::string_view op) {
  std::lock_guard lock(g_perturb_mutex);
  g_perturb_op = std::string(op);
  g_perturb_active = !g_perturb_op.empty();
}

bool perturbed(std::string_view op) {
  if (!g_perturb_active.load(std::memory_order_relaxed)) return false;
  std::lock_guard lock(g_perturb_mutex);
  return g_perturb_op == op;
}
}  // namespace testing

Window same_window(std::int64_t in, std::int64_t kernel, std::int64_t stride) {
  Window w;
  w.out = (in + stride - 1) / stride;
  const std::int64_t total = std::max<std::int64_t>((w.out - 1) * stride + kernel - in, 0);
  w.pad_before = total / 2;
  return w;
}

Window valid_window(std::int64_t in, std::int64_t kernel, std::int64_t stride) {
  Window w;
  w.out = in >= kernel ? (in - kernel) / stride + 1 : 0;
  return w;
}

namespace {

template <typename Real>
void check_bias(const Tensor<Real>& bias, std::int64_t channels, const char* op) {
  if (static_cast<std::int64_t>(bias.size()) != channels) {
    fail(ErrorKind::Shape, std::string(op) + ": bias shape " + bias.shape().str() +
                               " does not provide " + std::to_string(channels) + " channels");
  }
}

struct ConvGeometry {
  std::int64_t in_c, in_h, in_w;
  std::int64_t out_c, kh, kw;
  std::int64_t stride;
  Window wy, wx;
};

// Gathers the strided input samples of a 1x1 conv into [C, oh*ow].
template <typename Real>
void gather_1x1(const Real* image, const ConvGeometry& g, Real* out) {
  for (std::int64_t c = 0; c < g.in_c; ++c) {
    const Real* src = image + c * g.in_h * g.in_w;
    Real* dst = out + c * g.wy.out * g.wx.out;
    for (std::int64_t oy = 0; oy < g.wy.out; ++oy) {
      const std::int64_t iy = oy * g.stride - g.wy.pad_before;
      for (std::int64_t ox = 0; ox < g.wx.out; ++ox) {
        const std::int64_t ix = ox * g.stride - g.wx.pad_before;
        dst[oy * g.wx.out + ox] =
            (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) ? src[iy * g.in_w + ix] : Real(0);
      }
    }
  }
}

template <typename Real>
void scatter_1x1(const Real* cols, const ConvGeometry& g, Real* image) {
  for (std::int64_t c = 0; c < g.in_c; ++c) {
    Real* dst = image + c * g.in_h * g.in_w;
    const Real* src = cols + c * g.wy.out * g.wx.out;
    for (std::int64_t oy = 0; oy < g.wy.out; ++oy) {
      const std::int64_t iy = oy * g.stride - g.wy.pad_before;
      if (iy < 0 || iy >= g.in_h) continue;
      for (std::int64_t ox = 0; ox < g.wx.out; ++ox) {
        const std::int64_t ix = ox * g.stride - g.wx.pad_before;
        if (ix >= 0 && ix < g.in_w) dst[iy * g.in_w + ix] += src[oy * g.wx.out + ox];
      }
    }
  }
}

}  // namespace

template <typename Real>
Var conv2d(Tape<Real>& tape, Var input, Var kernel, std::optional<Var> bias, int stride,
           Padding padding) {
  const Tensor<Real>& x = tape.value(input);
  const Tensor<Real>& k = tape.value(kernel);
  if (stride <= 0) fail(ErrorKind::Argument, "conv2d: stride must be positive, got " + std::to_string(stride));
  if (k.shape().c != x.shape().c) {
    fail(ErrorKind::Shape, "conv2d: kernel " + k.shape().str() + " expects " +
                               std::to_string(k.shape().c) + " input channels but input is " +
                               x.shape().str());
  }
  if (k.shape().h <= 0 || k.shape().w <= 0 || k.shape().n <= 0) {
    fail(ErrorKind::Shape, "conv2d: degenerate kernel " + k.shape().str());
  }

  ConvGeometry g{x.shape().c, x.shape().h, x.shape().w, k.shape().n, k.shape().h, k.shape().w, stride, {}, {}};
  if (padding == Padding::Same) {
    g.wy = same_window(g.in_h, g.kh, stride);
    g.wx = same_window(g.in_w, g.kw, stride);
  } else {
    g.wy = valid_window(g.in_h, g.kh, stride);
    g.wx = valid_window(g.in_w, g.kw, stride);
  }
  if (bias) check_bias(tape.value(*bias), g.out_c, "conv2d");

  const std::int64_t batch = x.shape().n;
  const std::int64_t out_plane = g.wy.out * g.wx.out;
  const std::int64_t kdim = g.in_c * g.kh * g.kw;
  const bool pointwise = g.kh == 1 && g.kw == 1;
  Tensor<Real> out(Shape{batch, g.out_c, g.wy.out, g.wx.out});
  std::vector<Real> cols(static_cast<std::size_t>(kdim * out_plane));
  const Real* kd = k.raw();

  for (std::int64_t n = 0; n < batch; ++n) {
    const Real* image = x.plane(n, 0);
    Real* dst = out.plane(n, 0);
    if (pointwise) {
      const Real* src = image;
      if (g.stride != 1 || g.wy.pad_before != 0 || g.wx.pad_before != 0 || out_plane != g.in_h * g.in_w) {
        gather_1x1(image, g, cols.data());
        src = cols.data();
      }
      // Direct accumulation: bias first, then channels in order.
      for (std::int64_t oc = 0; oc < g.out_c; ++oc) {
        Real* o = dst + oc * out_plane;
        const Real b = bias ? tape.value(*bias)[static_cast<std::size_t>(oc)] : Real(0);
        for (std::int64_t p = 0; p < out_plane; ++p) o[p] = b;
        for (std::int64_t ic = 0; ic < g.in_c; ++ic) {
          const Real w = kd[oc * g.in_c + ic];
          const Real* s = src + ic * out_plane;
          for (std::int64_t p = 0; p < out_plane; ++p) o[p] += w * s[p];
        }
      }
      continue;
    }
    detail::im2col(image, g.in_c, g.in_h, g.in_w, g.kh, g.kw, g.stride, g.wy.pad_before,
                   g.wx.pad_before, g.wy.out, g.wx.out, cols.data());
    detail::gemm(false, false, g.out_c, out_plane, kdim, Real(1), kd, kdim, cols.data(), out_plane,
                 Real(0), dst, out_plane);
    if (bias) {
      const Tensor<Real>& b = tape.value(*bias);
      for (std::int64_t oc = 0; oc < g.out_c; ++oc) {
        Real* o = dst + oc * out_plane;
        const Real bv = b[static_cast<std::size_t>(oc)];
        for (std::int64_t p = 0; p < out_plane; ++p) o[p] += bv;
      }
    }
  }

  std::vector<Var> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  const Var bias_var = bias.value_or(Var{});
  return tape.record(
      std::move(out), inputs, [input, kernel, bias_var, g](Tape<Real>& t, std::size_t self) {
        const Tensor<Real>& dy = t.grad(Var{self});
        const Tensor<Real>& xv = t.value(input);
        const Tensor<Real>& kv = t.value(kernel);
        const std::int64_t batch = xv.shape().n;
        const std::int64_t out_plane = g.wy.out * g.wx.out;
        const std::int64_t kdim = g.in_c * g.kh * g.kw;
        const bool pointwise = g.kh == 1 && g.kw == 1;
        const bool need_x = t.requires_grad(input);
        const bool need_k = t.requires_grad(kernel);
        std::vector<Real> cols(static_cast<std::size_t>(kdim * out_plane));
        std::vector<Real> dcols(need_x ? cols.size() : 0);
        std::vector<Real> dk(need_k ? static_cast<std::size_t>(g.out_c * kdim) : 0, Real(0));

        if (bias_var.valid() && t.requires_grad(bias_var)) {
          Tensor<Real>& db = t.grad(bias_var);
          for (std::int64_t n = 0; n < batch; ++n) {
            for (std::int64_t oc = 0; oc < g.out_c; ++oc) {
              const Real* d = dy.plane(n, oc);
              double acc = 0;
              for (std::int64_t p = 0; p < out_plane; ++p) acc += d[p];
              db[static_cast<std::size_t>(oc)] += static_cast<Real>(acc);
            }
          }
        }
        for (std::int64_t n = 0; n < batch; ++n) {
          const Real* image = xv.plane(n, 0);
          const Real* d = dy.plane(n, 0);
          const bool direct = pointwise && g.stride == 1 && g.wy.pad_before == 0 &&
                              g.wx.pad_before == 0 && out_plane == g.in_h * g.in_w;
          const Real* colsp = image;
          if (need_k) {
            if (!direct) {
              if (pointwise) {
                gather_1x1(image, g, cols.data());
              } else {
                detail::im2col(image, g.in_c, g.in_h, g.in_w, g.kh, g.kw, g.stride, g.wy.pad_before,
                               g.wx.pad_before, g.wy.out, g.wx.out, cols.data());
              }
              colsp = cols.data();
            }
            detail::gemm(false, true, g.out_c, kdim, out_plane, Real(1), d, out_plane, colsp,
                         out_plane, Real(1), dk.data(), kdim);
          }
          if (need_x) {
            Real* dx = t.grad(input).plane(n, 0);
            if (direct) {
              detail::gemm(true, false, kdim, out_plane, g.out_c, Real(1), kv.raw(), kdim, d,
                           out_plane, Real(1), dx, out_plane);
              continue;
            }
            detail::gemm(true, false, kdim, out_plane, g.out_c, Real(1), kv.raw(), kdim, d, out_plane,
                         Real(0), dcols.data(), out_plane);
            if (pointwise) {
              scatter_1x1(dcols.data(), g, dx);
            } else {
              detail::col2im(dcols.data(), g.in_c, g.in_h, g.in_w, g.kh, g.kw, g.stride,
                             g.wy.pad_before, g.wx.pad_before, g.wy.out, g.wx.out, dx);
            }
          }
        }
        if (need_k) {
          if (testing::perturbed("conv2d")) {
            for (Real& v : dk) v *= Real(1.05);
          }
          Tensor<Real>& gk = t.grad(kernel);
          for (std::size_t i = 0; i < dk.size(); ++i) gk[i] += dk[i];
        }
      });
}

template <typename Real>
Var transpose_conv2d(Tape<Real>& tape, Var input, Var kernel, std::optional<Var> bias, int stride) {
  const Tensor<Real>& x = tape.value(input);
  const Tensor<Real>& k = tape.value(kernel);
  if (stride < 2) {
    fail(ErrorKind::Argument, "transpose_conv2d: stride must be >= 2, got " + std::to_string(stride));
  }
  if (k.shape().n != x.shape().c) {
    fail(ErrorKind::Shape, "transpose_conv2d: kernel " + k.shape().str() + " expects " +
                               std::to_string(k.shape().n) + " input channels but input is " +
                               x.shape().str());
  }
  const std::int64_t ks = k.shape().h;
  if (k.shape().w != ks || ks < stride || (ks - stride) % 2 != 0) {
    fail(ErrorKind::Argument, "transpose_conv2d: kernel " + k.shape().str() +
                                  " must be square with size >= stride and (size - stride) even");
  }
  const std::int64_t in_c = x.shape().c;
  const std::int64_t out_c = k.shape().c;
  const std::int64_t in_h = x.shape().h;
  const std::int64_t in_w = x.shape().w;
  const std::int64_t out_h = in_h * stride;
  const std::int64_t out_w = in_w * stride;
  const std::int64_t pad = (ks - stride) / 2;
  if (bias) check_bias(tape.value(*bias), out_c, "transpose_conv2d");

  const std::int64_t batch = x.shape().n;
  const std::int64_t in_plane = in_h * in_w;
  const std::int64_t rows = out_c * ks * ks;
  Tensor<Real> out(Shape{batch, out_c, out_h, out_w});
  std::vector<Real> cols(static_cast<std::size_t>(rows * in_plane));
  for (std::int64_t n = 0; n < batch; ++n) {
    detail::gemm(true, false, rows, in_plane, in_c, Real(1), k.raw(), rows, x.plane(n, 0), in_plane,
                 Real(0), cols.data(), in_plane);
    Real* dst = out.plane(n, 0);
    if (bias) {
      const Tensor<Real>& b = tape.value(*bias);
      for (std::int64_t oc = 0; oc < out_c; ++oc) {
        std::fill(dst + oc * out_h * out_w, dst + (oc + 1) * out_h * out_w, b[static_cast<std::size_t>(oc)]);
      }
    }
    detail::col2im(cols.data(), out_c, out_h, out_w, ks, ks, stride, pad, pad, in_h, in_w, dst);
  }

  std::vector<Var> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  const Var bias_var = bias.value_or(Var{});
  return tape.record(std::move(out), inputs,
                     [=](Tape<Real>& t, std::size_t self) {
                       const Tensor<Real>& dy = t.grad(Var{self});
                       const Tensor<Real>& xv = t.value(input);
                       const Tensor<Real>& kv = t.value(kernel);
                       const bool need_x = t.requires_grad(input);
                       const bool need_k = t.requires_grad(kernel);
                       std::vector<Real> dcols(static_cast<std::size_t>(rows * in_plane));
                       std::vector<Real> dk(need_k ? static_cast<std::size_t>(in_c * rows) : 0, Real(0));
                       for (std::int64_t n = 0; n < batch; ++n) {
                         detail::im2col(dy.plane(n, 0), out_c, out_h, out_w, ks, ks, stride, pad, pad,
                                        in_h, in_w, dcols.data());
                         if (need_x) {
                           detail::gemm(false, false, in_c, in_plane, rows, Real(1), kv.raw(), rows,
                                        dcols.data(), in_plane, Real(1), t.grad(input).plane(n, 0),
                                        in_plane);
                         }
                         if (need_k) {
                           detail::gemm(false, true, in_c, rows, in_plane, Real(1), xv.plane(n, 0),
                                        in_plane, dcols.data(), in_plane, Real(1), dk.data(), rows);
                         }
                       }
                       if (need_k) {
                         Tensor<Real>& gk = t.grad(kernel);
                         for (std::size_t i = 0; i < dk.size(); ++i) gk[i] += dk[i];
                       }
                       if (bias_var.valid() && t.requires_grad(bias_var)) {
                         Tensor<Real>& db = t.grad(bias_var);
                         for (std::int64_t n = 0; n < batch; ++n) {
                           for (std::int64_t oc = 0; oc < out_c; ++oc) {
                             const Real* d = dy.plane(n, oc);
                             double acc = 0;
                             for (std::int64_t p = 0; p < out_h * out_w; ++p) acc += d[p];
                             db[static_cast<std::size_t>(oc)] += static_cast<Real>(acc);
                           }
                         }
                       }
                     });
}

std::vector<double> bilinear_weights(int size) {
  if (size < 2) fail(ErrorKind::Argument, "bilinear_kernel: size must be >= 2, got " + std::to_string(size));
  const double f = std::ceil(size / 2.0);
  const double center = (size - 1) / (2.0 * f);
  std::vector<double> w(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) w[static_cast<std::size_t>(i)] = 1.0 - std::abs(i / f - center);
  return w;
}

template <typename Real>
Tensor<Real> bilinear_kernel(int size, int channels) {
  if (channels <= 0) fail(ErrorKind::Argument, "bilinear_kernel: channels must be positive");
  const auto w = bilinear_weights(size);
  Tensor<Real> k(Shape{channels, channels, size, size});
  for (int c = 0; c < channels; ++c) {
    for (int i = 0; i < size; ++i) {
      for (int j = 0; j < size; ++j) {
        k.at(c, c, i, j) = static_cast<Real>(w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(j)]);
      }
    }
  }
  return k;
}

#define DEXINED_INSTANTIATE(Real)                                                              \
  template Var conv2d<Real>(Tape<Real>&, Var, Var, std::optional<Var>, int, Padding);         \
  template Var transpose_conv2d<Real>(Tape<Real>&, Var, Var, std::optional<Var>, int);        \
  template Tensor<Real> bilinear_kernel<Real>(int, int);

DEXINED_INSTANTIATE(float)
DEXINED_INSTANTIATE(double)
#undef DEXINED_INSTANTIATE

}  // namespace dexined
