#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "dexined/ops.hpp"

namespace dexined {

template <typename Real>
Var max_pool(Tape<Real>& tape, Var input, int window, int stride) {
  if (window <= 0 || stride <= 0) fail(ErrorKind::Argument, "max_pool: window and stride must be positive");
  const Tensor<Real>& x = tape.value(input);
  const Shape s = x.shape();
  if (s.h < 1 || s.w < 1) fail(ErrorKind::Shape, "max_pool: empty spatial extent " + s.str());
  const Window wy = same_window(s.h, window, stride);
  const Window wx = same_window(s.w, window, stride);
  Tensor<Real> out(Shape{s.n, s.c, wy.out, wx.out});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(out.size()));

  std::size_t o = 0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const Real* src = x.plane(n, c);
      for (std::int64_t oy = 0; oy < wy.out; ++oy) {
        for (std::int64_t ox = 0; ox < wx.out; ++ox, ++o) {
          Real best = -std::numeric_limits<Real>::infinity();
          std::int32_t best_idx = -1;
          for (std::int64_t ky = 0; ky < window; ++ky) {
            const std::int64_t iy = oy * stride - wy.pad_before + ky;
            if (iy < 0 || iy >= s.h) continue;
            for (std::int64_t kx = 0; kx < window; ++kx) {
              const std::int64_t ix = ox * stride - wx.pad_before + kx;
              if (ix < 0 || ix >= s.w) continue;
              const Real v = src[iy * s.w + ix];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = static_cast<std::int32_t>(iy * s.w + ix);
              }
            }
          }
          out[o] = best;
          (*argmax)[o] = best_idx;
        }
      }
    }
  }

  const std::int64_t out_plane = wy.out * wx.out;
  return tape.record(std::move(out), {input}, [input, argmax, s, out_plane](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& dy = t.grad(Var{self});
    Tensor<Real>& dx = t.grad(input);
    std::size_t o = 0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        Real* d = dx.plane(n, c);
        for (std::int64_t p = 0; p < out_plane; ++p, ++o) d[(*argmax)[o]] += dy[o];
      }
    }
  });
}

template <typename Real>
Var batch_norm(Tape<Real>& tape, Var input, Var gamma, Var beta, Tensor<Real>& running_mean,
               Tensor<Real>& running_var, BatchNormMode mode, const BatchNormOptions& options) {
  const Tensor<Real>& x = tape.value(input);
  const Shape s = x.shape();
  const std::int64_t count = s.n * s.h * s.w;
  if (count == 0) fail(ErrorKind::Argument, "batch_norm: zero-size batch " + s.str());
  const auto channels = static_cast<std::size_t>(s.c);
  if (tape.value(gamma).size() != channels || tape.value(beta).size() != channels ||
      running_mean.size() != channels || running_var.size() != channels) {
    fail(ErrorKind::Shape, "batch_norm: gamma/beta/running stats must have " + std::to_string(s.c) +
                               " entries for input " + s.str());
  }

  const Tensor<Real>& g = tape.value(gamma);
  const Tensor<Real>& b = tape.value(beta);
  auto xhat = std::make_shared<Tensor<Real>>(s);
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  Tensor<Real> out(s);
  const std::int64_t plane = s.plane();

  for (std::int64_t c = 0; c < s.c; ++c) {
    double mean = 0;
    double var = 0;
    if (mode == BatchNormMode::Train) {
      for (std::int64_t n = 0; n < s.n; ++n) {
        const Real* src = x.plane(n, c);
        for (std::int64_t p = 0; p < plane; ++p) mean += src[p];
      }
      mean /= static_cast<double>(count);
      for (std::int64_t n = 0; n < s.n; ++n) {
        const Real* src = x.plane(n, c);
        for (std::int64_t p = 0; p < plane; ++p) {
          const double d = src[p] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      const auto ci = static_cast<std::size_t>(c);
      running_mean[ci] = static_cast<Real>(options.momentum * running_mean[ci] + (1 - options.momentum) * mean);
      running_var[ci] = static_cast<Real>(options.momentum * running_var[ci] + (1 - options.momentum) * unbiased);
    } else {
      mean = running_mean[static_cast<std::size_t>(c)];
      var = running_var[static_cast<std::size_t>(c)];
    }
    const double istd = 1.0 / std::sqrt(var + options.epsilon);
    (*inv_std)[static_cast<std::size_t>(c)] = istd;
    const Real gc = g[static_cast<std::size_t>(c)];
    const Real bc = b[static_cast<std::size_t>(c)];
    for (std::int64_t n = 0; n < s.n; ++n) {
      const Real* src = x.plane(n, c);
      Real* xh = xhat->plane(n, c);
      Real* dst = out.plane(n, c);
      for (std::int64_t p = 0; p < plane; ++p) {
        xh[p] = static_cast<Real>((src[p] - mean) * istd);
        dst[p] = gc * xh[p] + bc;
      }
    }
  }

  return tape.record(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, xhat, inv_std, mode, s, count](Tape<Real>& t, std::size_t self) {
        const Tensor<Real>& dy = t.grad(Var{self});
        const Tensor<Real>& gv = t.value(gamma);
        const std::int64_t plane = s.plane();
        for (std::int64_t c = 0; c < s.c; ++c) {
          const auto ci = static_cast<std::size_t>(c);
          double sum_dy = 0;
          double sum_dy_xhat = 0;
          for (std::int64_t n = 0; n < s.n; ++n) {
            const Real* d = dy.plane(n, c);
            const Real* xh = xhat->plane(n, c);
            for (std::int64_t p = 0; p < plane; ++p) {
              sum_dy += d[p];
              sum_dy_xhat += static_cast<double>(d[p]) * xh[p];
            }
          }
          if (t.requires_grad(gamma)) t.grad(gamma)[ci] += static_cast<Real>(sum_dy_xhat);
          if (t.requires_grad(beta)) t.grad(beta)[ci] += static_cast<Real>(sum_dy);
          if (!t.requires_grad(input)) continue;
          const double scale = gv[ci] * (*inv_std)[ci];
          Tensor<Real>& dx = t.grad(input);
          if (mode == BatchNormMode::Infer) {
            for (std::int64_t n = 0; n < s.n; ++n) {
              const Real* d = dy.plane(n, c);
              Real* o = dx.plane(n, c);
              for (std::int64_t p = 0; p < plane; ++p) o[p] += static_cast<Real>(scale * d[p]);
            }
            continue;
          }
          const double m = static_cast<double>(count);
          const double mean_dy = sum_dy / m;
          const double mean_dy_xhat = sum_dy_xhat / m;
          for (std::int64_t n = 0; n < s.n; ++n) {
            const Real* d = dy.plane(n, c);
            const Real* xh = xhat->plane(n, c);
            Real* o = dx.plane(n, c);
            for (std::int64_t p = 0; p < plane; ++p) {
              o[p] += static_cast<Real>(scale * (d[p] - mean_dy - xh[p] * mean_dy_xhat));
            }
          }
        }
      });
}

template <typename Real>
Var relu(Tape<Real>& tape, Var input) {
  const Tensor<Real>& x = tape.value(input);
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > Real(0) ? x[i] : Real(0);
  return tape.record(std::move(out), {input}, [input](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& dy = t.grad(Var{self});
    const Tensor<Real>& xv = t.value(input);
    Tensor<Real>& dx = t.grad(input);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > Real(0)) dx[i] += dy[i];
    }
  });
}

template <typename Real>
Var sigmoid(Tape<Real>& tape, Var input) {
  const Tensor<Real>& x = tape.value(input);
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real v = x[i];
    if (v >= Real(0)) {
      out[i] = Real(1) / (Real(1) + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      out[i] = e / (Real(1) + e);
    }
  }
  return tape.record(std::move(out), {input}, [input](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& dy = t.grad(Var{self});
    const Tensor<Real>& y = t.value(Var{self});
    Tensor<Real>& dx = t.grad(input);
    const Real bump = testing::perturbed("sigmoid") ? Real(1.05) : Real(1);
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += bump * dy[i] * y[i] * (Real(1) - y[i]);
  });
}

template <typename Real>
Var activation(Tape<Real>& tape, Var input, Activation kind) {
  return kind == Activation::Relu ? relu(tape, input) : sigmoid(tape, input);
}

template <typename Real>
Var pixel_shuffle(Tape<Real>& tape, Var input, int r) {
  if (r <= 0) fail(ErrorKind::Argument, "pixel_shuffle: factor must be positive");
  const Tensor<Real>& x = tape.value(input);
  const Shape s = x.shape();
  const std::int64_t rr = static_cast<std::int64_t>(r) * r;
  if (s.c % rr != 0) {
    fail(ErrorKind::Shape, "pixel_shuffle: " + std::to_string(s.c) + " channels not divisible by " +
                               std::to_string(rr) + " for input " + s.str());
  }
  const Shape os{s.n, s.c / rr, s.h * r, s.w * r};
  Tensor<Real> out(os);
  // out[n, c, y*r + i, x*r + j] = in[n, c*r*r + i*r + j, y, x]
  auto index_pair = [s, os, r](std::int64_t n, std::int64_t c, std::int64_t i, std::int64_t j,
                               std::int64_t y, std::int64_t xx) {
    const std::int64_t src = ((n * s.c + c * r * r + i * r + j) * s.h + y) * s.w + xx;
    const std::int64_t dst = ((n * os.c + c) * os.h + y * r + i) * os.w + xx * r + j;
    return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(src), static_cast<std::size_t>(dst));
  };
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < os.c; ++c)
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < r; ++j)
          for (std::int64_t y = 0; y < s.h; ++y)
            for (std::int64_t xx = 0; xx < s.w; ++xx) {
              auto [src, dst] = index_pair(n, c, i, j, y, xx);
              out[dst] = x[src];
            }
  return tape.record(std::move(out), {input}, [input, index_pair, s, os, r](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& dy = t.grad(Var{self});
    Tensor<Real>& dx = t.grad(input);
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < os.c; ++c)
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < r; ++j)
            for (std::int64_t y = 0; y < s.h; ++y)
              for (std::int64_t xx = 0; xx < s.w; ++xx) {
                auto [src, dst] = index_pair(n, c, i, j, y, xx);
                dx[src] += dy[dst];
              }
  });
}

template <typename Real>
Tensor<Real> pixel_unshuffle(const Tensor<Real>& x, int r) {
  const Shape s = x.shape();
  if (r <= 0 || s.h % r != 0 || s.w % r != 0) {
    fail(ErrorKind::Shape, "pixel_unshuffle: spatial extent of " + s.str() + " not divisible by " + std::to_string(r));
  }
  const Shape os{s.n, s.c * r * r, s.h / r, s.w / r};
  Tensor<Real> out(os);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < r; ++j)
          for (std::int64_t y = 0; y < os.h; ++y)
            for (std::int64_t xx = 0; xx < os.w; ++xx)
              out.at(n, c * r * r + i * r + j, y, xx) = x.at(n, c, y * r + i, xx * r + j);
  return out;
}

template <typename Real>
Var add(Tape<Real>& tape, Var a, Var b) {
  const Tensor<Real>& x = tape.value(a);
  const Tensor<Real>& y = tape.value(b);
  require_same_shape(x.shape(), y.shape(), "add");
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& dy = t.grad(Var{self});
    if (t.requires_grad(a)) t.grad(a).add_(dy);
    if (t.requires_grad(b)) t.grad(b).add_(dy);
  });
}

template <typename Real>
Var mul(Tape<Real>& tape, Var a, Var b) {
  const Tensor<Real>& x = tape.value(a);
  const Tensor<Real>& y = tape.value(b);
  require_same_shape(x.shape(), y.shape(), "mul");
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& dy = t.grad(Var{self});
    const Tensor<Real>& xv = t.value(a);
    const Tensor<Real>& yv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<Real>& da = t.grad(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * yv[i];
    }
    if (t.requires_grad(b)) {
      Tensor<Real>& db = t.grad(b);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * xv[i];
    }
  });
}

template <typename Real>
Var scale(Tape<Real>& tape, Var a, Real factor) {
  const Tensor<Real>& x = tape.value(a);
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return tape.record(std::move(out), {a}, [a, factor](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& dy = t.grad(Var{self});
    Tensor<Real>& da = t.grad(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * factor;
  });
}

template <typename Real>
Var average(Tape<Real>& tape, std::span<const Var> inputs) {
  if (inputs.empty()) fail(ErrorKind::Argument, "average: empty input list");
  const Shape s = tape.value(inputs[0]).shape();
  for (Var v : inputs) require_same_shape(s, tape.value(v).shape(), "average");
  const Real inv = Real(1) / static_cast<Real>(inputs.size());
  Tensor<Real> out(s);
  for (Var v : inputs) {
    const Tensor<Real>& x = tape.value(v);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += inv * x[i];
  }
  std::vector<Var> list(inputs.begin(), inputs.end());
  return tape.record(std::move(out), list, [list, inv](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& dy = t.grad(Var{self});
    for (Var v : list) {
      if (!t.requires_grad(v)) continue;
      Tensor<Real>& d = t.grad(v);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += inv * dy[i];
    }
  });
}

template <typename Real>
Var concat_channels(Tape<Real>& tape, std::span<const Var> inputs) {
  if (inputs.empty()) fail(ErrorKind::Argument, "concat_channels: empty input list");
  Shape s = tape.value(inputs[0]).shape();
  std::int64_t channels = 0;
  for (Var v : inputs) {
    const Shape vs = tape.value(v).shape();
    if (vs.n != s.n || vs.h != s.h || vs.w != s.w) {
      fail(ErrorKind::Shape, "concat_channels: incompatible shapes " + s.str() + " and " + vs.str());
    }
    channels += vs.c;
  }
  const Shape os{s.n, channels, s.h, s.w};
  Tensor<Real> out(os);
  const std::int64_t plane = s.plane();
  std::int64_t base = 0;
  for (Var v : inputs) {
    const Tensor<Real>& x = tape.value(v);
    for (std::int64_t n = 0; n < s.n; ++n) {
      std::copy(x.plane(n, 0), x.plane(n, 0) + x.shape().c * plane, out.plane(n, base));
    }
    base += x.shape().c;
  }
  std::vector<Var> list(inputs.begin(), inputs.end());
  return tape.record(std::move(out), list, [list, plane](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& dy = t.grad(Var{self});
    std::int64_t base = 0;
    for (Var v : list) {
      const std::int64_t c = t.value(v).shape().c;
      if (t.requires_grad(v)) {
        Tensor<Real>& d = t.grad(v);
        for (std::int64_t n = 0; n < dy.shape().n; ++n) {
          const Real* src = dy.plane(n, base);
          Real* dst = d.plane(n, 0);
          for (std::int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
      }
      base += c;
    }
  });
}

template <typename Real>
Var crop(Tape<Real>& tape, Var input, std::int64_t top, std::int64_t left, std::int64_t height,
         std::int64_t width) {
  const Tensor<Real>& x = tape.value(input);
  const Shape s = x.shape();
  if (top < 0 || left < 0 || height < 0 || width < 0 || top + height > s.h || left + width > s.w) {
    fail(ErrorKind::Shape, "crop: window (" + std::to_string(top) + "," + std::to_string(left) + ") " +
                               std::to_string(height) + "x" + std::to_string(width) + " exceeds " + s.str());
  }
  Tensor<Real> out(Shape{s.n, s.c, height, width});
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t y = 0; y < height; ++y) {
        const Real* src = x.plane(n, c) + (top + y) * s.w + left;
        std::copy(src, src + width, out.plane(n, c) + y * width);
      }
  return tape.record(std::move(out), {input}, [=](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& dy = t.grad(Var{self});
    Tensor<Real>& dx = t.grad(input);
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t y = 0; y < height; ++y) {
          const Real* src = dy.plane(n, c) + y * width;
          Real* dst = dx.plane(n, c) + (top + y) * s.w + left;
          for (std::int64_t xx = 0; xx < width; ++xx) dst[xx] += src[xx];
        }
  });
}

template <typename Real>
Var sum(Tape<Real>& tape, Var input) {
  const Tensor<Real>& x = tape.value(input);
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  Tensor<Real> out(Shape{1, 1, 1, 1}, static_cast<Real>(acc));
  return tape.record(std::move(out), {input}, [input](Tape<Real>& t, std::size_t self) {
    const Real g = t.grad(Var{self})[0];
    Tensor<Real>& dx = t.grad(input);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

namespace {
std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  std::int64_t m = i % period;
  if (m < 0) m += period;
  return m >= n ? period - m : m;
}
}  // namespace

template <typename Real>
Tensor<Real> reflect_pad(const Tensor<Real>& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
                         std::int64_t right) {
  const Shape s = x.shape();
  if (top < 0 || bottom < 0 || left < 0 || right < 0) fail(ErrorKind::Argument, "reflect_pad: negative padding");
  if ((s.h == 0 && top + bottom > 0) || (s.w == 0 && left + right > 0)) {
    fail(ErrorKind::Shape, "reflect_pad: cannot pad empty extent " + s.str());
  }
  const Shape os{s.n, s.c, s.h + top + bottom, s.w + left + right};
  Tensor<Real> out(os);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const Real* src = x.plane(n, c);
      Real* dst = out.plane(n, c);
      for (std::int64_t y = 0; y < os.h; ++y) {
        const std::int64_t sy = reflect_index(y - top, s.h);
        for (std::int64_t xx = 0; xx < os.w; ++xx) {
          dst[y * os.w + xx] = src[sy * s.w + reflect_index(xx - left, s.w)];
        }
      }
    }
  return out;
}

#define DEXINED_INSTANTIATE(Real)                                                                       \
  template Var max_pool<Real>(Tape<Real>&, Var, int, int);                                               \
  template Var batch_norm<Real>(Tape<Real>&, Var, Var, Var, Tensor<Real>&, Tensor<Real>&, BatchNormMode, \
                                const BatchNormOptions&);                                                \
  template Var relu<Real>(Tape<Real>&, Var);                                                             \
  template Var sigmoid<Real>(Tape<Real>&, Var);                                                          \
  template Var activation<Real>(Tape<Real>&, Var, Activation);                                           \
  template Var pixel_shuffle<Real>(Tape<Real>&, Var, int);                                               \
  template Tensor<Real> pixel_unshuffle<Real>(const Tensor<Real>&, int);                                 \
  template Var add<Real>(Tape<Real>&, Var, Var);                                                         \
  template Var mul<Real>(Tape<Real>&, Var, Var);                                                         \
  template Var scale<Real>(Tape<Real>&, Var, Real);                                                      \
  template Var average<Real>(Tape<Real>&, std::span<const Var>);                                         \
  template Var concat_channels<Real>(Tape<Real>&, std::span<const Var>);                                 \
  template Var crop<Real>(Tape<Real>&, Var, std::int64_t, std::int64_t, std::int64_t, std::int64_t);     \
  template Var sum<Real>(Tape<Real>&, Var);                                                              \
  template Tensor<Real> reflect_pad<Real>(const Tensor<Real>&, std::int64_t, std::int64_t, std::int64_t, \
                                          std::int64_t);

DEXINED_INSTANTIATE(float)
DEXINED_INSTANTIATE(double)
#undef DEXINED_INSTANTIATE

}  // namespace dexined
