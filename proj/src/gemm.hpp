#pragma once

#include <cblas.h>

#include <cstdint>

namespace dexined::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                 float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
                 float beta, float* c, std::int64_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                 double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
                 double beta, double* c, std::int64_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// Output columns [lo, hi) whose input column ox * stride - pad + k lies inside [0, width).
inline void valid_span(std::int64_t out_w, std::int64_t width, std::int64_t stride, std::int64_t pad,
                       std::int64_t k, std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t shift = pad - k;
  lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  const std::int64_t limit = width + shift;  // ox * stride < limit
  hi = limit > 0 ? (limit + stride - 1) / stride : 0;
  if (hi > out_w) hi = out_w;
  if (lo > hi) lo = hi;
}

// Unfolds one [C, H, W] image into [C*kh*kw, oh*ow] patch columns.
template <typename Real>
void im2col(const Real* image, std::int64_t channels, std::int64_t height, std::int64_t width,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad_top,
            std::int64_t pad_left, std::int64_t out_h, std::int64_t out_w, Real* cols) {
  const std::int64_t plane = out_h * out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    const Real* src = image + c * height * width;
    for (std::int64_t ky = 0; ky < kh; ++ky) {
      for (std::int64_t kx = 0; kx < kw; ++kx) {
        Real* dst = cols + ((c * kh + ky) * kw + kx) * plane;
        std::int64_t lo = 0;
        std::int64_t hi = 0;
        valid_span(out_w, width, stride, pad_left, kx, lo, hi);
        const std::int64_t offset = kx - pad_left;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const std::int64_t iy = oy * stride - pad_top + ky;
          Real* row = dst + oy * out_w;
          if (iy < 0 || iy >= height) {
            for (std::int64_t ox = 0; ox < out_w; ++ox) row[ox] = Real(0);
            continue;
          }
          const Real* src_row = src + iy * width + offset;
          for (std::int64_t ox = 0; ox < lo; ++ox) row[ox] = Real(0);
          if (stride == 1) {
            for (std::int64_t ox = lo; ox < hi; ++ox) row[ox] = src_row[ox];
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) row[ox] = src_row[ox * stride];
          }
          for (std::int64_t ox = hi; ox < out_w; ++ox) row[ox] = Real(0);
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates patch columns back into the image.
template <typename Real>
void col2im(const Real* cols, std::int64_t channels, std::int64_t height, std::int64_t width,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad_top,
            std::int64_t pad_left, std::int64_t out_h, std::int64_t out_w, Real* image) {
  const std::int64_t plane = out_h * out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    Real* dst = image + c * height * width;
    for (std::int64_t ky = 0; ky < kh; ++ky) {
      for (std::int64_t kx = 0; kx < kw; ++kx) {
        const Real* src = cols + ((c * kh + ky) * kw + kx) * plane;
        std::int64_t lo = 0;
        std::int64_t hi = 0;
        valid_span(out_w, width, stride, pad_left, kx, lo, hi);
        const std::int64_t offset = kx - pad_left;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const std::int64_t iy = oy * stride - pad_top + ky;
          if (iy < 0 || iy >= height) continue;
          const Real* row = src + oy * out_w;
          Real* dst_row = dst + iy * width + offset;
          if (stride == 1) {
            for (std::int64_t ox = lo; ox < hi; ++ox) dst_row[ox] += row[ox];
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) dst_row[ox * stride] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace dexined::detail
