#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dexined/error.hpp"

namespace dexined {

// Rank-4 NCHW extent.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real* raw() { return data_.data(); }
  const Real* raw() const { return data_.data(); }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + y) * shape_.w + x);
  }
  Real& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[offset(n, c, y, x)];
  }
  Real at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data_[offset(n, c, y, x)];
  }

  // Pointer to the H*W plane of (n, c).
  Real* plane(std::int64_t n, std::int64_t c) { return data_.data() + offset(n, c, 0, 0); }
  const Real* plane(std::int64_t n, std::int64_t c) const {
    return data_.data() + offset(n, c, 0, 0);
  }

  void fill(Real value);
  void add_(const Tensor& other);  // this += other, shapes must match

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
};

// Shape-error helper used by every op.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dexined
