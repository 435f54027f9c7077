#include "dexined/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace dexined {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Argument: return "argument error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Version: return "version error";
    case ErrorKind::Truncated: return "truncated payload";
    case ErrorKind::Integrity: return "integrity error";
    case ErrorKind::Numeric: return "numerical failure";
    case ErrorKind::Training: return "training error";
    case ErrorKind::Augmentation: return "augmentation error";
  }
  return "error";
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
  return os.str();
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    fail(ErrorKind::Shape, "negative extent in shape " + shape.str());
  }
  data_.assign(static_cast<std::size_t>(shape.numel()), fill);
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data) : shape_(shape), data_(std::move(data)) {
  if (static_cast<std::int64_t>(data_.size()) != shape.numel()) {
    fail(ErrorKind::Shape, "data length " + std::to_string(data_.size()) +
                               " does not match shape " + shape.str());
  }
}

template <typename Real>
void Tensor<Real>::fill(Real value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename Real>
void Tensor<Real>::add_(const Tensor& other) {
  require_same_shape(shape_, other.shape_, "add_");
  const Real* src = other.raw();
  Real* dst = raw();
  for (std::size_t i = 0; i < data_.size(); ++i) dst[i] += src[i];
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    fail(ErrorKind::Shape, std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace dexined
