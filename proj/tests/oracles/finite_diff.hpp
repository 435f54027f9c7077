#pragma once

// Central finite differences for scalar functions of a flat parameter vector.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-4) {
  const double x0 = x;
  x = x0 + h;
  const double up = f();
  x = x0 - h;
  const double down = f();
  x = x0;
  return (up - down) / (2 * h);
}

// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero entries from
// turning rounding noise into a large ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace oracle
