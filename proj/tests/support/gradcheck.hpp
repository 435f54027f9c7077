#pragma once

// Reverse-mode vs central-difference comparison for tape-built functions.

#include <functional>
#include <random>
#include <vector>

#include "../oracles/finite_diff.hpp"
#include "dexined/ops.hpp"

namespace gradcheck {

using dexined::Shape;
using dexined::Tape;
using dexined::Tensor;
using dexined::Var;

using Build = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline Tensor<double> randn(Shape s, std::mt19937_64& rng, double stddev = 1.0) {
  Tensor<double> t(s);
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Projects the output onto fixed random weights so every output element
// contributes, then compares d/dinput for every input entry. Returns the
// worst relative error.
inline double check(std::vector<Tensor<double>> inputs, const Build& build, std::uint64_t seed = 7,
                    double step = 1e-4) {
  std::mt19937_64 rng(seed);
  Tensor<double> weights;
  auto loss_of = [&](std::vector<Tensor<double>>& xs, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (auto& x : xs) vars.push_back(tape.variable(x));
    const Var out = build(tape, vars);
    if (weights.empty()) weights = randn(tape.value(out).shape(), rng);
    const Tensor<double>& y = tape.value(out);
    double total = 0;
    for (std::size_t i = 0; i < y.size(); ++i) total += y[i] * weights[i];
    if (grads != nullptr) {
      const Var l = dexined::sum(tape, dexined::mul(tape, out, tape.constant(weights)));
      tape.backward(l);
      for (Var v : vars) grads->push_back(tape.grad(v));
    }
    return total;
  };

  std::vector<Tensor<double>> analytic;
  loss_of(inputs, &analytic);
  double worst = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double numeric =
          oracle::central_difference([&] { return loss_of(inputs, nullptr); }, inputs[t][i], step);
      worst = std::max(worst, oracle::relative_error(analytic[t][i], numeric, 1e-6));
    }
  }
  return worst;
}

}  // namespace gradcheck
