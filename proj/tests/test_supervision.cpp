#include "doctest.h"

#include <cmath>
#include <random>

#include "dexined/supervision.hpp"
#include "support/gradcheck.hpp"

using namespace dexined;

namespace {

GroundTruthMap random_gt(std::int64_t h, std::int64_t w, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w));
  for (auto& v : mask) v = b(rng) ? 1 : 0;
  return GroundTruthMap(h, w, std::move(mask));
}

// Textbook form, straight logs of the sigmoid.
double naive_loss(const Tensor<double>& z, const GroundTruthMap& gt) {
  const double beta = static_cast<double>(gt.negatives()) / static_cast<double>(gt.mask().size());
  double l = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z[i]));
    l += gt.mask()[i] ? -beta * std::log(p) : -(1 - beta) * std::log(1 - p);
  }
  return l;
}

}  // namespace

TEST_CASE("class balance") {
  const GroundTruthMap gt(2, 2, {1, 0, 0, 0});
  const auto cb = class_balance(gt);
  CHECK(cb.beta == 0.75);
  CHECK(cb.one_minus_beta == 0.25);
  CHECK(gt.positives() == 1);
  CHECK_THROWS_AS(GroundTruthMap(2, 2, {1, 0, 0}), Error);
  CHECK_THROWS_AS(GroundTruthMap(1, 1, {2}), Error);
  const std::vector<float> soft{0.2f, 0.7f};
  CHECK(GroundTruthMap::from_values<float>(1, 2, soft).positives() == 1);
}

TEST_CASE("weighted bce matches the direct formula") {
  std::mt19937_64 rng(1);
  const auto z = gradcheck::randn({2, 1, 6, 7}, rng, 2.0);
  const std::vector<GroundTruthMap> gts{random_gt(6, 7, 0.2, 1), random_gt(6, 7, 0.5, 2)};
  Tape<double> tape;
  const Var l = weighted_bce(tape, tape.constant(z), std::span<const GroundTruthMap>(gts));
  Tensor<double> z0(Shape{1, 1, 6, 7}, std::vector<double>(z.raw(), z.raw() + 42));
  Tensor<double> z1(Shape{1, 1, 6, 7}, std::vector<double>(z.raw() + 42, z.raw() + 84));
  CHECK(tape.value(l)[0] == doctest::Approx(naive_loss(z0, gts[0]) + naive_loss(z1, gts[1])).epsilon(1e-12));

  Tape<double> t2;
  const Var m = weighted_bce(t2, t2.constant(z), std::span<const GroundTruthMap>(gts), true);
  CHECK(t2.value(m)[0] == doctest::Approx(tape.value(l)[0] / 42).epsilon(1e-12));
}

TEST_CASE("zero logits give 2 beta (1 - beta) HW log 2") {
  const auto gt = random_gt(9, 11, 0.3, 5);
  const auto cb = class_balance(gt);
  Tape<double> tape;
  const std::vector<GroundTruthMap> gts{gt};
  const Var l = weighted_bce(tape, tape.constant(Tensor<double>(Shape{1, 1, 9, 11})), std::span<const GroundTruthMap>(gts));
  CHECK(tape.value(l)[0] == doctest::Approx(2 * cb.beta * cb.one_minus_beta * 99 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("saturated logits stay finite") {
  const std::vector<GroundTruthMap> gts{GroundTruthMap(1, 2, {1, 0})};
  Tape<float> tape;
  const Var z = tape.variable(Tensor<float>(Shape{1, 1, 1, 2}, std::vector<float>{-200.f, 200.f}));
  const Var l = weighted_bce(tape, z, std::span<const GroundTruthMap>(gts));
  CHECK(std::isfinite(tape.value(l)[0]));
  CHECK(tape.value(l)[0] == doctest::Approx(200.0));
  tape.backward(l);
  CHECK(tape.grad(z)[0] == doctest::Approx(-0.5));
  CHECK(tape.grad(z)[1] == doctest::Approx(0.5));
}

TEST_CASE("weighted bce gradient") {
  std::mt19937_64 rng(2);
  const std::vector<GroundTruthMap> gts{random_gt(5, 4, 0.3, 3)};
  const double err = gradcheck::check({gradcheck::randn({1, 1, 5, 4}, rng, 3.0)},
                                      [&](Tape<double>& t, const std::vector<Var>& v) {
                                        return weighted_bce(t, v[0], std::span<const GroundTruthMap>(gts));
                                      });
  CHECK(err < 1e-6);
}

TEST_CASE("total loss is the delta-weighted sum") {
  std::mt19937_64 rng(3);
  const std::vector<GroundTruthMap> gts{random_gt(4, 4, 0.4, 7)};
  Tape<double> tape;
  std::vector<Var> logits;
  for (int i = 0; i < kSupervisedOutputs; ++i) logits.push_back(tape.constant(gradcheck::randn({1, 1, 4, 4}, rng)));
  SupervisionConfig cfg;
  cfg.deltas = {0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 2.0};
  const auto terms = total_loss(tape, std::span<const Var>(logits), std::span<const GroundTruthMap>(gts), cfg);
  double expected = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) expected += cfg.deltas[i] * tape.value(terms.per_output[i])[0];
  CHECK(tape.value(terms.total)[0] == doctest::Approx(expected).epsilon(1e-14));

  SupervisionConfig bad;
  bad.deltas = {1, 1, 1};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.deltas = std::vector<double>(7, 0.0);
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.deltas = std::vector<double>(7, 1.0);
  bad.deltas[2] = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("shape mismatch between logits and ground truth") {
  const std::vector<GroundTruthMap> gts{GroundTruthMap(2, 2, {0, 0, 0, 1})};
  Tape<double> tape;
  CHECK_THROWS_AS(weighted_bce(tape, tape.constant(Tensor<double>(Shape{1, 1, 3, 2})), std::span<const GroundTruthMap>(gts)),
                  Error);
  CHECK_THROWS_AS(weighted_bce(tape, tape.constant(Tensor<double>(Shape{2, 1, 2, 2})), std::span<const GroundTruthMap>(gts)),
                  Error);
}
