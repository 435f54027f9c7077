#include "dexined/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "dexined/eval.hpp"
#include "dexined/model.hpp"
#include "dexined/supervision.hpp"

namespace dexined {

namespace {

using Build = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double stddev = 1.0) {
  Tensor<double> t(s);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// Largest relative disagreement between reverse-mode and central-difference
// gradients of sum(out * R) with respect to every input.
double gradient_error(const std::vector<Tensor<double>>& inputs, const Build& build, std::mt19937_64& rng) {
  Tensor<double> weights;
  auto evaluate = [&](const std::vector<Tensor<double>>& xs, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.variable(x));
    const Var out = build(tape, vars);
    if (weights.empty()) weights = random_tensor(tape.value(out).shape(), rng);
    const Var loss = sum(tape, mul(tape, out, tape.constant(weights)));
    const double value = tape.value(loss)[0];
    if (grads != nullptr) {
      tape.backward(loss);
      for (Var v : vars) grads->push_back(tape.grad(v));
    }
    return value;
  };

  std::vector<Tensor<double>> analytic;
  evaluate(inputs, &analytic);
  const double h = 1e-4;
  double worst = 0;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double x0 = inputs[t][i];
      probe[t][i] = x0 + h;
      const double fp = evaluate(probe, nullptr);
      probe[t][i] = x0 - h;
      const double fm = evaluate(probe, nullptr);
      probe[t][i] = x0;
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

SelfcheckGroup check_gradients(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::ostringstream detail;
  bool ok = true;
  auto run = [&](const char* name, const std::vector<Tensor<double>>& inputs, const Build& build) {
    const double err = gradient_error(inputs, build, rng);
    if (err >= 1e-4) {
      ok = false;
      detail << name << " rel err " << err << "; ";
    }
  };

  run("conv2d", {random_tensor({2, 3, 6, 5}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({1, 4, 1, 1}, rng)},
      [](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], 1, Padding::Same); });
  run("conv2d_stride2", {random_tensor({1, 2, 7, 6}, rng), random_tensor({3, 2, 3, 3}, rng)},
      [](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], std::nullopt, 2, Padding::Same); });
  run("conv2d_1x1", {random_tensor({1, 4, 3, 3}, rng), random_tensor({2, 4, 1, 1}, rng), random_tensor({1, 2, 1, 1}, rng)},
      [](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], 1, Padding::Same); });
  run("transpose_conv2d", {random_tensor({1, 2, 3, 4}, rng), random_tensor({2, 3, 4, 4}, rng), random_tensor({1, 3, 1, 1}, rng)},
      [](Tape<double>& t, const std::vector<Var>& v) { return transpose_conv2d(t, v[0], v[1], v[2], 2); });
  run("max_pool", {random_tensor({1, 2, 7, 6}, rng)},
      [](Tape<double>& t, const std::vector<Var>& v) { return max_pool(t, v[0]); });
  run("batch_norm", {random_tensor({2, 3, 3, 3}, rng), random_tensor({1, 3, 1, 1}, rng), random_tensor({1, 3, 1, 1}, rng)},
      [](Tape<double>& t, const std::vector<Var>& v) {
        Tensor<double> mean(Shape{1, 3, 1, 1});
        Tensor<double> var(Shape{1, 3, 1, 1}, 1.0);
        return batch_norm(t, v[0], v[1], v[2], mean, var, BatchNormMode::Train, BatchNormOptions{});
      });
  run("relu", {random_tensor({1, 2, 4, 4}, rng)},
      [](Tape<double>& t, const std::vector<Var>& v) { return relu(t, v[0]); });
  run("sigmoid", {random_tensor({1, 2, 4, 4}, rng, 3.0)},
      [](Tape<double>& t, const std::vector<Var>& v) { return sigmoid(t, v[0]); });
  run("pixel_shuffle", {random_tensor({1, 8, 2, 3}, rng)},
      [](Tape<double>& t, const std::vector<Var>& v) { return pixel_shuffle(t, v[0], 2); });

  std::vector<std::uint8_t> mask(2 * 5 * 4);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 5 == 1 || i % 7 == 3) ? 1 : 0;
  std::vector<GroundTruthMap> gts{GroundTruthMap(5, 4, std::vector<std::uint8_t>(mask.begin(), mask.begin() + 20)),
                                  GroundTruthMap(5, 4, std::vector<std::uint8_t>(mask.begin() + 20, mask.end()))};
  run("weighted_bce", {random_tensor({2, 1, 5, 4}, rng, 2.0)}, [&](Tape<double>& t, const std::vector<Var>& v) {
    return weighted_bce(t, v[0], std::span<const GroundTruthMap>(gts));
  });

  return SelfcheckGroup{"gradients", ok, ok ? "all ops within 1e-4" : detail.str(), 0};
}

SelfcheckGroup check_fusion(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto variant : {UpsampleVariant::Bdc, UpsampleVariant::Dc, UpsampleVariant::Sp}) {
    ModelConfig cfg = ModelConfig::toy();
    cfg.variant = variant;
    DexiNed<float> model(cfg, seed);
    Tensor<float> image(Shape{1, 3, 40, 36});
    std::uniform_real_distribution<float> u(-0.5f, 0.5f);
    for (auto& v : image.data()) v = u(rng);
    const EdgeMapSet<float> maps = model.forward(image);
    const Tensor<float>& fused = maps.fused_logits();
    const float w = 1.0f / 6.0f;
    for (std::size_t i = 0; i < fused.size(); ++i) {
      float acc = 0.0f;
      for (int s = 0; s < kSideOutputs; ++s) acc += w * maps.logits[static_cast<std::size_t>(s)][i];
      if (acc != fused[i]) {
        std::ostringstream os;
        os << to_string(variant) << ": fused logit " << fused[i] << " != side mean " << acc << " at " << i;
        return SelfcheckGroup{"fusion_init", false, os.str(), 0};
      }
    }
  }
  return SelfcheckGroup{"fusion_init", true, "fused logits equal the side mean exactly", 0};
}

SelfcheckGroup check_scale_plan(std::uint64_t seed) {
  for (int s : kSideScales) {
    const ScalePlan plan = plan_upsampling(s);
    const int expected = static_cast<int>(std::lround(std::log2(s))) - 1;
    if (plan.sub_block2_count() != expected || plan.stages.size() != static_cast<std::size_t>(expected + 1) ||
        plan.stages.back() != UpsampleStage::SubBlock1) {
      return SelfcheckGroup{"scale_plan", false, "scale " + std::to_string(s) + " has a wrong stage layout", 0};
    }
  }
  DexiNed<float> model(ModelConfig::toy(), seed);
  const Tensor<float> image(Shape{1, 3, 35, 29});
  const EdgeMapSet<float> maps = model.forward(image);
  for (const auto& p : maps.probabilities) {
    if (p.shape() != Shape{1, 1, 35, 29}) {
      return SelfcheckGroup{"scale_plan", false, "output map has shape " + p.shape().str(), 0};
    }
  }
  return SelfcheckGroup{"scale_plan", true, "stage counts and output resolution hold", 0};
}

int brute_force_matches(const std::vector<std::pair<int, int>>& pred, const std::vector<std::pair<int, int>>& gt,
                        double radius, std::size_t i, std::vector<bool>& used) {
  if (i == pred.size()) return 0;
  int best = brute_force_matches(pred, gt, radius, i + 1, used);
  for (std::size_t j = 0; j < gt.size(); ++j) {
    if (used[j]) continue;
    const double dx = pred[i].first - gt[j].first;
    const double dy = pred[i].second - gt[j].second;
    if (dx * dx + dy * dy > radius * radius + 1e-9) continue;
    used[j] = true;
    best = std::max(best, 1 + brute_force_matches(pred, gt, radius, i + 1, used));
    used[j] = false;
  }
  return best;
}

SelfcheckGroup check_matcher(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> coord(0, 7);
  std::uniform_int_distribution<int> count(0, 6);
  const double radii[] = {1.0, 1.5, 2.0, 3.0};
  for (int trial = 0; trial < 200; ++trial) {
    BinaryMap pred(8, 8);
    BinaryMap gt(8, 8);
    for (BinaryMap* m : {&pred, &gt}) {
      const int n = count(rng);
      for (int k = 0; k < n; ++k) m->at(coord(rng), coord(rng)) = 1;
    }
    std::vector<std::pair<int, int>> p;
    std::vector<std::pair<int, int>> g;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        if (pred.at(x, y)) p.emplace_back(x, y);
        if (gt.at(x, y)) g.emplace_back(x, y);
      }
    const double r = radii[trial % 4];
    std::vector<bool> used(g.size(), false);
    const int expected = brute_force_matches(p, g, r, 0, used);
    const MatchCounts c = match_edges(pred, gt, r);
    if (c.tp != expected) {
      return SelfcheckGroup{"matcher_oracle", false,
                            "fixture " + std::to_string(trial) + ": matcher found " + std::to_string(c.tp) +
                                ", exhaustive search " + std::to_string(expected),
                            0};
    }
  }
  return SelfcheckGroup{"matcher_oracle", true, "200 fixtures agree with exhaustive search", 0};
}

}  // namespace

std::vector<SelfcheckGroup> run_selfcheck(std::uint64_t seed, const std::function<void(const SelfcheckGroup&)>& on_group) {
  using Check = SelfcheckGroup (*)(std::uint64_t);
  const std::pair<const char*, Check> checks[] = {
      {"gradients", check_gradients},
      {"fusion_init", check_fusion},
      {"scale_plan", check_scale_plan},
      {"matcher_oracle", check_matcher},
  };
  std::vector<SelfcheckGroup> out;
  for (const auto& [name, check] : checks) {
    const auto start = std::chrono::steady_clock::now();
    SelfcheckGroup g;
    try {
      g = check(seed);
    } catch (const std::exception& e) {
      g = SelfcheckGroup{name, false, std::string("threw: ") + e.what(), 0};
    }
    g.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_group) on_group(g);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace dexined
