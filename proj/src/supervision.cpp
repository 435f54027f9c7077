#include "dexined/supervision.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace dexined {

GroundTruthMap::GroundTruthMap(std::int64_t height, std::int64_t width, std::vector<std::uint8_t> mask)
    : height_(height), width_(width), mask_(std::move(mask)) {
  if (height < 0 || width < 0 || static_cast<std::int64_t>(mask_.size()) != height * width) {
    fail(ErrorKind::Shape, "ground truth of " + std::to_string(mask_.size()) + " pixels does not match " +
                               std::to_string(height) + "x" + std::to_string(width));
  }
  for (auto v : mask_) {
    if (v > 1) fail(ErrorKind::Argument, "ground truth mask must be binary");
    positives_ += v;
  }
}

ClassBalance class_balance(const GroundTruthMap& gt) {
  const std::int64_t total = gt.positives() + gt.negatives();
  if (total == 0) fail(ErrorKind::Argument, "class_balance: empty ground truth map");
  ClassBalance cb;
  cb.beta = static_cast<double>(gt.negatives()) / static_cast<double>(total);
  cb.one_minus_beta = 1.0 - cb.beta;
  return cb;
}

void SupervisionConfig::validate() const {
  if (deltas.size() != static_cast<std::size_t>(kSupervisedOutputs)) {
    fail(ErrorKind::Config, "supervision needs " + std::to_string(kSupervisedOutputs) + " delta weights, got " +
                                std::to_string(deltas.size()));
  }
  bool any = false;
  for (double d : deltas) {
    if (!(d >= 0) || !std::isfinite(d)) fail(ErrorKind::Config, "delta weights must be finite and >= 0");
    any = any || d > 0;
  }
  if (!any) fail(ErrorKind::Config, "at least one delta weight must be positive");
}

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

template <typename Real>
Var weighted_bce(Tape<Real>& tape, Var logits, std::span<const GroundTruthMap> gts, bool mean_reduction) {
  const Tensor<Real>& x = tape.value(logits);
  const Shape s = x.shape();
  if (s.c != 1 || static_cast<std::size_t>(s.n) != gts.size()) {
    fail(ErrorKind::Shape, "weighted_bce: logits " + s.str() + " need one channel and " +
                               std::to_string(gts.size()) + " batch entries");
  }
  auto weights = std::make_shared<std::vector<ClassBalance>>();
  auto norms = std::make_shared<std::vector<double>>();
  double loss = 0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    const GroundTruthMap& gt = gts[static_cast<std::size_t>(n)];
    if (gt.height() != s.h || gt.width() != s.w) {
      fail(ErrorKind::Shape, "weighted_bce: ground truth " + std::to_string(gt.height()) + "x" +
                                 std::to_string(gt.width()) + " does not match logits " + s.str());
    }
    const ClassBalance cb = class_balance(gt);
    const double norm = mean_reduction ? 1.0 / static_cast<double>(s.plane()) : 1.0;
    weights->push_back(cb);
    norms->push_back(norm);
    const Real* z = x.plane(n, 0);
    const auto mask = gt.mask();
    double pos = 0;
    double neg = 0;
    for (std::int64_t p = 0; p < s.plane(); ++p) {
      if (mask[static_cast<std::size_t>(p)]) {
        pos += softplus(-static_cast<double>(z[p]));  // -log sigmoid(z)
      } else {
        neg += softplus(static_cast<double>(z[p]));  // -log(1 - sigmoid(z))
      }
    }
    loss += norm * (cb.beta * pos + cb.one_minus_beta * neg);
  }

  std::vector<GroundTruthMap> gt_copy(gts.begin(), gts.end());
  auto held = std::make_shared<std::vector<GroundTruthMap>>(std::move(gt_copy));
  return tape.record(Tensor<Real>(Shape{1, 1, 1, 1}, static_cast<Real>(loss)), {logits},
                     [logits, held, weights, norms, s](Tape<Real>& t, std::size_t self) {
                       const double g = t.grad(Var{self})[0];
                       const Tensor<Real>& xv = t.value(logits);
                       Tensor<Real>& dx = t.grad(logits);
                       for (std::int64_t n = 0; n < s.n; ++n) {
                         const auto ni = static_cast<std::size_t>(n);
                         const ClassBalance cb = (*weights)[ni];
                         const double scale = g * (*norms)[ni];
                         const auto mask = (*held)[ni].mask();
                         const Real* z = xv.plane(n, 0);
                         Real* d = dx.plane(n, 0);
                         for (std::int64_t p = 0; p < s.plane(); ++p) {
                           const double sg = stable_sigmoid(z[p]);
                           const double local = mask[static_cast<std::size_t>(p)] ? -cb.beta * (1.0 - sg)
                                                                                 : cb.one_minus_beta * sg;
                           d[p] += static_cast<Real>(scale * local);
                         }
                       }
                     });
}

template <typename Real>
LossTerms total_loss(Tape<Real>& tape, std::span<const Var> logits, std::span<const GroundTruthMap> gts,
                     const SupervisionConfig& config) {
  config.validate();
  if (logits.size() != config.deltas.size()) {
    fail(ErrorKind::Config, "total_loss: " + std::to_string(logits.size()) + " outputs but " +
                                std::to_string(config.deltas.size()) + " delta weights");
  }
  LossTerms terms;
  std::vector<Var> weighted;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    terms.per_output[i] = weighted_bce(tape, logits[i], gts, config.mean_reduction);
    weighted.push_back(scale(tape, terms.per_output[i], static_cast<Real>(config.deltas[i])));
  }
  Var total = weighted[0];
  for (std::size_t i = 1; i < weighted.size(); ++i) total = add(tape, total, weighted[i]);
  terms.total = total;
  return terms;
}

template Var weighted_bce<float>(Tape<float>&, Var, std::span<const GroundTruthMap>, bool);
template Var weighted_bce<double>(Tape<double>&, Var, std::span<const GroundTruthMap>, bool);
template LossTerms total_loss<float>(Tape<float>&, std::span<const Var>, std::span<const GroundTruthMap>,
                                     const SupervisionConfig&);
template LossTerms total_loss<double>(Tape<double>&, std::span<const Var>, std::span<const GroundTruthMap>,
                                      const SupervisionConfig&);

}  // namespace dexined
