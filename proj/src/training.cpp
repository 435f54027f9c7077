#include "dexined/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dexined/checkpoint.hpp"

namespace dexined {

namespace fs = std::filesystem;

namespace {

enum class Stream : std::uint32_t { Shuffle = 1, Crop = 2 };

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t counter, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  out << line << '\n';
  if (!out) fail(ErrorKind::Io, "cannot append to " + path.string());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail(ErrorKind::Config, "learning rate must be >= 0");
  if (batch_size < 1) fail(ErrorKind::Config, "batch size must be >= 1");
  if (max_iterations < 0) fail(ErrorKind::Config, "max iterations must be >= 0");
  if (checkpoint_every < 0) fail(ErrorKind::Config, "checkpoint cadence must be >= 0");
  if (crop_size < 16 || crop_size % 16 != 0) fail(ErrorKind::Config, "crop size must be a positive multiple of 16");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) || !(adam.epsilon > 0)) {
    fail(ErrorKind::Config, "Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
  }
  if (!(validation_fraction >= 0 && validation_fraction < 1)) {
    fail(ErrorKind::Config, "validation fraction must be in [0, 1)");
  }
  if (lr_decay && (lr_decay_every < 1 || !(lr_decay_factor > 0))) {
    fail(ErrorKind::Config, "step decay needs a positive period and factor");
  }
}

double TrainConfig::learning_rate_at(std::int64_t step) const {
  if (!lr_decay) return learning_rate;
  return learning_rate * std::pow(lr_decay_factor, static_cast<double>((step - 1) / lr_decay_every));
}

template <typename Real>
void OptimizerState<Real>::initialize(const ParameterStore<Real>& params) {
  names.clear();
  m.clear();
  v.clear();
  for (const auto& p : params) {
    if (!p->trainable) continue;
    names.push_back(p->name);
    m.emplace_back(p->value.shape());
    v.emplace_back(p->value.shape());
  }
  step = 0;
}

template <typename Real>
std::size_t OptimizerState<Real>::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) fail(ErrorKind::Training, "optimizer has no state for parameter " + name);
  return static_cast<std::size_t>(it - names.begin());
}

template <typename Real>
void adam_step(ParameterStore<Real>& params, OptimizerState<Real>& state, double learning_rate,
               const AdamOptions& options) {
  for (const auto& p : params) {
    if (p->trainable && !p->has_grad) fail(ErrorKind::Training, "missing gradient for parameter " + p->name);
  }
  const std::int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(t));
  std::size_t slot = 0;
  for (auto& p : params) {
    if (!p->trainable) continue;
    const std::size_t i = slot < state.names.size() && state.names[slot] == p->name ? slot : state.index_of(p->name);
    ++slot;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.shape() != p->value.shape() || v.shape() != p->value.shape()) {
      fail(ErrorKind::Training, "optimizer state shape mismatch for " + p->name);
    }
    Real* w = p->value.raw();
    Real* g = p->grad.raw();
    Real* mm = m.raw();
    Real* vv = v.raw();
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const double gk = g[k];
      const double m_new = options.beta1 * mm[k] + (1.0 - options.beta1) * gk;
      const double v_new = options.beta2 * vv[k] + (1.0 - options.beta2) * gk * gk;
      mm[k] = static_cast<Real>(m_new);
      vv[k] = static_cast<Real>(v_new);
      const double update = learning_rate * (m_new / bc1) / (std::sqrt(v_new / bc2) + options.epsilon);
      w[k] = static_cast<Real>(w[k] - update);
      g[k] = Real(0);
    }
    p->has_grad = false;
  }
  state.step = t;
}

DatasetSplit split_validation(const DatasetIndex& index, double fraction) {
  std::vector<DatasetEntry> sorted = index.entries;
  std::sort(sorted.begin(), sorted.end(), [](const DatasetEntry& a, const DatasetEntry& b) {
    return std::tie(a.split, a.stem) < std::tie(b.split, b.stem);
  });
  const auto held = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(sorted.size())));
  DatasetSplit split;
  split.train.assign(sorted.begin(), sorted.end() - static_cast<std::ptrdiff_t>(held));
  split.validation.assign(sorted.end() - static_cast<std::ptrdiff_t>(held), sorted.end());
  return split;
}

CropSize effective_crop(const std::vector<ImagePair>& pairs, int crop_size) {
  if (pairs.empty()) fail(ErrorKind::Config, "training dataset is empty");
  int h = crop_size;
  int w = crop_size;
  for (const auto& p : pairs) {
    h = std::min(h, p.image.height);
    w = std::min(w, p.image.width);
  }
  CropSize c{h / 16 * 16, w / 16 * 16};
  if (c.height < 16 || c.width < 16) fail(ErrorKind::Config, "training images must be at least 16x16");
  return c;
}

template <typename Real>
Trainer<Real>::Trainer(DexiNed<Real>& model, std::vector<ImagePair> pairs, TrainConfig config,
                       SupervisionConfig supervision)
    : model_(model),
      pairs_(std::move(pairs)),
      config_(std::move(config)),
      supervision_(std::move(supervision)),
      start_(std::chrono::steady_clock::now()) {
  config_.validate();
  supervision_.validate();
  crop_ = effective_crop(pairs_, config_.crop_size);
  for (const auto& p : pairs_) {
    if (p.image.channels != 3 || p.gt.channels != 1 || p.image.width != p.gt.width ||
        p.image.height != p.gt.height) {
      fail(ErrorKind::Config, "training pairs need an RGB image and a same-size single-channel GT");
    }
  }
  state_.initialize(model_.parameters());
}

template <typename Real>
std::vector<std::size_t> Trainer<Real>::batch_indices(std::int64_t step) const {
  const auto n = static_cast<std::uint64_t>(pairs_.size());
  const auto batch = static_cast<std::uint64_t>(config_.batch_size);
  std::vector<std::size_t> out;
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> perm;
  for (std::uint64_t i = 0; i < batch; ++i) {
    const std::uint64_t pos = static_cast<std::uint64_t>(step - 1) * batch + i;
    const std::uint64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      perm.resize(pairs_.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      auto rng = stream_rng(config_.seed, epoch, Stream::Shuffle);
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

template <typename Real>
StepRecord Trainer<Real>::step() {
  const std::int64_t t = state_.step + 1;
  const auto indices = batch_indices(t);
  const auto b = static_cast<std::int64_t>(indices.size());
  Tensor<Real> batch(Shape{b, 3, crop_.height, crop_.width});
  std::vector<GroundTruthMap> gts;
  auto rng = stream_rng(config_.seed, static_cast<std::uint64_t>(t), Stream::Crop);
  for (std::int64_t n = 0; n < b; ++n) {
    const ImagePair& pair = pairs_[indices[static_cast<std::size_t>(n)]];
    std::uniform_int_distribution<int> dy(0, pair.image.height - crop_.height);
    std::uniform_int_distribution<int> dx(0, pair.image.width - crop_.width);
    const int oy = dy(rng);
    const int ox = dx(rng);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(crop_.height) * crop_.width);
    for (int y = 0; y < crop_.height; ++y) {
      for (int x = 0; x < crop_.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          batch.at(n, c, y, x) = static_cast<Real>(pair.image.at(ox + x, oy + y, c)) - Real(0.5);
        }
        mask[static_cast<std::size_t>(y) * crop_.width + x] = pair.gt.at(ox + x, oy + y) >= 0.5f ? 1 : 0;
      }
    }
    gts.emplace_back(crop_.height, crop_.width, std::move(mask));
  }

  Tape<Real> tape;
  const TracedOutputs out = model_.trace(tape, batch, BatchNormMode::Train);
  const LossTerms loss = total_loss(tape, std::span<const Var>(out.logits), std::span<const GroundTruthMap>(gts),
                                    supervision_);
  StepRecord record;
  record.step = t;
  record.total = static_cast<double>(tape.value(loss.total).raw()[0]);
  for (std::size_t i = 0; i < loss.per_output.size(); ++i) {
    record.per_output[i] = static_cast<double>(tape.value(loss.per_output[i]).raw()[0]);
  }
  if (!std::isfinite(record.total)) {
    std::string ids;
    for (auto i : indices) ids += (ids.empty() ? "" : ",") + std::to_string(i);
    fail(ErrorKind::Numeric, "non-finite loss at iteration " + std::to_string(t) + " (batch pairs " + ids + ")");
  }
  tape.backward(loss.total);
  adam_step(model_.parameters(), state_, config_.learning_rate_at(t), config_.adam);
  record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return record;
}

template <typename Real>
double validation_loss(DexiNed<Real>& model, const std::vector<ImagePair>& pairs,
                       const SupervisionConfig& supervision) {
  if (pairs.empty()) return 0.0;
  double sum = 0;
  for (const auto& pair : pairs) {
    Tape<Real> tape;
    const TracedOutputs out = model.trace(tape, image_to_tensor<Real>(pair.image), BatchNormMode::Infer);
    const GroundTruthMap gt = GroundTruthMap::from_values<float>(pair.gt.height, pair.gt.width, pair.gt.data);
    const LossTerms loss =
        total_loss(tape, std::span<const Var>(out.logits), std::span<const GroundTruthMap>(&gt, 1), supervision);
    sum += static_cast<double>(tape.value(loss.total).raw()[0]);
  }
  return sum / static_cast<double>(pairs.size());
}

std::string loss_log_header() { return "step,total,l1,l2,l3,l4,l5,l6,l7,wall_time"; }

std::string loss_log_row(const StepRecord& r) {
  char buf[64];
  std::string row = std::to_string(r.step);
  std::snprintf(buf, sizeof(buf), ",%.9g", r.total);
  row += buf;
  for (double l : r.per_output) {
    std::snprintf(buf, sizeof(buf), ",%.9g", l);
    row += buf;
  }
  std::snprintf(buf, sizeof(buf), ",%.3f", r.wall_time);
  return row + buf;
}

TrainRunResult run_training(const ModelConfig& model_config, const DatasetIndex& dataset, const TrainConfig& config,
                            const SupervisionConfig& supervision, const TrainRunOptions& options) {
  config.validate();
  supervision.validate();
  const DatasetSplit split = split_validation(dataset, config.validation_fraction);
  if (split.train.empty()) fail(ErrorKind::Config, "training dataset is empty");

  std::unique_ptr<DexiNed<float>> model;
  OptimizerState<float> restored;
  bool resumed = false;
  if (!options.resume_from.empty()) {
    if (!fs::is_regular_file(options.resume_from)) {
      fail(ErrorKind::Config, "resume checkpoint not found: " + options.resume_from.string());
    }
    LoadedCheckpoint<float> ckpt = load_checkpoint<float>(options.resume_from);
    if (!ckpt.has_optimizer) fail(ErrorKind::Config, "checkpoint has no optimizer state to resume from");
    model = std::move(ckpt.model);
    restored = std::move(ckpt.optimizer);
    resumed = true;
  } else {
    model = std::make_unique<DexiNed<float>>(model_config, config.seed);
  }

  std::vector<ImagePair> train_pairs;
  for (const auto& e : split.train) train_pairs.push_back(load_pair(e));
  std::vector<ImagePair> val_pairs;
  for (const auto& e : split.validation) val_pairs.push_back(load_pair(e));

  Trainer<float> trainer(*model, std::move(train_pairs), config, supervision);
  if (resumed) trainer.optimizer() = std::move(restored);

  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (!fs::is_directory(options.out_dir)) fail(ErrorKind::Io, "cannot create " + options.out_dir.string());
  const fs::path log_path = options.out_dir / "loss_log.csv";
  const fs::path val_path = options.out_dir / "validation.csv";
  if (!resumed || !fs::exists(log_path)) {
    std::ofstream(log_path, std::ios::trunc) << loss_log_header() << '\n';
    if (!val_pairs.empty()) std::ofstream(val_path, std::ios::trunc) << "step,loss\n";
  }

  TrainRunResult result;
  const fs::path last = options.out_dir / "checkpoint_last.dxn";
  auto checkpoint = [&](std::int64_t step) {
    char name[48];
    std::snprintf(name, sizeof(name), "checkpoint_%08lld.dxn", static_cast<long long>(step));
    save_checkpoint(options.out_dir / name, *model, &trainer.optimizer(), step);
    save_checkpoint(last, *model, &trainer.optimizer(), step);
    if (!val_pairs.empty()) {
      char row[64];
      std::snprintf(row, sizeof(row), "%lld,%.9g", static_cast<long long>(step),
                    validation_loss(*model, val_pairs, supervision));
      append_line(val_path, row);
    }
  };

  std::int64_t last_saved = -1;
  while (trainer.current_step() < config.max_iterations) {
    const StepRecord record = trainer.step();
    append_line(log_path, loss_log_row(record));
    result.records.push_back(record);
    if (options.on_step) options.on_step(record);
    if (config.checkpoint_every > 0 && record.step % config.checkpoint_every == 0) {
      checkpoint(record.step);
      last_saved = record.step;
    }
  }
  result.final_step = trainer.current_step();
  if (last_saved != result.final_step) checkpoint(result.final_step);
  result.final_checkpoint = last;
  return result;
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adam_step<float>(ParameterStore<float>&, OptimizerState<float>&, double, const AdamOptions&);
template void adam_step<double>(ParameterStore<double>&, OptimizerState<double>&, double, const AdamOptions&);
template class Trainer<float>;
template class Trainer<double>;
template double validation_loss<float>(DexiNed<float>&, const std::vector<ImagePair>&, const SupervisionConfig&);
template double validation_loss<double>(DexiNed<double>&, const std::vector<ImagePair>&, const SupervisionConfig&);

}  // namespace dexined
