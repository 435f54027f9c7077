#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dexined/augment.hpp"
#include "dexined/model.hpp"
#include "dexined/supervision.hpp"

namespace dexined {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 8;
  std::int64_t max_iterations = 150000;
  std::uint64_t seed = 0;
  // Checkpoint + validation every N steps; 0 writes only the final checkpoint.
  std::int64_t checkpoint_every = 5000;
  int crop_size = 400;
  AdamOptions adam;
  double validation_fraction = 0.1;
  // Optional step decay: lr *= lr_decay_factor every lr_decay_every steps.
  bool lr_decay = false;
  double lr_decay_factor = 0.1;
  std::int64_t lr_decay_every = 50000;

  void validate() const;
  double learning_rate_at(std::int64_t step) const;
};

// Adam moments, one pair per trainable parameter, keyed by parameter name.
template <typename Real>
struct OptimizerState {
  std::vector<std::string> names;
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;
  std::int64_t step = 0;

  void initialize(const ParameterStore<Real>& params);
  std::size_t index_of(const std::string& name) const;
};

// One bias-corrected Adam update. Consumes (zeroes) the gradients.
template <typename Real>
void adam_step(ParameterStore<Real>& params, OptimizerState<Real>& state, double learning_rate,
               const AdamOptions& options);

// Train/validation partition: the last floor(fraction * n) stems in sorted
// order are held out.
struct DatasetSplit {
  std::vector<DatasetEntry> train;
  std::vector<DatasetEntry> validation;
};
DatasetSplit split_validation(const DatasetIndex& index, double fraction);

// Side length used for batch crops: crop_size clipped to the smallest image
// and rounded down to a multiple of 16.
struct CropSize {
  int height = 0;
  int width = 0;
};
CropSize effective_crop(const std::vector<ImagePair>& pairs, int crop_size);

struct StepRecord {
  std::int64_t step = 0;
  double total = 0;
  std::array<double, kSupervisedOutputs> per_output{};
  double wall_time = 0;
};

// Owns one training run over in-memory pairs. Batch composition and crop
// offsets depend only on (seed, step), so a resumed run replays exactly.
template <typename Real>
class Trainer {
 public:
  Trainer(DexiNed<Real>& model, std::vector<ImagePair> pairs, TrainConfig config, SupervisionConfig supervision);

  StepRecord step();
  std::int64_t current_step() const { return state_.step; }
  OptimizerState<Real>& optimizer() { return state_; }
  const OptimizerState<Real>& optimizer() const { return state_; }
  const TrainConfig& config() const { return config_; }
  CropSize crop() const { return crop_; }

  // Indices of the pairs in the batch for `step` (1-based).
  std::vector<std::size_t> batch_indices(std::int64_t step) const;

 private:
  DexiNed<Real>& model_;
  std::vector<ImagePair> pairs_;
  TrainConfig config_;
  SupervisionConfig supervision_;
  OptimizerState<Real> state_;
  CropSize crop_;
  std::chrono::steady_clock::time_point start_;
};

// Mean weighted loss over full validation images in inference mode.
template <typename Real>
double validation_loss(DexiNed<Real>& model, const std::vector<ImagePair>& pairs,
                       const SupervisionConfig& supervision);

struct TrainRunOptions {
  std::filesystem::path out_dir;
  std::filesystem::path resume_from;  // empty: fresh run
  std::function<void(const StepRecord&)> on_step;
};

struct TrainRunResult {
  std::int64_t final_step = 0;
  std::filesystem::path final_checkpoint;
  std::vector<StepRecord> records;
};

// Full loop: checkpoints as out_dir/checkpoint_<step>.dxn (+ checkpoint_last.dxn),
// loss log out_dir/loss_log.csv, validation log out_dir/validation.csv.
TrainRunResult run_training(const ModelConfig& model_config, const DatasetIndex& dataset, const TrainConfig& config,
                            const SupervisionConfig& supervision, const TrainRunOptions& options);

std::string loss_log_header();
std::string loss_log_row(const StepRecord& record);

}  // namespace dexined
