#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dexined/model.hpp"
#include "dexined/training.hpp"

namespace dexined {

// File layout: 8-byte magic, uint32 version, uint64 manifest length, UTF-8
// JSON manifest, then raw little-endian tensor payloads in manifest order.
inline constexpr char kCheckpointMagic[8] = {'D', 'X', 'N', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensorInfo {
  std::string name;
  Shape shape;
  std::string dtype;  // "f32" or "f64"
  std::uint64_t offset = 0;  // relative to the start of the payload section
  std::uint64_t nbytes = 0;
};

struct CheckpointManifest {
  std::uint32_t version = 0;
  std::int64_t step = 0;
  ModelConfig model;
  std::vector<CheckpointTensorInfo> tensors;
};

// Optimizer moments are stored as "adam/m/<param>" and "adam/v/<param>".
template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const DexiNed<Real>& model,
                     const OptimizerState<Real>* optimizer, std::int64_t step);

template <typename Real>
struct LoadedCheckpoint {
  std::unique_ptr<DexiNed<Real>> model;
  OptimizerState<Real> optimizer;
  bool has_optimizer = false;
  std::int64_t step = 0;
};

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::filesystem::path& path);

// Manifest only; validates magic, version and that the payload is complete.
CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace dexined
