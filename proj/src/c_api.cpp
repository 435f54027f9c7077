#include "dexined/dexined.h"

#include <algorithm>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "dexined/augment.hpp"
#include "dexined/checkpoint.hpp"
#include "dexined/config.hpp"
#include "dexined/eval.hpp"
#include "dexined/selfcheck.hpp"
#include "dexined/training.hpp"

struct dx_model {
  std::unique_ptr<dexined::DexiNed<float>> net;
};

namespace {

namespace fs = std::filesystem;
using dexined::ErrorKind;

thread_local std::string g_last_error;

dx_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Augmentation:
      return DX_ERR_IO;
    case ErrorKind::Config:
    case ErrorKind::Argument:
      return DX_ERR_CONFIG;
    case ErrorKind::Numeric:
      return DX_ERR_NUMERIC;
    case ErrorKind::Shape:
      return DX_ERR_SHAPE;
    case ErrorKind::Format:
    case ErrorKind::Version:
    case ErrorKind::Truncated:
    case ErrorKind::Integrity:
      return DX_ERR_FORMAT;
    case ErrorKind::Training:
      return DX_ERR_INTERNAL;
  }
  return DX_ERR_INTERNAL;
}

template <typename F>
dx_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return DX_OK;
  } catch (const dexined::Error& e) {
    g_last_error = std::string(dexined::to_string(e.kind())) + " error: " + e.what();
    return status_of(e.kind());
  } catch (const fs::filesystem_error& e) {
    g_last_error = e.what();
    return DX_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DX_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DX_ERR_INTERNAL;
  }
}

dx_status null_argument(const char* what) {
  g_last_error = std::string("argument error: ") + what + " must not be NULL";
  return DX_ERR_CONFIG;
}

dexined::RunConfig run_config(const char* json) {
  if (json == nullptr || *json == '\0') return dexined::RunConfig{};
  dexined::RunConfig rc = dexined::run_config_from_json(json);
  rc.validate();
  return rc;
}

}  // namespace

extern "C" {

const char* dx_version(void) { return "0.1.0"; }

const char* dx_last_error(void) { return g_last_error.c_str(); }

void dx_string_free(char* s) { delete[] s; }

dx_status dx_resolve_config(const char* config_path, const char* overrides_json, char** resolved_json) {
  if (resolved_json == nullptr) return null_argument("resolved_json");
  return guarded([&] {
    const dexined::RunConfig rc =
        dexined::resolve_run_config(config_path != nullptr ? fs::path(config_path) : fs::path(),
                                    overrides_json != nullptr ? overrides_json : "");
    const std::string text = dexined::run_config_to_json(rc);
    char* buf = new char[text.size() + 1];
    std::memcpy(buf, text.c_str(), text.size() + 1);
    *resolved_json = buf;
  });
}

dx_status dx_model_create(const char* model_config_json, uint64_t seed, dx_model** out) {
  if (out == nullptr) return null_argument("out");
  return guarded([&] {
    const dexined::ModelConfig cfg = model_config_json != nullptr && *model_config_json != '\0'
                                         ? dexined::model_config_from_json(model_config_json)
                                         : dexined::ModelConfig{};
    auto m = std::make_unique<dx_model>();
    m->net = std::make_unique<dexined::DexiNed<float>>(cfg, seed);
    *out = m.release();
  });
}

dx_status dx_model_load(const char* checkpoint_path, dx_model** out) {
  if (checkpoint_path == nullptr) return null_argument("checkpoint_path");
  if (out == nullptr) return null_argument("out");
  return guarded([&] {
    if (!fs::is_regular_file(checkpoint_path)) {
      dexined::fail(ErrorKind::Io, std::string("checkpoint not found: ") + checkpoint_path);
    }
    auto loaded = dexined::load_checkpoint<float>(checkpoint_path);
    auto m = std::make_unique<dx_model>();
    m->net = std::move(loaded.model);
    *out = m.release();
  });
}

dx_status dx_model_save(const dx_model* model, const char* checkpoint_path) {
  if (model == nullptr) return null_argument("model");
  if (checkpoint_path == nullptr) return null_argument("checkpoint_path");
  return guarded([&] { dexined::save_checkpoint<float>(checkpoint_path, *model->net, nullptr, 0); });
}

void dx_model_free(dx_model* model) { delete model; }

size_t dx_model_parameter_count(const dx_model* model) {
  return model == nullptr ? 0 : model->net->parameters().scalar_count();
}

dx_status dx_model_predict(dx_model* model, const float* rgb, int width, int height, float* maps) {
  if (model == nullptr) return null_argument("model");
  if (rgb == nullptr || maps == nullptr) return null_argument("rgb/maps");
  return guarded([&] {
    if (width < 1 || height < 1) dexined::fail(ErrorKind::Shape, "image must be at least 1x1");
    dexined::Image img(width, height, 3);
    std::copy(rgb, rgb + img.data.size(), img.data.begin());
    const auto result = model->net->forward(dexined::image_to_tensor<float>(img));
    const std::size_t plane = static_cast<std::size_t>(width) * height;
    for (std::size_t k = 0; k < result.probabilities.size(); ++k) {
      std::copy(result.probabilities[k].raw(), result.probabilities[k].raw() + plane, maps + k * plane);
    }
  });
}

dx_status dx_predict_directory(const char* checkpoint_path, const char* input_dir, const char* output_dir,
                               const char* maps, dx_log_fn warn, void* user, size_t* written) {
  if (checkpoint_path == nullptr || input_dir == nullptr || output_dir == nullptr) {
    return null_argument("checkpoint_path/input_dir/output_dir");
  }
  return guarded([&] {
    const std::string mode = maps != nullptr ? maps : "fused";
    if (mode != "all" && mode != "fused" && mode != "avg") {
      dexined::fail(ErrorKind::Config, "--maps must be all, fused or avg, got '" + mode + "'");
    }
    if (!fs::is_regular_file(checkpoint_path)) {
      dexined::fail(ErrorKind::Io, std::string("checkpoint not found: ") + checkpoint_path);
    }
    if (!fs::is_directory(input_dir)) dexined::fail(ErrorKind::Io, std::string("input directory not found: ") + input_dir);
    auto loaded = dexined::load_checkpoint<float>(checkpoint_path);
    fs::create_directories(output_dir);

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(input_dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t count = 0;
    static const char* kNames[DX_MAP_COUNT] = {"out1", "out2", "out3", "out4", "out5", "out6", "fused", "avg"};
    for (const auto& file : files) {
      if (!dexined::is_png(file)) {
        if (warn != nullptr) warn(("skipping non-image file " + file.string()).c_str(), user);
        continue;
      }
      const dexined::Image img = dexined::read_png(file, 3);
      const auto result = loaded.model->forward(dexined::image_to_tensor<float>(img));
      const std::string stem = file.stem().string();
      if (mode == "all") {
        const fs::path dir = fs::path(output_dir) / stem;
        fs::create_directories(dir);
        for (std::size_t k = 0; k < DX_MAP_COUNT; ++k) {
          dexined::write_png(dir / (std::string(kNames[k]) + ".png"),
                             dexined::tensor_plane_to_image(result.probabilities[k]));
        }
      } else {
        const std::size_t k = mode == "fused" ? 6 : 7;
        dexined::write_png(fs::path(output_dir) / (stem + ".png"),
                           dexined::tensor_plane_to_image(result.probabilities[k]));
      }
      ++count;
    }
    if (written != nullptr) *written = count;
  });
}

dx_status dx_augment(const char* input_root, const char* output_root, const char* config_json, dx_log_fn warn,
                     void* user, size_t* written, size_t* skipped) {
  if (input_root == nullptr || output_root == nullptr) return null_argument("input_root/output_root");
  return guarded([&] {
    const dexined::RunConfig rc = run_config(config_json);
    const auto index = dexined::index_dataset(input_root, rc.augment.splits);
    const auto result = dexined::augment_dataset(index, output_root, rc.augment);
    if (warn != nullptr) {
      for (const auto& s : result.skipped) warn(("skipped " + s).c_str(), user);
    }
    if (written != nullptr) *written = result.written;
    if (skipped != nullptr) *skipped = result.skipped.size();
  });
}

dx_status dx_train(const char* data_root, const char* output_dir, const char* config_json,
                   const char* resume_checkpoint, dx_train_fn on_step, void* user, int64_t* final_step) {
  if (data_root == nullptr || output_dir == nullptr) return null_argument("data_root/output_dir");
  return guarded([&] {
    const dexined::RunConfig rc = run_config(config_json);
    const auto index = dexined::index_dataset(data_root, rc.augment.splits);
    dexined::TrainRunOptions options;
    options.out_dir = output_dir;
    if (resume_checkpoint != nullptr) options.resume_from = resume_checkpoint;
    if (on_step != nullptr) {
      options.on_step = [&](const dexined::StepRecord& r) {
        dx_train_step s{};
        s.step = r.step;
        s.total = r.total;
        std::copy(r.per_output.begin(), r.per_output.end(), s.per_output);
        s.wall_time = r.wall_time;
        on_step(&s, user);
      };
    }
    const auto result = dexined::run_training(rc.model, index, rc.train, rc.supervision, options);
    if (final_step != nullptr) *final_step = result.final_step;
  });
}

dx_status dx_evaluate_directories(const char* pred_dir, const char* gt_dir, const char* output_dir,
                                  const char* config_json, dx_eval_summary* out) {
  if (pred_dir == nullptr || gt_dir == nullptr) return null_argument("pred_dir/gt_dir");
  return guarded([&] {
    const dexined::RunConfig rc = run_config(config_json);
    const auto inputs = dexined::ingest_for_evaluation(pred_dir, gt_dir);
    const auto summary = dexined::evaluate_dataset(inputs.preds, inputs.gts, rc.eval, inputs.stems);
    if (output_dir != nullptr) dexined::write_eval_outputs(output_dir, summary);
    if (out != nullptr) *out = dx_eval_summary{summary.ods, summary.ods_threshold, summary.ois, summary.ap,
                                               inputs.preds.size()};
  });
}

dx_status dx_evaluate_maps(const float* const* preds, const float* const* gts, const int* widths, const int* heights,
                           size_t count, const char* config_json, dx_eval_summary* out) {
  if (count > 0 && (preds == nullptr || gts == nullptr || widths == nullptr || heights == nullptr)) {
    return null_argument("preds/gts/widths/heights");
  }
  return guarded([&] {
    const dexined::RunConfig rc = run_config(config_json);
    std::vector<dexined::Image> p;
    std::vector<dexined::Image> g;
    for (std::size_t i = 0; i < count; ++i) {
      if (widths[i] < 1 || heights[i] < 1) dexined::fail(ErrorKind::Shape, "map dimensions must be positive");
      const std::size_t n = static_cast<std::size_t>(widths[i]) * heights[i];
      p.emplace_back(widths[i], heights[i], 1);
      g.emplace_back(widths[i], heights[i], 1);
      std::copy(preds[i], preds[i] + n, p.back().data.begin());
      std::copy(gts[i], gts[i] + n, g.back().data.begin());
    }
    const auto summary = dexined::evaluate_dataset(p, g, rc.eval);
    if (out != nullptr) *out = dx_eval_summary{summary.ods, summary.ods_threshold, summary.ois, summary.ap, count};
  });
}

dx_status dx_selfcheck(uint64_t seed, const char* perturb, dx_selfcheck_fn on_group, void* user) {
  bool all_passed = true;
  const dx_status st = guarded([&] {
    dexined::testing::set_perturbation(perturb != nullptr ? perturb : "");
    struct Reset {
      ~Reset() { dexined::testing::set_perturbation(""); }
    } reset;
    dexined::run_selfcheck(seed, [&](const dexined::SelfcheckGroup& g) {
      all_passed = all_passed && g.passed;
      if (on_group != nullptr) on_group(g.name.c_str(), g.passed ? 1 : 0, g.detail.c_str(), g.seconds, user);
    });
  });
  if (st != DX_OK) return st;
  if (!all_passed) {
    g_last_error = "selfcheck failed";
    return DX_ERR_SELFCHECK;
  }
  return DX_OK;
}

}  // extern "C"
