// Command-line front end. Talks to the library only through dexined.h.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dexined/dexined.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitSelfcheck = 4;

int exit_code(dx_status st) {
  switch (st) {
    case DX_OK:
      return kExitOk;
    case DX_ERR_CONFIG:
    case DX_ERR_SHAPE:
      return kExitConfig;
    case DX_ERR_NUMERIC:
      return kExitNumeric;
    case DX_ERR_SELFCHECK:
      return kExitSelfcheck;
    case DX_ERR_IO:
    case DX_ERR_FORMAT:
    case DX_ERR_INTERNAL:
      return kExitIo;
  }
  return kExitIo;
}

int report(dx_status st) {
  if (st != DX_OK) std::cerr << "error: " << dx_last_error() << "\n";
  return exit_code(st);
}

void print_warning(const char* message, void*) { std::cerr << "warning: " << message << "\n"; }

struct Resolved {
  dx_status status = DX_OK;
  std::string text;
};

Resolved resolve(const std::string& config_file, const json& overrides) {
  Resolved r;
  char* out = nullptr;
  const std::string patch = overrides.empty() ? std::string() : overrides.dump();
  r.status = dx_resolve_config(config_file.empty() ? nullptr : config_file.c_str(),
                               patch.empty() ? nullptr : patch.c_str(), &out);
  if (r.status == DX_OK) {
    r.text = out;
    dx_string_free(out);
  }
  return r;
}

// config_resolved.json: every effective value plus the command that ran.
dx_status echo_config(const fs::path& out_dir, const std::string& resolved, const json& command) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  json doc = json::parse(resolved);
  doc["command"] = command;
  std::ofstream out(out_dir / "config_resolved.json", std::ios::trunc);
  out << doc.dump(2) << "\n";
  if (!out) {
    std::cerr << "error: cannot write " << (out_dir / "config_resolved.json").string() << "\n";
    return DX_ERR_IO;
  }
  return DX_OK;
}

struct AugmentArgs {
  std::string input, output, config;
  bool no_split = false, no_rotate = false, no_flip = false, no_gamma = false;
  std::optional<std::uint64_t> seed;
};

int run_augment(const AugmentArgs& a) {
  json patch = json::object();
  if (a.seed) patch["seed"] = *a.seed;
  if (a.no_split) patch["augment"]["split"] = false;
  if (a.no_rotate) patch["augment"]["rotate"] = false;
  if (a.no_flip) patch["augment"]["flip"] = false;
  if (a.no_gamma) patch["augment"]["gamma"] = false;
  const Resolved cfg = resolve(a.config, patch);
  if (cfg.status != DX_OK) return report(cfg.status);
  if (!fs::is_directory(a.input)) {
    std::cerr << "error: input directory not found: " << a.input << "\n";
    return kExitIo;
  }
  size_t written = 0;
  size_t skipped = 0;
  const dx_status st =
      dx_augment(a.input.c_str(), a.output.c_str(), cfg.text.c_str(), print_warning, nullptr, &written, &skipped);
  if (st != DX_OK) return report(st);
  if (const dx_status e = echo_config(a.output, cfg.text, {{"name", "augment"}, {"input", a.input}}); e != DX_OK) {
    return report(e);
  }
  std::cout << written << " pairs written";
  if (skipped > 0) std::cout << " (" << skipped << " transforms skipped)";
  std::cout << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data, out, config, variant, resume;
  bool toy = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> iterations;
  std::optional<int> batch_size, crop;
  std::optional<double> lr;
  std::optional<std::int64_t> checkpoint_every;
  int log_every = 100;
};

void print_step(const dx_train_step* s, void* user) {
  const int every = *static_cast<const int*>(user);
  if (every > 0 && s->step % every == 0) {
    std::printf("step %lld loss %.6g\n", static_cast<long long>(s->step), s->total);
    std::fflush(stdout);
  }
}

int run_train(TrainArgs a) {
  json patch = json::object();
  if (a.toy) {
    // Width 1/8 and a schedule short enough for a desktop CPU.
    patch["model"]["width_multiplier"] = 0.125;
    patch["train"] = {{"max_iterations", 2000}, {"batch_size", 1},    {"checkpoint_every", 500},
                      {"learning_rate", 1e-3},  {"crop_size", 256},   {"validation_fraction", 0.0}};
  }
  if (!a.variant.empty()) patch["model"]["variant"] = a.variant;
  if (a.seed) patch["seed"] = *a.seed;
  if (a.iterations) patch["train"]["max_iterations"] = *a.iterations;
  if (a.batch_size) patch["train"]["batch_size"] = *a.batch_size;
  if (a.crop) patch["train"]["crop_size"] = *a.crop;
  if (a.lr) patch["train"]["learning_rate"] = *a.lr;
  if (a.checkpoint_every) patch["train"]["checkpoint_every"] = *a.checkpoint_every;
  const Resolved cfg = resolve(a.config, patch);
  if (cfg.status != DX_OK) return report(cfg.status);
  if (!a.resume.empty() && !fs::is_regular_file(a.resume)) {
    std::cerr << "error: resume checkpoint not found: " << a.resume << "\n";
    return kExitConfig;
  }
  if (const dx_status e = echo_config(a.out, cfg.text,
                                      {{"name", "train"}, {"data", a.data}, {"toy", a.toy}, {"resume", a.resume}});
      e != DX_OK) {
    return report(e);
  }
  int64_t final_step = 0;
  const dx_status st = dx_train(a.data.c_str(), a.out.c_str(), cfg.text.c_str(),
                                a.resume.empty() ? nullptr : a.resume.c_str(), print_step, &a.log_every, &final_step);
  if (st != DX_OK) return report(st);
  std::cout << "trained to step " << final_step << "; checkpoint " << (fs::path(a.out) / "checkpoint_last.dxn").string()
            << "\n";
  return kExitOk;
}

struct PredictArgs {
  std::string checkpoint, input, output, maps = "fused";
};

int run_predict(const PredictArgs& a) {
  const Resolved cfg = resolve("", json::object());
  if (cfg.status != DX_OK) return report(cfg.status);
  size_t written = 0;
  const dx_status st = dx_predict_directory(a.checkpoint.c_str(), a.input.c_str(), a.output.c_str(), a.maps.c_str(),
                                            print_warning, nullptr, &written);
  if (st != DX_OK) return report(st);
  if (const dx_status e = echo_config(a.output, cfg.text,
                                      {{"name", "predict"}, {"checkpoint", a.checkpoint}, {"input", a.input},
                                       {"maps", a.maps}});
      e != DX_OK) {
    return report(e);
  }
  std::cout << written << " images predicted\n";
  return kExitOk;
}

struct EvalArgs {
  std::string pred, gt, out, config;
  std::optional<double> tolerance;
  std::optional<int> thresholds;
  bool no_thinning = false;
};

int run_eval(const EvalArgs& a) {
  json patch = json::object();
  if (a.tolerance) patch["eval"]["max_distance"] = *a.tolerance;
  if (a.thresholds) patch["eval"]["thresholds"] = *a.thresholds;
  if (a.no_thinning) patch["eval"]["thinning"] = false;
  const Resolved cfg = resolve(a.config, patch);
  if (cfg.status != DX_OK) return report(cfg.status);
  dx_eval_summary summary{};
  const dx_status st = dx_evaluate_directories(a.pred.c_str(), a.gt.c_str(), a.out.c_str(), cfg.text.c_str(), &summary);
  if (st != DX_OK) return report(st);
  if (const dx_status e = echo_config(a.out, cfg.text, {{"name", "eval"}, {"pred", a.pred}, {"gt", a.gt}});
      e != DX_OK) {
    return report(e);
  }
  std::printf("ODS %.3f OIS %.3f AP %.3f\n", summary.ods, summary.ois, summary.ap);
  return kExitOk;
}

void print_group(const char* group, int passed, const char* detail, double seconds, void*) {
  std::printf("%s %-15s %6.2fs  %s\n", passed ? "PASS" : "FAIL", group, seconds, detail);
  std::fflush(stdout);
}

int run_selfcheck(std::optional<std::uint64_t> seed, const std::string& perturb) {
  std::uint64_t s = seed.value_or(0);
  if (!seed) {
    // Seed resolution shares the config path so DEXINED_SEED applies here too.
    const Resolved cfg = resolve("", json::object());
    if (cfg.status != DX_OK) return report(cfg.status);
    s = json::parse(cfg.text).at("seed").get<std::uint64_t>();
  }
  const dx_status st = dx_selfcheck(s, perturb.empty() ? nullptr : perturb.c_str(), print_group, nullptr);
  if (st == DX_ERR_SELFCHECK) {
    std::cerr << "selfcheck failed\n";
    return kExitSelfcheck;
  }
  return report(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DexiNed edge detection: augment, train, predict, eval, selfcheck"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dx_version());

  AugmentArgs aug;
  auto* augment = app.add_subcommand("augment", "Expand a dataset with split/rotate/flip/gamma transforms");
  augment->add_option("--input", aug.input, "Dataset root (imgs/<split>, edge_maps/<split>)")->required();
  augment->add_option("--output", aug.output, "Output dataset root")->required();
  augment->add_option("--config", aug.config, "JSON config file");
  augment->add_option("--seed", aug.seed, "Seed");
  augment->add_flag("--no-split", aug.no_split, "Keep images whole");
  augment->add_flag("--no-rotate", aug.no_rotate, "Skip rotations");
  augment->add_flag("--no-flip", aug.no_flip, "Skip horizontal flips");
  augment->add_flag("--no-gamma", aug.no_gamma, "Skip gamma corrections");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", tr.data, "Dataset root")->required();
  train->add_option("--out", tr.out, "Run directory")->required();
  train->add_option("--config", tr.config, "JSON config file");
  train->add_option("--variant", tr.variant, "Upsampling variant")->check(CLI::IsMember({"bdc", "dc", "sp"}));
  train->add_flag("--toy", tr.toy, "Width x1/8 and a short schedule");
  train->add_option("--resume", tr.resume, "Checkpoint to resume from");
  train->add_option("--seed", tr.seed, "Seed");
  train->add_option("--iterations", tr.iterations, "Maximum iterations");
  train->add_option("--batch-size", tr.batch_size, "Batch size");
  train->add_option("--crop", tr.crop, "Crop size (multiple of 16)");
  train->add_option("--lr", tr.lr, "Learning rate");
  train->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint cadence in steps");
  train->add_option("--log-every", tr.log_every, "Print the loss every N steps")->capture_default_str();

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "Write edge maps for every PNG in a directory");
  predict->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  predict->add_option("--input", pr.input, "Directory of input images")->required();
  predict->add_option("--output", pr.output, "Output directory")->required();
  predict->add_option("--maps", pr.maps, "Which maps to write")
      ->check(CLI::IsMember({"all", "fused", "avg"}))
      ->capture_default_str();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("--pred", ev.pred, "Prediction directory")->required();
  eval->add_option("--gt", ev.gt, "Ground-truth directory or dataset root")->required();
  eval->add_option("--out", ev.out, "Output directory")->required();
  eval->add_option("--config", ev.config, "JSON config file");
  eval->add_option("--tolerance", ev.tolerance, "Match distance as a fraction of the diagonal");
  eval->add_option("--thresholds", ev.thresholds, "Number of thresholds");
  eval->add_flag("--no-thinning", ev.no_thinning, "Match without thinning");

  std::optional<std::uint64_t> sc_seed;
  std::string perturb;
  auto* selfcheck = app.add_subcommand("selfcheck", "Run the fast invariant suite");
  selfcheck->add_option("--seed", sc_seed, "Seed");
  selfcheck->add_option("--perturb", perturb, "")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (augment->parsed()) return run_augment(aug);
  if (train->parsed()) return run_train(tr);
  if (predict->parsed()) return run_predict(pr);
  if (eval->parsed()) return run_eval(ev);
  if (selfcheck->parsed()) return run_selfcheck(sc_seed, perturb);
  return kExitConfig;
}
