#include "doctest.h"

#include <cstdlib>
#include <fstream>

#include "dexined/config.hpp"
#include "json.hpp"
#include "support/fixtures.hpp"

using namespace dexined;

namespace {

std::string config_error(const std::string& text) {
  try {
    run_config_from_json(text);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    return e.what();
  }
  FAIL("config accepted: " << text);
  return {};
}

struct SeedEnv {
  explicit SeedEnv(const char* value) {
    if (value != nullptr) setenv("DEXINED_SEED", value, 1);
  }
  ~SeedEnv() { unsetenv("DEXINED_SEED"); }
};

}  // namespace

TEST_CASE("defaults round trip through JSON") {
  RunConfig rc;
  rc.seed = 99;
  rc.model.variant = UpsampleVariant::Sp;
  rc.model.width_multiplier = 0.25;
  rc.train.learning_rate = 3e-4;
  rc.train.lr_decay = true;
  rc.augment.gammas = {0.5};
  rc.eval.thresholds = 9;
  rc.supervision.deltas = {1, 1, 1, 1, 1, 1, 2};
  const RunConfig back = run_config_from_json(run_config_to_json(rc));
  CHECK(back.seed == 99);
  CHECK(back.train.seed == 99);
  CHECK(back.augment.seed == 99);
  CHECK(back.model.variant == UpsampleVariant::Sp);
  CHECK(back.model.width_multiplier == 0.25);
  CHECK(back.train.learning_rate == 3e-4);
  CHECK(back.train.lr_decay);
  CHECK(back.augment.gammas == std::vector<double>{0.5});
  CHECK(back.eval.thresholds == 9);
  CHECK(back.supervision.deltas.back() == 2);
  CHECK(run_config_to_json(back) == run_config_to_json(rc));

  const ModelConfig m = model_config_from_json(model_config_to_json(rc.model));
  CHECK(m.variant == UpsampleVariant::Sp);
  CHECK(m.widths == rc.model.widths);
}

TEST_CASE("documented defaults") {
  const RunConfig rc;
  CHECK(rc.train.learning_rate == 1e-4);
  CHECK(rc.train.batch_size == 8);
  CHECK(rc.train.max_iterations == 150000);
  CHECK(rc.train.adam.beta1 == 0.9);
  CHECK(rc.train.adam.beta2 == 0.999);
  CHECK(rc.eval.max_distance == 0.0075);
  CHECK(rc.eval.thresholds == 99);
  CHECK(rc.model.variant == UpsampleVariant::Dc);
  CHECK(rc.supervision.deltas == std::vector<double>(7, 1.0));
}

TEST_CASE("unknown keys and bad types are rejected with the key name") {
  CHECK(config_error(R"({"model": {"widthz": 3}})").find("model.widthz") != std::string::npos);
  CHECK(config_error(R"({"bogus": 1})").find("bogus") != std::string::npos);
  CHECK(config_error(R"({"train": {"batch_size": "eight"}})").find("train.batch_size") != std::string::npos);
  CHECK(config_error(R"({"model": {"variant": "nope"}})").find("nope") != std::string::npos);
  CHECK(config_error(R"({"model": []})").find("model") != std::string::npos);
  config_error("{not json");
}

TEST_CASE("precedence: defaults, environment, file, overrides") {
  const auto dir = fixtures::scratch_dir("config");
  std::ofstream(dir / "run.json") << R"({"seed": 5, "train": {"batch_size": 2}})";
  std::ofstream(dir / "noseed.json") << R"({"train": {"batch_size": 3}})";

  {
    SeedEnv env("11");
    CHECK(resolve_run_config({}, "").seed == 11);
    CHECK(resolve_run_config(dir / "noseed.json", "").seed == 11);
    CHECK(resolve_run_config(dir / "run.json", "").seed == 5);
    const RunConfig rc = resolve_run_config(dir / "run.json", R"({"seed": 8, "train": {"learning_rate": 0.01}})");
    CHECK(rc.seed == 8);
    CHECK(rc.train.seed == 8);
    CHECK(rc.train.batch_size == 2);
    CHECK(rc.train.learning_rate == 0.01);
  }
  {
    SeedEnv env("-3");
    CHECK_THROWS_AS(resolve_run_config({}, ""), Error);
  }
  {
    SeedEnv env(nullptr);
    CHECK(resolve_run_config({}, "").seed == 0);
  }
  CHECK_THROWS_AS(resolve_run_config(dir / "missing.json", ""), Error);
  std::ofstream(dir / "bad.json") << R"({"eval": {"thresholds": 0}})";
  CHECK_THROWS_AS(resolve_run_config(dir / "bad.json", ""), Error);
  std::ofstream(dir / "typo.json") << R"({"eval": {"tolerance": 0.01}})";
  try {
    resolve_run_config(dir / "typo.json", "");
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("eval.tolerance") != std::string::npos);
  }
}
