#include "dexined/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dexined {

using nlohmann::json;

namespace {

// Reads known keys out of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (!doc.is_object()) fail(ErrorKind::Config, "config section '" + name_ + "' must be an object");
    obj_ = &doc;
  }

  template <typename T>
  void read(const char* key, T& dst) {
    seen_.insert(key);
    if (!obj_->contains(key)) return;
    const json& v = obj_->at(key);
    const bool numeric_ok = std::is_arithmetic_v<T> && !std::is_same_v<T, bool> && v.is_number();
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) bad_type(key, "a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) bad_type(key, "an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
        bad_type(key, "a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!numeric_ok) bad_type(key, "a number");
    }
    try {
      dst = v.get<T>();
    } catch (const json::exception&) {
      bad_type(key, "a value of the right type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return obj_->contains(key) ? &obj_->at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : obj_->items()) {
      if (!seen_.count(key)) fail(ErrorKind::Config, "unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  [[noreturn]] void bad_type(const char* key, const char* expected) const {
    fail(ErrorKind::Config, "config key '" + name_ + "." + key + "' must be " + expected);
  }

  const json* obj_ = nullptr;
  std::string name_;
  std::set<std::string> seen_;
};

json to_json(const ModelConfig& c) {
  return json{{"stem_width", c.stem_width},
              {"widths", c.widths},
              {"sub_blocks", c.sub_blocks},
              {"variant", std::string(to_string(c.variant))},
              {"width_multiplier", c.width_multiplier},
              {"pad_multiple", c.pad_multiple},
              {"upsample_filters", c.upsample_filters},
              {"upsample_kernel", c.upsample_kernel},
              {"batch_norm_epsilon", c.batch_norm.epsilon},
              {"batch_norm_momentum", c.batch_norm.momentum}};
}

void from_json_section(const json& doc, ModelConfig& c) {
  Section s(doc, "model");
  s.read("stem_width", c.stem_width);
  s.read("widths", c.widths);
  s.read("sub_blocks", c.sub_blocks);
  std::string variant(to_string(c.variant));
  s.read("variant", variant);
  c.variant = parse_variant(variant);
  s.read("width_multiplier", c.width_multiplier);
  s.read("pad_multiple", c.pad_multiple);
  s.read("upsample_filters", c.upsample_filters);
  s.read("upsample_kernel", c.upsample_kernel);
  s.read("batch_norm_epsilon", c.batch_norm.epsilon);
  s.read("batch_norm_momentum", c.batch_norm.momentum);
  s.finish();
}

json to_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"max_iterations", c.max_iterations},
              {"checkpoint_every", c.checkpoint_every},
              {"crop_size", c.crop_size},
              {"adam_beta1", c.adam.beta1},
              {"adam_beta2", c.adam.beta2},
              {"adam_epsilon", c.adam.epsilon},
              {"validation_fraction", c.validation_fraction},
              {"lr_decay", c.lr_decay},
              {"lr_decay_factor", c.lr_decay_factor},
              {"lr_decay_every", c.lr_decay_every}};
}

void from_json_section(const json& doc, TrainConfig& c) {
  Section s(doc, "train");
  s.read("learning_rate", c.learning_rate);
  s.read("batch_size", c.batch_size);
  s.read("max_iterations", c.max_iterations);
  s.read("checkpoint_every", c.checkpoint_every);
  s.read("crop_size", c.crop_size);
  s.read("adam_beta1", c.adam.beta1);
  s.read("adam_beta2", c.adam.beta2);
  s.read("adam_epsilon", c.adam.epsilon);
  s.read("validation_fraction", c.validation_fraction);
  s.read("lr_decay", c.lr_decay);
  s.read("lr_decay_factor", c.lr_decay_factor);
  s.read("lr_decay_every", c.lr_decay_every);
  s.finish();
}

json to_json(const AugmentConfig& c) {
  return json{{"angles", c.angles}, {"gammas", c.gammas}, {"split", c.split}, {"rotate", c.rotate},
              {"flip", c.flip},     {"gamma", c.gamma},   {"splits", c.splits}};
}

void from_json_section(const json& doc, AugmentConfig& c) {
  Section s(doc, "augment");
  s.read("angles", c.angles);
  s.read("gammas", c.gammas);
  s.read("split", c.split);
  s.read("rotate", c.rotate);
  s.read("flip", c.flip);
  s.read("gamma", c.gamma);
  s.read("splits", c.splits);
  s.finish();
}

json to_json(const MatchConfig& c) {
  return json{{"max_distance", c.max_distance}, {"thresholds", c.thresholds}, {"thinning", c.thinning}};
}

void from_json_section(const json& doc, MatchConfig& c) {
  Section s(doc, "eval");
  s.read("max_distance", c.max_distance);
  s.read("thresholds", c.thresholds);
  s.read("thinning", c.thinning);
  s.finish();
}

json to_json(const SupervisionConfig& c) {
  return json{{"deltas", c.deltas}, {"mean_reduction", c.mean_reduction}};
}

void from_json_section(const json& doc, SupervisionConfig& c) {
  Section s(doc, "supervision");
  s.read("deltas", c.deltas);
  s.read("mean_reduction", c.mean_reduction);
  s.finish();
}

json parse_or_fail(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, what + " is not valid JSON: " + e.what());
  }
}

RunConfig from_document(const json& doc) {
  RunConfig rc;
  Section top(doc, "config");
  top.read("seed", rc.seed);
  if (const json* j = top.child("model")) from_json_section(*j, rc.model);
  if (const json* j = top.child("train")) from_json_section(*j, rc.train);
  if (const json* j = top.child("augment")) from_json_section(*j, rc.augment);
  if (const json* j = top.child("eval")) from_json_section(*j, rc.eval);
  if (const json* j = top.child("supervision")) from_json_section(*j, rc.supervision);
  top.finish();
  rc.train.seed = rc.seed;
  rc.augment.seed = rc.seed;
  return rc;
}

json to_document(const RunConfig& rc) {
  json doc;
  doc["seed"] = rc.seed;
  doc["model"] = to_json(rc.model);
  doc["train"] = to_json(rc.train);
  doc["augment"] = to_json(rc.augment);
  doc["eval"] = to_json(rc.eval);
  doc["supervision"] = to_json(rc.supervision);
  return doc;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  augment.validate();
  eval.validate();
  supervision.validate();
}

RunConfig run_config_from_json(const std::string& json_text) {
  return from_document(parse_or_fail(json_text, "config"));
}

std::string run_config_to_json(const RunConfig& config) { return to_document(config).dump(2) + "\n"; }

std::string model_config_to_json(const ModelConfig& config) { return to_json(config).dump(); }

ModelConfig model_config_from_json(const std::string& json_text) {
  ModelConfig c;
  from_json_section(parse_or_fail(json_text, "model config"), c);
  c.validate();
  return c;
}

RunConfig resolve_run_config(const std::filesystem::path& file, const std::string& overrides_json) {
  RunConfig base;
  if (seed_from_environment(base.seed)) {
    base.train.seed = base.seed;
    base.augment.seed = base.seed;
  }
  json doc = to_document(base);
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) fail(ErrorKind::Config, "cannot read config file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const json patch = parse_or_fail(ss.str(), "config file " + file.string());
    if (!patch.is_object()) fail(ErrorKind::Config, "config file must hold a JSON object");
    // Validate the file on its own first so unknown keys name the file.
    from_document(patch);
    doc.merge_patch(patch);
  }
  if (!overrides_json.empty()) {
    const json patch = parse_or_fail(overrides_json, "overrides");
    if (!patch.is_object()) fail(ErrorKind::Config, "overrides must be a JSON object");
    doc.merge_patch(patch);
  }
  RunConfig rc = from_document(doc);
  rc.validate();
  return rc;
}

bool seed_from_environment(std::uint64_t& seed) {
  const char* env = std::getenv("DEXINED_SEED");
  if (env == nullptr || *env == '\0') return false;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == nullptr || *end != '\0' || *env == '-') {
    fail(ErrorKind::Config, std::string("DEXINED_SEED must be a non-negative integer, got '") + env + "'");
  }
  seed = v;
  return true;
}

}  // namespace dexined
