#include "cite/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cite/error.hpp"

namespace cite {

using nlohmann::json;

const char* method_name(AssignmentMethod m) {
  switch (m) {
    case AssignmentMethod::kLearned: return "learned";
    case AssignmentMethod::kKMeans: return "kmeans";
    case AssignmentMethod::kCoarse: return "coarse";
    case AssignmentMethod::kRandom: return "random";
  }
  return "?";
}

AssignmentMethod parse_method(const std::string& name) {
  if (name == "learned") return AssignmentMethod::kLearned;
  if (name == "kmeans") return AssignmentMethod::kKMeans;
  if (name == "coarse") return AssignmentMethod::kCoarse;
  if (name == "random") return AssignmentMethod::kRandom;
  throw ConfigError("unknown assignment method '" + name + "' (learned|kmeans|coarse|random)");
}

const char* spatial_name(SpatialEncoding e) {
  switch (e) {
    case SpatialEncoding::kNone: return "none";
    case SpatialEncoding::kFlickr: return "flickr";
    case SpatialEncoding::kReferIt: return "referit";
  }
  return "?";
}

SpatialEncoding parse_spatial(const std::string& name) {
  if (name == "none") return SpatialEncoding::kNone;
  if (name == "flickr") return SpatialEncoding::kFlickr;
  if (name == "referit") return SpatialEncoding::kReferIt;
  throw ConfigError("unknown spatial encoding '" + name + "' (none|flickr|referit)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(sgd_lr_factor > 0)) throw ConfigError("sgd_lr_factor must be > 0");
}

void RunConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("embed_dim must be >= 1");
  if (num_embeddings == 0) throw ConfigError("num_embeddings must be >= 1");
  if (train.assignment == AssignmentMethod::kCoarse && num_embeddings != 8) {
    throw ConfigError("coarse assignment needs num_embeddings = 8");
  }
  train.validate();
  try {
    synth.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "flickr30k") {
    c.train.learning_rate = 5e-5;
    c.train.lambda = 5e-5;
    c.train.batch_size = 200;
    c.train.max_epochs = 100;
    c.embed_dim = 256;
    c.num_embeddings = 4;
    c.proposals_per_image = 200;
  } else if (name == "referit") {
    c.train.learning_rate = 5e-4;
    c.train.lambda = 5e-4;
    c.train.batch_size = 128;
    c.train.max_epochs = 100;
    c.embed_dim = 256;
    c.num_embeddings = 12;
    c.proposals_per_image = 500;
    c.spatial = SpatialEncoding::kReferIt;
  } else if (name == "vgenome") {
    c.train.learning_rate = 5e-5;
    c.train.lambda = 5e-4;
    c.train.batch_size = 128;
    c.train.max_epochs = 100;
    c.embed_dim = 256;
    c.num_embeddings = 12;
    c.proposals_per_image = 500;
    c.spatial = SpatialEncoding::kReferIt;
  } else if (name != "synth") {
    throw ConfigError("unknown preset '" + name + "' (flickr30k|referit|vgenome|synth)");
  }
  return c;
}

namespace {

struct Field {
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

std::size_t as_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer");
  }
  return v.get<std::size_t>();
}

double as_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' expects a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' expects true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config key '" + key + "' expects a string");
  return v.get<std::string>();
}

#define CITE_COUNT(key, member)                                                          \
  {key, {[](RunConfig& c, const json& v) { c.member = as_count(v, key); },              \
         [](const RunConfig& c) { return json(c.member); }}}
#define CITE_REAL(key, member)                                                           \
  {key, {[](RunConfig& c, const json& v) { c.member = as_real(v, key); },               \
         [](const RunConfig& c) { return json(c.member); }}}
#define CITE_BOOL(key, member)                                                           \
  {key, {[](RunConfig& c, const json& v) { c.member = as_bool(v, key); },               \
         [](const RunConfig& c) { return json(c.member); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      CITE_REAL("learning_rate", train.learning_rate),
      CITE_REAL("lambda", train.lambda),
      CITE_COUNT("batch_size", train.batch_size),
      CITE_COUNT("patience", train.patience),
      CITE_REAL("sgd_lr_factor", train.sgd_lr_factor),
      CITE_COUNT("max_epochs", train.max_epochs),
      CITE_COUNT("seed", train.seed),
      {"assignment",
       {[](RunConfig& c, const json& v) { c.train.assignment = parse_method(as_string(v, "assignment")); },
        [](const RunConfig& c) { return json(method_name(c.train.assignment)); }}},
      CITE_COUNT("embed_dim", embed_dim),
      CITE_COUNT("num_embeddings", num_embeddings),
      {"spatial",
       {[](RunConfig& c, const json& v) { c.spatial = parse_spatial(as_string(v, "spatial")); },
        [](const RunConfig& c) { return json(spatial_name(c.spatial)); }}},
      CITE_COUNT("proposals_per_image", proposals_per_image),
      {"kmeans_fit_split",
       {[](RunConfig& c, const json& v) {
          const std::string s = as_string(v, "kmeans_fit_split");
          if (s == "train") c.kmeans_fit_split = Split::kTrain;
          else if (s == "test") c.kmeans_fit_split = Split::kTest;
          else throw ConfigError("kmeans_fit_split must be train or test");
        },
        [](const RunConfig& c) { return json(split_name(c.kmeans_fit_split)); }}},
      CITE_COUNT("kmeans_max_iter", kmeans_max_iter),
      CITE_COUNT("synth_concepts", synth.concepts),
      CITE_COUNT("synth_train_images", synth.train_images),
      CITE_COUNT("synth_val_images", synth.val_images),
      CITE_COUNT("synth_test_images", synth.test_images),
      CITE_COUNT("synth_regions_per_image", synth.regions_per_image),
      CITE_COUNT("synth_phrases_per_image", synth.phrases_per_image),
      CITE_COUNT("synth_region_dim", synth.region_dim),
      CITE_COUNT("synth_phrase_dim", synth.phrase_dim),
      CITE_REAL("synth_noise", synth.noise),
      CITE_REAL("synth_jitter", synth.jitter),
      CITE_BOOL("synth_spatial_bias", synth.spatial_bias),
      CITE_COUNT("synth_seed", synth.seed),
      CITE_COUNT("synth_attribute_dim", synth.attribute_dim),
      CITE_COUNT("synth_concepts_per_image", synth.concepts_per_image),
      CITE_COUNT("synth_copies_per_region", synth.copies_per_region),
      CITE_REAL("synth_concept_strength", synth.concept_strength),
      CITE_REAL("synth_region_concept_strength", synth.region_concept_strength),
      CITE_REAL("synth_nuisance_strength", synth.nuisance_strength),
      CITE_COUNT("synth_nuisance_groups", synth.nuisance_groups),
      CITE_COUNT("synth_concept_modes", synth.concept_modes),
  };
  return table;
}

#undef CITE_COUNT
#undef CITE_REAL
#undef CITE_BOOL

void apply_json_value(RunConfig& cfg, const std::string& key, const json& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

}  // namespace

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg = preset_config(j.contains("preset") ? as_string(j["preset"], "preset") : "synth");
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    apply_json_value(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& json_value) {
  json v;
  try {
    v = json::parse(json_value);
  } catch (const json::parse_error&) {
    v = json_value;
  }
  if (key == "preset") throw ConfigError("preset cannot be overridden with --set; use --preset");
  apply_json_value(cfg, key, v);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string config_to_json_text(const RunConfig& cfg) {
  json j;
  j["preset"] = cfg.preset;
  for (const auto& [key, f] : fields()) j[key] = f.get(cfg);
  return j.dump(2);
}

}  // namespace cite
