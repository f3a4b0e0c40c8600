#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cite/geometry.hpp"
#include "cite/synthetic.hpp"

namespace cite {

enum class AssignmentMethod { kLearned, kKMeans, kCoarse, kRandom };

const char* method_name(AssignmentMethod m);
// ConfigError on an unknown name.
AssignmentMethod parse_method(const std::string& name);
const char* spatial_name(SpatialEncoding e);
SpatialEncoding parse_spatial(const std::string& name);

struct TrainConfig {
  double learning_rate = 1e-3;
  double lambda = 5e-4;
  std::size_t batch_size = 128;
  std::size_t patience = 5;
  double sgd_lr_factor = 0.1;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 0;
  AssignmentMethod assignment = AssignmentMethod::kLearned;

  // ConfigError unless learning_rate > 0, lambda >= 0, patience >= 1,
  // batch_size >= 1.
  void validate() const;
};

// Everything a run needs besides the data.
struct RunConfig {
  std::string preset = "synth";
  std::size_t embed_dim = 16;        // M
  std::size_t num_embeddings = 4;    // K
  SpatialEncoding spatial = SpatialEncoding::kNone;
  std::size_t proposals_per_image = 0;  // 0 = all
  Split kmeans_fit_split = Split::kTrain;
  std::size_t kmeans_max_iter = 100;
  TrainConfig train;
  SynthConfig synth;

  void validate() const;
};

// flickr30k | referit | vgenome | synth. ConfigError otherwise.
RunConfig preset_config(const std::string& name);

// Flat JSON object. "preset" (if present) selects the defaults, every other
// key overrides one field. Unknown keys and type mismatches raise
// ConfigError.
RunConfig config_from_json_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Applies one "key=value" override; the value is parsed as JSON when
// possible and as a bare string otherwise.
void apply_override(RunConfig& cfg, const std::string& assignment);
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& json_value);

// Flat JSON of the merged config, as accepted by config_from_json_text.
std::string config_to_json_text(const RunConfig& cfg);

}  // namespace cite
