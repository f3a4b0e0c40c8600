#include "cite/model_store.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cite/error.hpp"

namespace cite {

namespace fs = std::filesystem;

void save_grounding_model(const GroundingModel& model, const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  save_model(model.params, dir / "model.ckpt");
  model.assigner.save(dir);
  std::ofstream out(dir / "run.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "run.json").string());
  RunConfig c = cfg;
  c.spatial = model.spatial;
  out << config_to_json_text(c) << "\n";
}

LoadedModel load_grounding_model(const fs::path& path, const GroundingDataset& ds) {
  const bool is_dir = fs::is_directory(path);
  const fs::path dir = is_dir ? path : path.parent_path();
  const fs::path ckpt = is_dir ? dir / "model.ckpt" : path;
  if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + ckpt.string());

  LoadedModel out;
  out.model.params = load_model(ckpt);
  const ModelConfig& mc = out.model.params.config;

  const fs::path run = dir / "run.json";
  if (fs::exists(run)) {
    const RunConfig cfg = load_config(run);
    out.model.spatial = cfg.spatial;
    out.proposals_per_image = cfg.proposals_per_image;
  } else {
    const std::size_t extra = mc.region_dim >= ds.region_features.dim() ? mc.region_dim - ds.region_features.dim() : 99;
    if (extra == 0) out.model.spatial = SpatialEncoding::kNone;
    else if (extra == spatial_dims(SpatialEncoding::kFlickr)) out.model.spatial = SpatialEncoding::kFlickr;
    else if (extra == spatial_dims(SpatialEncoding::kReferIt)) out.model.spatial = SpatialEncoding::kReferIt;
    else throw ShapeError("checkpoint region dimension " + std::to_string(mc.region_dim) +
                          " does not fit region features of dimension " + std::to_string(ds.region_features.dim()));
  }

  if (fs::exists(dir / "assignment.json")) {
    out.model.assigner = PhraseAssigner::load(dir);
  } else if (mc.assignment == AssignmentMode::kLearned) {
    out.model.assigner = PhraseAssigner::learned(mc.num_embeddings);
  } else {
    throw ConfigError("external-assignment checkpoint needs assignment.json next to it");
  }

  const std::size_t want_region = ds.region_features.dim() + spatial_dims(out.model.spatial);
  if (mc.region_dim != want_region) {
    throw ShapeError("checkpoint expects region inputs of dimension " + std::to_string(mc.region_dim) +
                     ", dataset gives " + std::to_string(want_region));
  }
  if (mc.phrase_dim != ds.phrase_features.dim()) {
    throw ShapeError("checkpoint expects phrase features of dimension " + std::to_string(mc.phrase_dim) +
                     ", dataset gives " + std::to_string(ds.phrase_features.dim()));
  }
  if (out.model.assigner.k() != mc.num_embeddings ||
      out.model.assigner.external() != (mc.assignment == AssignmentMode::kExternal)) {
    throw ShapeError("assignment.json does not match the checkpoint (K=" + std::to_string(mc.num_embeddings) + ")");
  }
  if (auto& km = out.model.assigner.kmeans_model(); km && km->centers.cols() != ds.phrase_features.dim()) {
    throw ShapeError("k-means centers have dimension " + std::to_string(km->centers.cols()) +
                     ", phrase features have " + std::to_string(ds.phrase_features.dim()));
  }
  return out;
}

}  // namespace cite
