#pragma once

#include <filesystem>

#include "cite/config.hpp"
#include "cite/evaluation.hpp"

namespace cite {

// A trained model on disk: model.ckpt, assignment.json and run.json (the
// merged run config) in one directory.
void save_grounding_model(const GroundingModel& model, const RunConfig& cfg, const std::filesystem::path& dir);

struct LoadedModel {
  GroundingModel model;
  std::size_t proposals_per_image = 0;
};

// `path` is a model directory or a .ckpt file. Without run.json the spatial
// encoding is inferred from the region dimension; without assignment.json
// the model must be a learned one. ShapeError when the model does not fit
// the dataset's feature dimensions.
LoadedModel load_grounding_model(const std::filesystem::path& path, const GroundingDataset& ds);

}  // namespace cite
