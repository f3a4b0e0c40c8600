#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cite/assignment.hpp"
#include "cite/layers.hpp"
#include "cite/tape.hpp"

namespace cite {

// learned: U comes from the concept weight branch. external: U is supplied
// per phrase (k-means, coarse, random, or [1] for the K=1 baseline).
enum class AssignmentMode : std::uint32_t { kLearned = 0, kExternal = 1 };

struct ModelConfig {
  std::size_t region_dim = 0;   // d_v, including appended spatial features
  std::size_t phrase_dim = 0;   // d_t
  std::size_t embed_dim = 0;    // M
  std::size_t num_embeddings = 1;  // K
  AssignmentMode assignment = AssignmentMode::kLearned;
  std::uint64_t seed = 0;

  static constexpr std::size_t kHiddenMultiplier = 4;
  std::size_t hidden_dim() const { return kHiddenMultiplier * embed_dim; }

  // ValidationError on zero dimensions.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Dense {
  Parameter weight;
  std::optional<Parameter> bias;
};

// affine -> batch norm -> ReLU. The affine carries no bias; beta plays it.
struct Stage {
  Dense fc;
  BatchNormState bn;
};

struct ModelParams {
  ModelConfig config;
  Stage image1, image2;
  Stage text1, text2;
  Stage joint;  // P1
  std::vector<Stage> conditional;
  Dense classifier;
  // Present only in learned mode.
  std::optional<Stage> concept1;
  std::optional<Dense> concept2;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Every tensor in serialization order, running statistics included.
  void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const;
};

ModelParams init_model(const ModelConfig& cfg);

// Activations of one pass over n (phrase, region) pair rows.
struct ForwardTrace {
  Tape tape;
  Var image_pre, image_out;
  Var text_pre, text_out;
  Var joint;
  Var p1;
  std::vector<Var> conditional;
  Var phi;  // invalid in external mode
  Var weights;
  Var fused;
  Var scores;  // n x 1

  explicit ForwardTrace(bool track) : tape(track) {}

  const Matrix& scores_value() const { return tape.value(scores); }
  const Matrix& weights_value() const { return tape.value(weights); }
  const Matrix* phi_value() const { return phi.valid() ? &tape.value(phi) : nullptr; }
  // The M x K conditional matrix C of one pair row.
  Matrix conditional_matrix(std::size_t row) const;
};

// Scores aligned pair rows: region_rows[i] with phrase_rows[i]. In external
// mode `weights` (n x K) is required. Train mode records gradients into
// `params` on backward and updates running statistics.
ForwardTrace forward_pairs(ModelParams& params, const Matrix& region_rows, const Matrix& phrase_rows,
                           const Matrix* weights, Mode mode, bool update_running = true);

// Read-only inference pass (infer mode); safe to call concurrently.
ForwardTrace forward_pairs(const ModelParams& params, const Matrix& region_rows,
                           const Matrix& phrase_rows, const Matrix* weights);

struct ConceptWeightsResult {
  Matrix weights;  // p x K, softmax(phi)
  Matrix phi;      // p x K
};

// Concept weight branch in infer mode. ModeError for external models.
ConceptWeightsResult concept_weights(const ModelParams& params, const Matrix& phrases);

struct ScoreResult {
  Matrix scores;  // p x r
  ForwardTrace trace;
};

// All p x r (phrase, region) pairs; row i*r + j of the trace is pair (i, j).
// In external mode `weights` must hold one ConceptWeights per phrase.
ScoreResult score(const ModelParams& params, const Matrix& regions, const Matrix& phrases,
                  const std::vector<ConceptWeights>* weights);
ScoreResult score(ModelParams& params, const Matrix& regions, const Matrix& phrases,
                  const std::vector<ConceptWeights>* weights, Mode mode);

// K=1 external model that keeps conditional embedding k only.
ModelParams truncate_to_embedding(const ModelParams& params, std::size_t k);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_model(const ModelParams& params, const std::filesystem::path& path);
// Reads a checkpoint. When `expected` is given, every tensor must match the
// shapes implied by it (ShapeError names the offending tensor).
ModelParams load_model(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace cite
