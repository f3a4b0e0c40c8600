#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cite/assignment.hpp"
#include "cite/config.hpp"
#include "cite/dataset.hpp"

namespace cite {

// Source of the concept weight vector U for each phrase of a dataset. In
// learned mode the network produces U and this object only carries K.
class PhraseAssigner {
 public:
  static PhraseAssigner learned(std::size_t k);
  static PhraseAssigner kmeans(KMeansModel model);
  static PhraseAssigner coarse(CoarseDictionary dict);
  static PhraseAssigner random(RandomAssignmentTable table);
  // Assigner for a run: k-means is fitted on the configured split's phrase
  // features, the coarse dictionary comes from the dataset, the random
  // table is seeded with the run seed.
  static PhraseAssigner for_run(const RunConfig& cfg, const GroundingDataset& ds);

  AssignmentMethod method() const { return method_; }
  std::size_t k() const { return k_; }
  bool external() const { return method_ != AssignmentMethod::kLearned; }

  // ModeError in learned mode.
  ConceptWeights weights_for(const GroundingDataset& ds, std::size_t phrase) const;
  std::vector<ConceptWeights> weights_for(const GroundingDataset& ds, std::span<const std::size_t> phrases) const;
  // n x K matrix of weights_for rows.
  Matrix weight_rows(const GroundingDataset& ds, std::span<const std::size_t> phrases) const;

  // assignment.json in `dir` (and random_table.json for the random method).
  void save(const std::filesystem::path& dir) const;
  static PhraseAssigner load(const std::filesystem::path& dir);

  const std::optional<KMeansModel>& kmeans_model() const { return kmeans_; }

 private:
  AssignmentMethod method_ = AssignmentMethod::kLearned;
  std::size_t k_ = 1;
  std::optional<KMeansModel> kmeans_;
  std::optional<CoarseDictionary> coarse_;
  std::optional<RandomAssignmentTable> random_;
};

// Key used by the random table: the normalized text, or the lowercased raw
// text when normalization leaves nothing.
std::string random_key(const std::string& text);

}  // namespace cite
