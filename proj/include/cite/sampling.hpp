#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cite/dataset.hpp"

namespace cite {

inline constexpr double kPositiveIou = 0.6;
inline constexpr double kNegativeIou = 0.3;
inline constexpr double kRelaxedNegativeIou = 0.4;
inline constexpr std::size_t kNegativesPerPositive = 2;

struct MinedPairs {
  std::vector<std::size_t> positives;  // proposal indices
  std::vector<std::size_t> negatives;
  double neg_threshold_used = kNegativeIou;
  bool skipped = false;  // no proposal reached the positive threshold
};

// Positives: every proposal with IOU >= 0.6 against the union box.
// Negatives: 2x as many, drawn without replacement from IOU < 0.3, or from
// IOU < 0.4 when that pool is too small, or all of the latter if still short.
// ValidationError on an empty proposal list.
MinedPairs mine_pairs(const PhraseSample& sample, std::span<const BBox> proposals, std::uint64_t seed);

// Mines every listed phrase (parallel over phrases). Phrase i uses seed
// derive_seed(seed, i) and at most `max_proposals` proposals (0 = all).
// Phrases whose image has no proposals come back skipped.
std::vector<MinedPairs> mine_split(const GroundingDataset& ds, std::span<const std::size_t> phrases,
                                   std::size_t max_proposals, std::uint64_t seed);

struct TrainingPair {
  std::size_t phrase;    // position in the mined list
  std::size_t proposal;  // proposal index within the phrase's image
  double label;          // +1 or -1
};

using Minibatch = std::vector<TrainingPair>;

// Seeded shuffle of every (phrase, proposal, label) triple, cut into
// batch_size chunks; the last chunk may be short. ValidationError on an
// empty pool or batch_size 0.
std::vector<Minibatch> build_minibatch(std::span<const MinedPairs> mined, std::size_t batch_size,
                                       std::uint64_t seed);

}  // namespace cite
