#include "cite/sampling.hpp"

#include <algorithm>

#include "cite/error.hpp"
#include "cite/parallel.hpp"
#include "cite/rng.hpp"

namespace cite {

namespace {

// First `take` entries of a seeded partial Fisher-Yates shuffle.
std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t take, Rng& rng) {
  take = std::min(take, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  }
  pool.resize(take);
  return pool;
}

}  // namespace

MinedPairs mine_pairs(const PhraseSample& sample, std::span<const BBox> proposals, std::uint64_t seed) {
  if (proposals.empty()) throw ValidationError("mine_pairs: phrase " + sample.phrase_id + " has no proposals");
  MinedPairs out;
  std::vector<double> overlap(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    overlap[i] = iou(proposals[i], sample.gt_union);
    if (overlap[i] >= kPositiveIou) out.positives.push_back(i);
  }
  if (out.positives.empty()) {
    out.skipped = true;
    return out;
  }
  const std::size_t desired = kNegativesPerPositive * out.positives.size();
  auto pool_below = [&](double threshold) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      if (overlap[i] < threshold) pool.push_back(i);
    }
    return pool;
  };
  std::vector<std::size_t> pool = pool_below(kNegativeIou);
  if (pool.size() < desired) {
    pool = pool_below(kRelaxedNegativeIou);
    out.neg_threshold_used = kRelaxedNegativeIou;
  }
  Rng rng(seed);
  out.negatives = draw(std::move(pool), desired, rng);
  return out;
}

std::vector<MinedPairs> mine_split(const GroundingDataset& ds, std::span<const std::size_t> phrases,
                                   std::size_t max_proposals, std::uint64_t seed) {
  std::vector<MinedPairs> out(phrases.size());
  const auto n = static_cast<std::ptrdiff_t>(phrases.size());
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const PhraseSample& p = ds.phrases[phrases[static_cast<std::size_t>(i)]];
    const ImageRecord& img = ds.images[p.image_index];
    const std::size_t budget = proposal_budget(img, max_proposals);
    if (budget == 0) {
      out[static_cast<std::size_t>(i)].skipped = true;
      continue;
    }
    out[static_cast<std::size_t>(i)] =
        mine_pairs(p, std::span<const BBox>(img.proposals.data(), budget),
                   derive_seed(seed, static_cast<std::uint64_t>(i)));
  }
  return out;
}

std::vector<Minibatch> build_minibatch(std::span<const MinedPairs> mined, std::size_t batch_size,
                                       std::uint64_t seed) {
  if (batch_size == 0) throw ValidationError("build_minibatch: batch_size must be >= 1");
  std::vector<TrainingPair> pool;
  for (std::size_t i = 0; i < mined.size(); ++i) {
    for (std::size_t j : mined[i].positives) pool.push_back({i, j, 1.0});
    for (std::size_t j : mined[i].negatives) pool.push_back({i, j, -1.0});
  }
  if (pool.empty()) throw ValidationError("build_minibatch: no training pairs");
  Rng rng(seed);
  for (std::size_t i = pool.size(); i > 1; --i) {
    std::swap(pool[i - 1], pool[uniform_index(rng, i)]);
  }
  std::vector<Minibatch> batches;
  for (std::size_t start = 0; start < pool.size(); start += batch_size) {
    const std::size_t end = std::min(pool.size(), start + batch_size);
    batches.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(start),
                         pool.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace cite
