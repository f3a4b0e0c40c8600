#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cite/dataset.hpp"
#include "cite/network.hpp"
#include "cite/phrase_assigner.hpp"

namespace cite {

inline constexpr double kHitIou = 0.5;

// Scores of the listed phrases (all from `image`) against that image's
// proposals under the evaluation budget: p x r.
using ImageScorer = std::function<Matrix(std::size_t image, std::span<const std::size_t> phrases)>;

// Everything needed to score dataset phrases with a trained network.
struct GroundingModel {
  ModelParams params;
  PhraseAssigner assigner = PhraseAssigner::learned(1);
  SpatialEncoding spatial = SpatialEncoding::kNone;
};

Matrix score_image(const GroundingModel& model, const GroundingDataset& ds, std::size_t image,
                   std::span<const std::size_t> phrases, std::size_t max_proposals);
// Infer-mode scorer; safe to call from several threads.
ImageScorer model_scorer(const GroundingModel& model, const GroundingDataset& ds, std::size_t max_proposals);

// Argmax, ties to the lowest index. ValidationError when empty.
std::size_t localize(std::span<const double> scores);
// Best proposal for one phrase row (1 x d_t) among region rows.
std::size_t localize(const ModelParams& params, const Matrix& regions, const Matrix& phrase,
                     const ConceptWeights* weights);

struct CategoryStat {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct EvalReport {
  std::size_t phrases = 0;
  std::size_t correct = 0;
  std::size_t skipped = 0;  // phrases without proposals (counted as failures)
  double accuracy = 0.0;
  std::map<std::string, CategoryStat> categories;  // "unknown" when unlabeled
};

struct PhrasePrediction {
  std::size_t phrase = 0;
  long proposal = -1;  // -1 when the image has no proposals
  double iou = 0.0;
  bool correct = false;
};

// A phrase is correct when its best-scoring proposal reaches IOU 0.5 with
// the union box. Parallel over images.
EvalReport accuracy(const GroundingDataset& ds, std::span<const std::size_t> phrases,
                    const ImageScorer& scorer, std::size_t max_proposals,
                    std::vector<PhrasePrediction>* predictions = nullptr);
EvalReport accuracy(const GroundingModel& model, const GroundingDataset& ds, Split split,
                    std::size_t max_proposals);

// Fraction of phrases for which some proposal reaches IOU 0.5.
double oracle_upper_bound(const GroundingDataset& ds, std::span<const std::size_t> phrases,
                          std::size_t max_proposals);

// category,correct,total,accuracy with an "overall" first row.
std::string eval_report_csv(const EvalReport& report);

struct TopPhrase {
  std::string phrase_id;
  std::string text;
  double weight = 0.0;
};

struct ConceptStat {
  double mean = 0.0;
  double stddev = 0.0;
};

struct ConceptReport {
  std::size_t k = 0;
  std::map<std::string, std::vector<ConceptStat>> by_category;  // K entries each
  std::map<std::string, std::size_t> category_counts;
  std::vector<std::vector<TopPhrase>> top;  // K lists of up to 10
};

// From a weight matrix whose row i belongs to phrases[i].
ConceptReport concept_report(const Matrix& weights, const GroundingDataset& ds,
                             std::span<const std::size_t> phrases);
// Learned models only (ModeError otherwise).
ConceptReport concept_report(const ModelParams& params, const GroundingDataset& ds,
                             std::span<const std::size_t> phrases);
std::string concept_report_json(const ConceptReport& report);

// Phrase feature rows of the listed phrases.
Matrix phrase_rows(const GroundingDataset& ds, std::span<const std::size_t> phrases);

// Mean over phrases of ||phi||_1 (learned models only).
double mean_phi_l1(const ModelParams& params, const GroundingDataset& ds, std::span<const std::size_t> phrases);

// Majority-vote purity of cluster ids against reference labels.
double assignment_purity(std::span<const std::size_t> assignment, std::span<const int> labels);

}  // namespace cite
