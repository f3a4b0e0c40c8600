#include "cite/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include <json.hpp>

#include "cite/error.hpp"
#include "cite/parallel.hpp"

namespace cite {

namespace {

std::string category_of(const PhraseSample& p) { return p.category.empty() ? "unknown" : p.category; }

// Phrase positions grouped by image, images in first-seen order.
std::vector<std::pair<std::size_t, std::vector<std::size_t>>> group_by_image(
    const GroundingDataset& ds, std::span<const std::size_t> phrases) {
  std::map<std::size_t, std::size_t> slot;
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    const std::size_t img = ds.phrases.at(phrases[i]).image_index;
    auto [it, fresh] = slot.emplace(img, groups.size());
    if (fresh) groups.push_back({img, {}});
    groups[it->second].second.push_back(i);
  }
  return groups;
}

}  // namespace

Matrix phrase_rows(const GroundingDataset& ds, std::span<const std::size_t> phrases) {
  std::vector<std::size_t> rows;
  rows.reserve(phrases.size());
  for (std::size_t i : phrases) rows.push_back(ds.phrases.at(i).feature_row);
  return gather_rows(ds.phrase_features.rows, rows);
}

Matrix score_image(const GroundingModel& model, const GroundingDataset& ds, std::size_t image,
                   std::span<const std::size_t> phrases, std::size_t max_proposals) {
  const Matrix regions = region_inputs(ds, image, model.spatial, max_proposals);
  if (regions.rows() == 0) return Matrix(phrases.size(), 0);
  const Matrix text = phrase_rows(ds, phrases);
  if (model.assigner.external()) {
    const auto weights = model.assigner.weights_for(ds, phrases);
    return score(model.params, regions, text, &weights).scores;
  }
  return score(model.params, regions, text, nullptr).scores;
}

ImageScorer model_scorer(const GroundingModel& model, const GroundingDataset& ds, std::size_t max_proposals) {
  return [&model, &ds, max_proposals](std::size_t image, std::span<const std::size_t> phrases) {
    return score_image(model, ds, image, phrases, max_proposals);
  };
}

std::size_t localize(std::span<const double> scores) {
  if (scores.empty()) throw ValidationError("localize: empty proposal set");
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (scores[j] > scores[best]) best = j;
  }
  return best;
}

std::size_t localize(const ModelParams& params, const Matrix& regions, const Matrix& phrase,
                     const ConceptWeights* weights) {
  if (regions.rows() == 0) throw ValidationError("localize: empty proposal set");
  if (phrase.rows() != 1) throw DimensionError("localize: expected a single phrase row");
  std::vector<ConceptWeights> w;
  if (weights) w.push_back(*weights);
  const Matrix s = score(params, regions, phrase, weights ? &w : nullptr).scores;
  return localize(s.row(0));
}

EvalReport accuracy(const GroundingDataset& ds, std::span<const std::size_t> phrases,
                    const ImageScorer& scorer, std::size_t max_proposals,
                    std::vector<PhrasePrediction>* predictions) {
  const auto groups = group_by_image(ds, phrases);
  std::vector<PhrasePrediction> preds(phrases.size());
  std::vector<std::exception_ptr> errors(groups.size());
  const auto n = static_cast<std::ptrdiff_t>(groups.size());
#pragma omp parallel for schedule(dynamic) num_threads(thread_count())
  for (std::ptrdiff_t g = 0; g < n; ++g) {
    const auto& [image, members] = groups[static_cast<std::size_t>(g)];
    const ImageRecord& img = ds.images[image];
    const std::size_t budget = proposal_budget(img, max_proposals);
    std::vector<std::size_t> ids;
    for (std::size_t m : members) {
      preds[m].phrase = phrases[m];
      ids.push_back(phrases[m]);
    }
    if (budget == 0) continue;
    try {
      const Matrix s = scorer(image, ids);
      if (s.rows() != ids.size() || s.cols() != budget) {
        throw DimensionError("scorer returned " + s.shape_string() + " for " + std::to_string(ids.size()) +
                             " phrases and " + std::to_string(budget) + " proposals");
      }
      for (std::size_t q = 0; q < members.size(); ++q) {
        PhrasePrediction& p = preds[members[q]];
        const std::size_t best = localize(s.row(q));
        p.proposal = static_cast<long>(best);
        p.iou = iou(img.proposals[best], ds.phrases[ids[q]].gt_union);
        p.correct = p.iou >= kHitIou;
      }
    } catch (...) {
      errors[static_cast<std::size_t>(g)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvalReport report;
  for (const auto& p : preds) {
    const PhraseSample& s = ds.phrases[p.phrase];
    CategoryStat& c = report.categories[category_of(s)];
    ++c.total;
    ++report.phrases;
    if (p.proposal < 0) ++report.skipped;
    if (p.correct) {
      ++c.correct;
      ++report.correct;
    }
  }
  report.accuracy = report.phrases == 0 ? 0.0
                                        : static_cast<double>(report.correct) / static_cast<double>(report.phrases);
  if (predictions) *predictions = std::move(preds);
  return report;
}

EvalReport accuracy(const GroundingModel& model, const GroundingDataset& ds, Split split,
                    std::size_t max_proposals) {
  const auto idx = ds.split_indices(split);
  return accuracy(ds, idx, model_scorer(model, ds, max_proposals), max_proposals);
}

double oracle_upper_bound(const GroundingDataset& ds, std::span<const std::size_t> phrases,
                          std::size_t max_proposals) {
  if (phrases.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i : phrases) {
    const PhraseSample& p = ds.phrases.at(i);
    const ImageRecord& img = ds.images[p.image_index];
    const std::size_t budget = proposal_budget(img, max_proposals);
    for (std::size_t j = 0; j < budget; ++j) {
      if (iou(img.proposals[j], p.gt_union) >= kHitIou) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(phrases.size());
}

std::string eval_report_csv(const EvalReport& r) {
  std::string out = "category,correct,total,accuracy\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "overall,%zu,%zu,%.6f\n", r.correct, r.phrases, r.accuracy);
  out += buf;
  for (const auto& [name, c] : r.categories) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.6f\n", name.c_str(), c.correct, c.total, c.accuracy());
    out += buf;
  }
  return out;
}

ConceptReport concept_report(const Matrix& weights, const GroundingDataset& ds,
                             std::span<const std::size_t> phrases) {
  if (weights.rows() != phrases.size()) {
    throw DimensionError("concept_report: " + std::to_string(weights.rows()) + " weight rows for " +
                         std::to_string(phrases.size()) + " phrases");
  }
  ConceptReport rep;
  rep.k = weights.cols();
  std::map<std::string, std::vector<double>> sum, sum_sq;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    const std::string cat = category_of(ds.phrases.at(phrases[i]));
    auto& s = sum[cat];
    auto& q = sum_sq[cat];
    s.resize(rep.k, 0.0);
    q.resize(rep.k, 0.0);
    ++rep.category_counts[cat];
    for (std::size_t k = 0; k < rep.k; ++k) {
      s[k] += weights(i, k);
      q[k] += weights(i, k) * weights(i, k);
    }
  }
  for (const auto& [cat, count] : rep.category_counts) {
    auto& stats = rep.by_category[cat];
    const double n = static_cast<double>(count);
    for (std::size_t k = 0; k < rep.k; ++k) {
      const double mean = sum[cat][k] / n;
      const double var = std::max(0.0, sum_sq[cat][k] / n - mean * mean);
      stats.push_back({mean, std::sqrt(var)});
    }
  }
  rep.top.resize(rep.k);
  std::vector<std::size_t> order(phrases.size());
  for (std::size_t k = 0; k < rep.k; ++k) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (weights(a, k) != weights(b, k)) return weights(a, k) > weights(b, k);
      return ds.phrases[phrases[a]].phrase_id < ds.phrases[phrases[b]].phrase_id;
    });
    for (std::size_t r = 0; r < std::min<std::size_t>(10, order.size()); ++r) {
      const PhraseSample& p = ds.phrases[phrases[order[r]]];
      rep.top[k].push_back({p.phrase_id, p.text, weights(order[r], k)});
    }
  }
  return rep;
}

ConceptReport concept_report(const ModelParams& params, const GroundingDataset& ds,
                             std::span<const std::size_t> phrases) {
  if (params.config.assignment != AssignmentMode::kLearned) {
    throw ModeError("concept_report needs a model with a concept weight branch");
  }
  return concept_report(concept_weights(params, phrase_rows(ds, phrases)).weights, ds, phrases);
}

std::string concept_report_json(const ConceptReport& rep) {
  nlohmann::json j;
  j["k"] = rep.k;
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [cat, stats] : rep.by_category) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : stats) arr.push_back({{"mean", s.mean}, {"std", s.stddev}});
    cats[cat] = {{"count", rep.category_counts.at(cat)}, {"embeddings", arr}};
  }
  j["categories"] = cats;
  nlohmann::json top = nlohmann::json::array();
  for (const auto& list : rep.top) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : list) arr.push_back({{"phrase_id", t.phrase_id}, {"text", t.text}, {"weight", t.weight}});
    top.push_back(arr);
  }
  j["top_phrases"] = top;
  return j.dump(2) + "\n";
}

double mean_phi_l1(const ModelParams& params, const GroundingDataset& ds, std::span<const std::size_t> phrases) {
  if (phrases.empty()) return 0.0;
  const Matrix phi = concept_weights(params, phrase_rows(ds, phrases)).phi;
  double total = 0.0;
  for (double v : phi.data()) total += std::abs(v);
  return total / static_cast<double>(phrases.size());
}

double assignment_purity(std::span<const std::size_t> assignment, std::span<const int> labels) {
  if (assignment.size() != labels.size()) throw DimensionError("assignment_purity: length mismatch");
  if (assignment.empty()) return 0.0;
  std::map<std::size_t, std::map<int, std::size_t>> counts;
  for (std::size_t i = 0; i < assignment.size(); ++i) ++counts[assignment[i]][labels[i]];
  std::size_t majority = 0;
  for (const auto& [cluster, by_label] : counts) {
    std::size_t best = 0;
    for (const auto& [label, c] : by_label) best = std::max(best, c);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(assignment.size());
}

}  // namespace cite
