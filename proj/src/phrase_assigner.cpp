#include "cite/phrase_assigner.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <json.hpp>

#include "cite/error.hpp"
#include "cite/rng.hpp"

namespace cite {

using nlohmann::json;

std::string random_key(const std::string& text) {
  std::string key = normalize_phrase(text);
  if (key.empty()) {
    key = text;
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  }
  return key;
}

PhraseAssigner PhraseAssigner::learned(std::size_t k) {
  if (k == 0) throw ValidationError("assigner: K must be at least 1");
  PhraseAssigner a;
  a.method_ = AssignmentMethod::kLearned;
  a.k_ = k;
  return a;
}

PhraseAssigner PhraseAssigner::kmeans(KMeansModel model) {
  PhraseAssigner a;
  a.method_ = AssignmentMethod::kKMeans;
  a.k_ = model.centers.rows();
  a.kmeans_ = std::move(model);
  return a;
}

PhraseAssigner PhraseAssigner::coarse(CoarseDictionary dict) {
  PhraseAssigner a;
  a.method_ = AssignmentMethod::kCoarse;
  a.k_ = kCoarseCategories.size();
  a.coarse_ = std::move(dict);
  return a;
}

PhraseAssigner PhraseAssigner::random(RandomAssignmentTable table) {
  PhraseAssigner a;
  a.method_ = AssignmentMethod::kRandom;
  a.k_ = table.k();
  a.random_ = std::move(table);
  return a;
}

PhraseAssigner PhraseAssigner::for_run(const RunConfig& cfg, const GroundingDataset& ds) {
  const std::size_t k = cfg.num_embeddings;
  switch (cfg.train.assignment) {
    case AssignmentMethod::kLearned:
      return learned(k);
    case AssignmentMethod::kKMeans: {
      const auto idx = ds.split_indices(cfg.kmeans_fit_split);
      if (idx.empty()) {
        throw DataError(std::string("k-means: the ") + split_name(cfg.kmeans_fit_split) + " split is empty");
      }
      std::vector<std::size_t> rows;
      for (std::size_t i : idx) rows.push_back(ds.phrases[i].feature_row);
      const Matrix x = gather_rows(ds.phrase_features.rows, rows);
      return kmeans(kmeans_fit(x, k, derive_seed(cfg.train.seed, 0x6b6d), cfg.kmeans_max_iter));
    }
    case AssignmentMethod::kCoarse: {
      if (k != kCoarseCategories.size()) throw ConfigError("coarse assignment needs num_embeddings = 8");
      if (ds.coarse_dictionary.empty()) {
        throw DataError("coarse assignment needs coarse_dictionary.json in the dataset directory");
      }
      CoarseDictionary dict;
      for (const auto& [category, phrases] : ds.coarse_dictionary) {
        const int c = coarse_category_index(category);
        if (c < 0) throw ConfigError("coarse dictionary: unknown category '" + category + "'");
        for (const auto& p : phrases) dict.add(p, static_cast<std::size_t>(c));
      }
      return coarse(std::move(dict));
    }
    case AssignmentMethod::kRandom: {
      RandomAssignmentTable table(k, derive_seed(cfg.train.seed, 0x726e64));
      for (const auto& p : ds.phrases) table.index_for(random_key(p.text));
      return random(std::move(table));
    }
  }
  throw ConfigError("unknown assignment method");
}

ConceptWeights PhraseAssigner::weights_for(const GroundingDataset& ds, std::size_t phrase) const {
  const PhraseSample& p = ds.phrases.at(phrase);
  switch (method_) {
    case AssignmentMethod::kLearned:
      throw ModeError("learned assignment has no external concept weights");
    case AssignmentMethod::kKMeans:
      return kmeans_assign(ds.phrase_features.rows.row(p.feature_row), *kmeans_);
    case AssignmentMethod::kCoarse:
      return coarse_assign(p.text, *coarse_);
    case AssignmentMethod::kRandom:
      return ConceptWeights::one_hot(random_->peek(random_key(p.text)), k_, WeightSource::kRandom);
  }
  throw ModeError("unknown assignment method");
}

std::vector<ConceptWeights> PhraseAssigner::weights_for(const GroundingDataset& ds,
                                                        std::span<const std::size_t> phrases) const {
  std::vector<ConceptWeights> out;
  out.reserve(phrases.size());
  for (std::size_t i : phrases) out.push_back(weights_for(ds, i));
  return out;
}

Matrix PhraseAssigner::weight_rows(const GroundingDataset& ds, std::span<const std::size_t> phrases) const {
  Matrix out(phrases.size(), k_);
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    const auto w = weights_for(ds, phrases[i]);
    std::copy(w.values().begin(), w.values().end(), out.row(i).begin());
  }
  return out;
}

void PhraseAssigner::save(const std::filesystem::path& dir) const {
  json j;
  j["method"] = method_name(method_);
  j["k"] = k_;
  if (kmeans_) {
    json centers = json::array();
    for (std::size_t r = 0; r < kmeans_->centers.rows(); ++r) {
      auto row = kmeans_->centers.row(r);
      centers.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["kmeans"] = {{"seed", kmeans_->seed}, {"iterations", kmeans_->iterations_run}, {"centers", centers}};
  }
  if (coarse_) {
    std::map<std::string, std::vector<std::string>> dict;
    for (const char* name : kCoarseCategories) dict[name] = {};
    for (const auto& [key, c] : coarse_->entries()) dict[kCoarseCategories[c]].push_back(key);
    j["coarse"] = dict;
  }
  if (random_) random_->save(dir / "random_table.json");
  const auto path = dir / "assignment.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

PhraseAssigner PhraseAssigner::load(const std::filesystem::path& dir) {
  const auto path = dir / "assignment.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    const json j = json::parse(in);
    const AssignmentMethod method = parse_method(j.at("method").get<std::string>());
    const std::size_t k = j.at("k").get<std::size_t>();
    switch (method) {
      case AssignmentMethod::kLearned:
        return learned(k);
      case AssignmentMethod::kKMeans: {
        const auto rows = j.at("kmeans").at("centers").get<std::vector<std::vector<double>>>();
        if (rows.size() != k || rows.empty()) throw DataError(path.string() + ": center count does not match k");
        KMeansModel m;
        m.seed = j.at("kmeans").at("seed").get<std::uint64_t>();
        m.iterations_run = j.at("kmeans").at("iterations").get<std::size_t>();
        m.centers = Matrix(rows.size(), rows[0].size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          if (rows[r].size() != m.centers.cols()) throw DataError(path.string() + ": ragged centers");
          std::copy(rows[r].begin(), rows[r].end(), m.centers.row(r).begin());
        }
        return kmeans(std::move(m));
      }
      case AssignmentMethod::kCoarse: {
        return coarse(CoarseDictionary::from_json_text(j.at("coarse").dump()));
      }
      case AssignmentMethod::kRandom: {
        auto table = RandomAssignmentTable::load(dir / "random_table.json");
        if (table.k() != k) throw DataError(path.string() + ": random table K does not match");
        return random(std::move(table));
      }
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  throw DataError(path.string() + ": unknown method");
}

}  // namespace cite
