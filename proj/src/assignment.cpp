#include "cite/assignment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cite/error.hpp"
#include "cite/parallel.hpp"
#include "cite/rng.hpp"

namespace cite {

namespace {

const char* source_name(WeightSource s) {
  switch (s) {
    case WeightSource::kCoarse: return "coarse";
    case WeightSource::kKMeans: return "kmeans";
    case WeightSource::kRandom: return "random";
    case WeightSource::kLearned: return "learned";
  }
  return "?";
}

const std::set<std::string>& stop_words() {
  static const std::set<std::string> words = {
      "a",    "an",   "the",  "of",   "in",   "on",    "at",   "to",   "and",  "or",
      "with", "for",  "from", "by",   "is",   "are",   "his",  "her",  "its",  "their",
      "this", "that", "these", "those", "some", "as",  "into", "onto", "be",   "it"};
  return words;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

}  // namespace

ConceptWeights ConceptWeights::make(std::vector<double> u, WeightSource source) {
  if (u.empty()) throw ValidationError("concept weights: empty vector");
  for (double v : u) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ValidationError(std::string("concept weights (") + source_name(source) +
                            "): entries must be finite and non-negative");
    }
  }
  switch (source) {
    case WeightSource::kKMeans:
    case WeightSource::kRandom: {
      const auto ones = std::count(u.begin(), u.end(), 1.0);
      const auto zeros = std::count(u.begin(), u.end(), 0.0);
      if (ones != 1 || ones + zeros != static_cast<long>(u.size())) {
        throw ValidationError(std::string("concept weights (") + source_name(source) +
                              "): expected a one-hot vector");
      }
      break;
    }
    case WeightSource::kCoarse: {
      const bool binary = std::all_of(u.begin(), u.end(), [](double v) { return v == 0.0 || v == 1.0; });
      if (!binary || std::count(u.begin(), u.end(), 1.0) == 0) {
        throw ValidationError("concept weights (coarse): expected a nonzero binary vector");
      }
      break;
    }
    case WeightSource::kLearned: {
      double s = 0.0;
      for (double v : u) s += v;
      if (std::abs(s - 1.0) > 1e-6) {
        throw ValidationError("concept weights (learned): entries sum to " + std::to_string(s));
      }
      break;
    }
  }
  return ConceptWeights(std::move(u), source);
}

ConceptWeights ConceptWeights::one_hot(std::size_t k, std::size_t dims, WeightSource source) {
  if (k >= dims) throw ValidationError("one_hot: index out of range");
  std::vector<double> u(dims, 0.0);
  u[k] = 1.0;
  return make(std::move(u), source);
}

std::size_t ConceptWeights::argmax() const {
  return static_cast<std::size_t>(std::max_element(u_.begin(), u_.end()) - u_.begin());
}

std::string normalize_phrase(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && stop_words().count(cur) == 0) tokens.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '-' || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

int coarse_category_index(std::string_view name) {
  for (std::size_t i = 0; i < kCoarseCategories.size(); ++i) {
    if (name == kCoarseCategories[i]) return static_cast<int>(i);
  }
  return -1;
}

void CoarseDictionary::add(std::string_view phrase, std::size_t category) {
  if (category >= kCoarseCategories.size()) throw ValidationError("coarse dictionary: bad category");
  entries_[normalize_phrase(phrase)] = category;
}

int CoarseDictionary::find(const std::string& normalized) const {
  auto it = entries_.find(normalized);
  return it == entries_.end() ? -1 : static_cast<int>(it->second);
}

CoarseDictionary CoarseDictionary::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("coarse dictionary: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("coarse dictionary: expected a JSON object");
  std::set<std::string> seen;
  CoarseDictionary dict;
  for (const auto& [name, phrases] : j.items()) {
    const int idx = coarse_category_index(name);
    if (idx < 0) throw ConfigError("coarse dictionary: unknown category '" + name + "'");
    if (!phrases.is_array()) throw ConfigError("coarse dictionary: '" + name + "' must be a list");
    seen.insert(name);
    for (const auto& p : phrases) {
      if (!p.is_string()) throw ConfigError("coarse dictionary: phrases must be strings");
      dict.add(p.get<std::string>(), static_cast<std::size_t>(idx));
    }
  }
  if (seen.size() != kCoarseCategories.size()) {
    throw ConfigError("coarse dictionary: expected all 8 categories, found " +
                      std::to_string(seen.size()));
  }
  return dict;
}

CoarseDictionary CoarseDictionary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open coarse dictionary " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

ConceptWeights coarse_assign(std::string_view phrase_text, const CoarseDictionary& dict) {
  std::vector<double> u(kCoarseCategories.size(), 0.0);
  const std::string key = normalize_phrase(phrase_text);
  if (const int whole = dict.find(key); whole >= 0) {
    u[static_cast<std::size_t>(whole)] = 1.0;
    return ConceptWeights::make(std::move(u), WeightSource::kCoarse);
  }
  std::istringstream tokens(key);
  std::string tok;
  bool any = false;
  while (tokens >> tok) {
    if (const int c = dict.find(tok); c >= 0) {
      u[static_cast<std::size_t>(c)] = 1.0;
      any = true;
    }
  }
  if (!any) u[kOtherCategory] = 1.0;
  return ConceptWeights::make(std::move(u), WeightSource::kCoarse);
}

std::size_t kmeans_nearest(std::span<const double> x, const Matrix& centers) {
  if (x.size() != centers.cols()) {
    throw DimensionError("kmeans: point dim " + std::to_string(x.size()) + " vs centers " +
                         centers.shape_string());
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centers.rows(); ++k) {
    const double d = squared_distance(x, centers.row(k));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

std::vector<std::size_t> kmeans_assign_all(const Matrix& x, const Matrix& centers) {
  if (x.cols() != centers.cols()) throw DimensionError("kmeans: dimension mismatch");
  std::vector<std::size_t> out(x.rows());
  const long long n = static_cast<long long>(x.rows());
#pragma omp parallel for schedule(static) if (n > 256) num_threads(thread_count())
  for (long long i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = kmeans_nearest(x.row(static_cast<std::size_t>(i)), centers);
  }
  return out;
}

namespace serial {
std::vector<std::size_t> kmeans_assign_all(const Matrix& x, const Matrix& centers) {
  if (x.cols() != centers.cols()) throw DimensionError("kmeans: dimension mismatch");
  std::vector<std::size_t> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = kmeans_nearest(x.row(i), centers);
  return out;
}
}  // namespace serial

ConceptWeights kmeans_assign(std::span<const double> x, const KMeansModel& model) {
  return ConceptWeights::one_hot(kmeans_nearest(x, model.centers), model.centers.rows(),
                                 WeightSource::kKMeans);
}

KMeansModel kmeans_fit(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (k == 0) throw ValidationError("kmeans: K must be at least 1");
  if (n < k) {
    throw ValidationError("kmeans: " + std::to_string(n) + " points for K=" + std::to_string(k));
  }
  Rng rng(seed);
  Matrix centers(k, d);

  // k-means++ seeding.
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t pick = uniform_index(rng, n);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], squared_distance(x.row(i), centers.row(c)));
      total += dist[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      pick = uniform_index(rng, n);
      continue;
    }
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += dist[i];
      if (dist[i] > 0.0 && acc > target) {
        pick = i;
        break;
      }
    }
  }

  KMeansModel model;
  model.seed = seed;
  std::vector<std::size_t> assign(n, k);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iter, 1); ++iter) {
    std::vector<std::size_t> next = kmeans_assign_all(x, centers);

    // Reseed empty clusters with the point farthest from its own center.
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t a : next) ++counts[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[next[i]] <= 1) continue;
        const double dd = squared_distance(x.row(i), centers.row(next[i]));
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      if (far_d < 0.0) continue;
      --counts[next[far]];
      next[far] = c;
      counts[c] = 1;
      std::copy(x.row(far).begin(), x.row(far).end(), centers.row(c).begin());
    }

    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += squared_distance(x.row(i), centers.row(next[i]));
    model.inertia_history.push_back(inertia);
    model.iterations_run = iter + 1;

    const bool changed = next != assign;
    assign = std::move(next);
    if (!changed) break;

    Matrix sums(k, d);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = x.row(i);
      auto s = sums.row(assign[i]);
      for (std::size_t j = 0; j < d; ++j) s[j] += row[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) centers(c, j) = sums(c, j) / static_cast<double>(counts[c]);
    }
  }

  // Canonical order: by the first row assigned to each center.
  std::vector<std::size_t> first(k, n);
  for (std::size_t i = 0; i < n; ++i) first[assign[i]] = std::min(first[assign[i]], i);
  std::vector<std::size_t> order(k);
  for (std::size_t c = 0; c < k; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return first[a] < first[b]; });
  model.centers = Matrix(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy(centers.row(order[c]).begin(), centers.row(order[c]).end(),
              model.centers.row(c).begin());
  }
  return model;
}

RandomAssignmentTable::RandomAssignmentTable(std::size_t k, std::uint64_t seed) : k_(k), seed_(seed) {
  if (k == 0) throw ValidationError("random assignment: K must be at least 1");
}

std::size_t RandomAssignmentTable::peek(const std::string& phrase_key) const {
  auto it = table_.find(phrase_key);
  if (it != table_.end()) return it->second;
  Rng rng(derive_seed(seed_, fnv1a(phrase_key)));
  return uniform_index(rng, k_);
}

std::size_t RandomAssignmentTable::index_for(const std::string& phrase_key) {
  const std::size_t idx = peek(phrase_key);
  table_.emplace(phrase_key, idx);
  return idx;
}

ConceptWeights RandomAssignmentTable::assign(const std::string& phrase_key) {
  return ConceptWeights::one_hot(index_for(phrase_key), k_, WeightSource::kRandom);
}

void RandomAssignmentTable::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["k"] = k_;
  j["seed"] = seed_;
  j["table"] = table_;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

RandomAssignmentTable RandomAssignmentTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    RandomAssignmentTable t(j.at("k").get<std::size_t>(), j.at("seed").get<std::uint64_t>());
    t.table_ = j.at("table").get<std::map<std::string, std::size_t>>();
    for (const auto& [key, idx] : t.table_) {
      if (idx >= t.k_) throw DataError("random table: index out of range for '" + key + "'");
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("random table " + path.string() + ": " + e.what());
  }
}

ConceptWeights random_assign(const std::string& phrase_key, RandomAssignmentTable& table) {
  return table.assign(phrase_key);
}

}  // namespace cite
