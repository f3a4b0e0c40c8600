#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cite/matrix.hpp"

namespace cite {

enum class WeightSource { kCoarse, kKMeans, kRandom, kLearned };

// Per-phrase mixing weights over the K conditional embeddings. The factory
// checks the source-specific invariant: one-hot for kmeans/random, binary
// with a nonzero entry for coarse, sums to 1 for learned.
class ConceptWeights {
 public:
  static ConceptWeights make(std::vector<double> u, WeightSource source);
  static ConceptWeights one_hot(std::size_t k, std::size_t dims, WeightSource source);

  const std::vector<double>& values() const { return u_; }
  WeightSource source() const { return source_; }
  std::size_t size() const { return u_.size(); }
  std::size_t argmax() const;

 private:
  ConceptWeights(std::vector<double> u, WeightSource s) : u_(std::move(u)), source_(s) {}
  std::vector<double> u_;
  WeightSource source_;
};

// Lowercases, splits on anything that is not alphanumeric, '-' or '\'',
// drops stop words and rejoins with single spaces.
std::string normalize_phrase(std::string_view text);

inline constexpr std::array<const char*, 8> kCoarseCategories = {
    "people", "clothing", "body parts", "animals", "vehicles", "instruments", "scene", "other"};
inline constexpr std::size_t kOtherCategory = 7;

// Index into kCoarseCategories, or -1.
int coarse_category_index(std::string_view name);

class CoarseDictionary {
 public:
  CoarseDictionary() = default;

  // JSON object: category name -> list of phrases. Exactly the eight
  // category names are required (ConfigError otherwise).
  static CoarseDictionary load(const std::filesystem::path& path);
  static CoarseDictionary from_json_text(const std::string& text);

  void add(std::string_view phrase, std::size_t category);
  // Category of a normalized key, or -1 when absent.
  int find(const std::string& normalized) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, std::size_t>& entries() const { return entries_; }

 private:
  std::map<std::string, std::size_t> entries_;
};

// Binary 8-vector. The whole normalized phrase is looked up first; failing
// that every token found in the dictionary sets its category bit; failing
// that the phrase is "other".
ConceptWeights coarse_assign(std::string_view phrase_text, const CoarseDictionary& dict);

struct KMeansModel {
  Matrix centers;  // K x d
  std::uint64_t seed = 0;
  std::size_t iterations_run = 0;
  // Within-cluster sum of squares after every assignment step.
  std::vector<double> inertia_history;
};

// k-means++ seeding then Lloyd iterations until the assignment stops
// changing or max_iter is hit. Empty clusters are reseeded with the point
// farthest from its center. Centers are reordered by the first row of X
// assigned to each. ValidationError when rows < K or K == 0.
KMeansModel kmeans_fit(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iter);

// Nearest center by squared distance, ties to the lowest index.
std::size_t kmeans_nearest(std::span<const double> x, const Matrix& centers);
ConceptWeights kmeans_assign(std::span<const double> x, const KMeansModel& model);

// Nearest-center index for every row; parallel over rows.
std::vector<std::size_t> kmeans_assign_all(const Matrix& x, const Matrix& centers);
namespace serial {
std::vector<std::size_t> kmeans_assign_all(const Matrix& x, const Matrix& centers);
}

// Persistent random phrase -> embedding table. The first lookup of a key
// draws an index from a generator seeded by (seed, key) and records it;
// later lookups return the recorded index.
class RandomAssignmentTable {
 public:
  RandomAssignmentTable(std::size_t k, std::uint64_t seed);

  ConceptWeights assign(const std::string& phrase_key);
  std::size_t index_for(const std::string& phrase_key);
  // Recorded index, or the index a first lookup would draw (not recorded).
  std::size_t peek(const std::string& phrase_key) const;
  bool contains(const std::string& phrase_key) const { return table_.count(phrase_key) != 0; }

  std::size_t k() const { return k_; }
  std::uint64_t seed() const { return seed_; }
  const std::map<std::string, std::size_t>& entries() const { return table_; }

  void save(const std::filesystem::path& path) const;
  static RandomAssignmentTable load(const std::filesystem::path& path);

 private:
  std::size_t k_;
  std::uint64_t seed_;
  std::map<std::string, std::size_t> table_;
};

ConceptWeights random_assign(const std::string& phrase_key, RandomAssignmentTable& table);

}  // namespace cite
