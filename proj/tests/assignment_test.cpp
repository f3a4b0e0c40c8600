#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "cite/assignment.hpp"
#include "cite/error.hpp"
#include "test_util.hpp"

namespace cite {
namespace {

CoarseDictionary fixture_dictionary() {
  return CoarseDictionary::from_json_text(R"({
    "people": ["man", "woman", "a young girl"],
    "clothing": ["shirt", "hat"],
    "body parts": ["hand"],
    "animals": ["dog"],
    "vehicles": ["scooter", "car"],
    "instruments": ["guitar"],
    "scene": ["street"],
    "other": []
  })");
}

TEST(ConceptWeights, SourceInvariantsChecked) {
  EXPECT_NO_THROW(ConceptWeights::make({0, 1, 0}, WeightSource::kKMeans));
  EXPECT_THROW(ConceptWeights::make({0.5, 0.5}, WeightSource::kKMeans), ValidationError);
  EXPECT_THROW(ConceptWeights::make({1, 1}, WeightSource::kRandom), ValidationError);
  EXPECT_NO_THROW(ConceptWeights::make({1, 0, 1}, WeightSource::kCoarse));
  EXPECT_THROW(ConceptWeights::make({0, 0, 0}, WeightSource::kCoarse), ValidationError);
  EXPECT_NO_THROW(ConceptWeights::make({0.25, 0.75}, WeightSource::kLearned));
  EXPECT_THROW(ConceptWeights::make({0.25, 0.7}, WeightSource::kLearned), ValidationError);
}

TEST(NormalizePhrase, LowercasesAndDropsStopWords) {
  EXPECT_EQ(normalize_phrase("A Man"), "man");
  EXPECT_EQ(normalize_phrase("the  red, scooter!"), "red scooter");
}

TEST(Coarse, ManIsPeople) {
  const auto w = coarse_assign("a man", fixture_dictionary());
  EXPECT_EQ(w.values(), std::vector<double>({1, 0, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(w.source(), WeightSource::kCoarse);
}

TEST(Coarse, RedScooterIsVehicles) {
  const auto w = coarse_assign("red scooter", fixture_dictionary());
  EXPECT_EQ(w.values(), std::vector<double>({0, 0, 0, 0, 1, 0, 0, 0}));
}

TEST(Coarse, UnseenIsOther) {
  const auto w = coarse_assign("a shimmering nebula", fixture_dictionary());
  EXPECT_EQ(w.argmax(), kOtherCategory);
  EXPECT_DOUBLE_EQ(w.values()[kOtherCategory], 1.0);
}

TEST(Coarse, WholePhraseWinsOverTokens) {
  const auto w = coarse_assign("A young girl", fixture_dictionary());
  EXPECT_EQ(w.values(), std::vector<double>({1, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(Coarse, SeveralTokensGiveMultiHot) {
  const auto w = coarse_assign("man with a guitar", fixture_dictionary());
  EXPECT_EQ(w.values(), std::vector<double>({1, 0, 0, 0, 0, 1, 0, 0}));
}

TEST(Coarse, DictionaryNeedsAllEightCategories) {
  EXPECT_THROW(CoarseDictionary::from_json_text(R"({"people": ["man"]})"), ConfigError);
  EXPECT_THROW(CoarseDictionary::from_json_text(R"({"robots": []})"), ConfigError);
  EXPECT_THROW(CoarseDictionary::from_json_text("[1,2]"), ConfigError);
}

TEST(KMeans, DistinctPointsBecomeCenters) {
  const Matrix x{{5, 5}, {-1, 2}, {3, 0}};
  const KMeansModel m = kmeans_fit(x, 3, 7, 50);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(m.centers(i, j), x(i, j));
  }
}

TEST(KMeans, TwoClusters1D) {
  const Matrix x{{0}, {0.1}, {10}, {10.1}};
  const KMeansModel m = kmeans_fit(x, 2, 0, 100);
  EXPECT_NEAR(m.centers(0, 0), 0.05, 1e-12);
  EXPECT_NEAR(m.centers(1, 0), 10.05, 1e-12);
}

TEST(KMeans, SingleClusterIsMean) {
  std::mt19937_64 rng(5);
  const Matrix x = testing::random_matrix(50, 3, rng);
  const KMeansModel m = kmeans_fit(x, 1, 0, 10);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 50; ++i) s += x(i, j);
    EXPECT_NEAR(m.centers(0, j), s / 50, 1e-12);
  }
}

TEST(KMeans, TooFewPointsThrows) {
  EXPECT_THROW(kmeans_fit(Matrix{{1}, {2}}, 3, 0, 10), ValidationError);
  EXPECT_THROW(kmeans_fit(Matrix{{1}, {2}}, 0, 0, 10), ValidationError);
}

TEST(KMeans, InertiaNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix x = testing::random_matrix(200, 4, rng);
    const KMeansModel m = kmeans_fit(x, 6, seed, 100);
    ASSERT_FALSE(m.inertia_history.empty());
    for (std::size_t i = 1; i < m.inertia_history.size(); ++i) {
      EXPECT_LE(m.inertia_history[i], m.inertia_history[i - 1] + 1e-9);
    }
  }
}

TEST(KMeans, Deterministic) {
  std::mt19937_64 rng(9);
  const Matrix x = testing::random_matrix(120, 5, rng);
  const KMeansModel a = kmeans_fit(x, 4, 3, 100);
  const KMeansModel b = kmeans_fit(x, 4, 3, 100);
  EXPECT_EQ(a.centers.data(), b.centers.data());
  EXPECT_EQ(a.iterations_run, b.iterations_run);
}

TEST(KMeans, AssignExamples) {
  KMeansModel m;
  m.centers = Matrix{{0.05}, {10.05}};
  EXPECT_EQ(kmeans_assign(std::vector<double>{0.2}, m).argmax(), 0u);
  EXPECT_EQ(kmeans_assign(std::vector<double>{10.05}, m).argmax(), 1u);
  // Equidistant: the lower index wins.
  m.centers = Matrix{{-1}, {1}};
  const auto w = kmeans_assign(std::vector<double>{0.0}, m);
  EXPECT_EQ(w.values(), std::vector<double>({1, 0}));
  EXPECT_THROW(kmeans_assign(std::vector<double>{0, 0}, m), DimensionError);
}

TEST(KMeans, ParallelAssignMatchesSerial) {
  std::mt19937_64 rng(11);
  const Matrix x = testing::random_matrix(1000, 8, rng);
  const Matrix c = testing::random_matrix(7, 8, rng);
  EXPECT_EQ(kmeans_assign_all(x, c), serial::kmeans_assign_all(x, c));
}

TEST(RandomAssign, Persistent) {
  RandomAssignmentTable t(5, 42);
  const auto a = random_assign("dog", t);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(random_assign("dog", t).values(), a.values());
  EXPECT_TRUE(t.contains("dog"));
}

TEST(RandomAssign, KOneAlwaysZero) {
  RandomAssignmentTable t(1, 3);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(random_assign("p" + std::to_string(i), t).values(), std::vector<double>{1.0});
  }
}

TEST(RandomAssign, FrequenciesNearUniform) {
  RandomAssignmentTable t(4, 2024);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 10000; ++i) ++counts[t.index_for("phrase " + std::to_string(i))];
  for (int c : counts) {
    EXPECT_GE(c / 10000.0, 0.22);
    EXPECT_LE(c / 10000.0, 0.28);
  }
}

TEST(RandomAssign, SameSeedSameTableAndRoundTrip) {
  RandomAssignmentTable a(4, 8), b(4, 8);
  for (int i = 0; i < 200; ++i) {
    const std::string key = "k" + std::to_string(i * 7 % 50);
    EXPECT_EQ(a.index_for(key), b.index_for(key));
  }
  const auto path = std::filesystem::temp_directory_path() / "cite_random_table_test.json";
  a.save(path);
  RandomAssignmentTable c = RandomAssignmentTable::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(c.entries(), a.entries());
  EXPECT_EQ(c.k(), a.k());
  EXPECT_EQ(c.seed(), a.seed());
  EXPECT_EQ(c.peek("fresh"), a.peek("fresh"));
}

TEST(RandomAssign, PeekDoesNotRecord) {
  RandomAssignmentTable t(6, 1);
  const std::size_t p = t.peek("cat");
  EXPECT_FALSE(t.contains("cat"));
  EXPECT_EQ(t.index_for("cat"), p);
}

}  // namespace
}  // namespace cite
