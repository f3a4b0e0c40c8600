#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <random>

#include "cite/error.hpp"
#include "cite/network.hpp"
#include "test_util.hpp"

namespace cite {
namespace {

using testing::random_matrix;

// Plain-loop re-implementation of inference, written from the layer
// definitions and sharing no code with the tape.
namespace ref {

std::vector<double> stage(const std::vector<double>& x, const Stage& s) {
  const Matrix& w = s.fc.weight.value;
  std::vector<double> out(w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double a = 0;
    for (std::size_t i = 0; i < w.rows(); ++i) a += x[i] * w(i, j);
    const double z = (a - s.bn.running_mean[j]) / std::sqrt(s.bn.running_var[j] + s.bn.eps);
    out[j] = std::max(0.0, z * s.bn.gamma.value[j] + s.bn.beta.value[j]);
  }
  return out;
}

std::vector<double> normalize(std::vector<double> x) {
  double n = 0;
  for (double v : x) n += v * v;
  n = std::sqrt(n);
  for (double& v : x) v /= n;
  return x;
}

std::vector<double> weights(const ModelParams& p, const std::vector<double>& t) {
  const std::vector<double> h = stage(t, *p.concept1);
  const Matrix& w = p.concept2->weight.value;
  std::vector<double> phi(w.cols());
  double mx = -1e300;
  for (std::size_t k = 0; k < w.cols(); ++k) {
    phi[k] = p.concept2->bias->value[k];
    for (std::size_t i = 0; i < h.size(); ++i) phi[k] += h[i] * w(i, k);
    mx = std::max(mx, phi[k]);
  }
  double z = 0;
  for (double& v : phi) z += (v = std::exp(v - mx));
  for (double& v : phi) v /= z;
  return phi;
}

double score(const ModelParams& p, const std::vector<double>& v, const std::vector<double>& t,
             const std::vector<double>& u) {
  const auto iv = normalize(stage(stage(v, p.image1), p.image2));
  const auto it = normalize(stage(stage(t, p.text1), p.text2));
  std::vector<double> joint(iv.size());
  for (std::size_t i = 0; i < iv.size(); ++i) joint[i] = iv[i] * it[i];
  const auto p1 = stage(joint, p.joint);
  std::vector<double> fused(p1.size(), 0.0);
  for (std::size_t k = 0; k < p.conditional.size(); ++k) {
    const auto c = stage(p1, p.conditional[k]);
    for (std::size_t m = 0; m < c.size(); ++m) fused[m] += u[k] * c[m];
  }
  double x = p.classifier.bias->value[0];
  for (std::size_t m = 0; m < fused.size(); ++m) x += fused[m] * p.classifier.weight.value[m];
  return x;
}

}  // namespace ref

std::vector<double> row_of(const Matrix& m, std::size_t r) {
  return {m.row(r).begin(), m.row(r).end()};
}

// Non-trivial running statistics and affine BN parameters, so the oracle
// exercises every term.
void perturb_bn(ModelParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0, 0.3);
  std::uniform_real_distribution<double> uv(0.5, 2.0);
  for (Parameter* q : p.parameters()) {
    if (q->name.ends_with(".gamma")) for (double& v : q->value.data()) v = 1.0 + nd(rng);
    if (q->name.ends_with(".beta") || q->name == "classifier.b" || q->name == "concept2.b") {
      for (double& v : q->value.data()) v = nd(rng);
    }
  }
  p.for_each_tensor([&](const std::string& name, Matrix& m) {
    if (name.ends_with("running_mean")) for (double& v : m.data()) v = 0.1 * nd(rng);
    if (name.ends_with("running_var")) for (double& v : m.data()) v = uv(rng);
  });
}

ModelConfig small_config(std::size_t k, AssignmentMode mode, std::uint64_t seed = 3) {
  ModelConfig c;
  c.region_dim = 7;
  c.phrase_dim = 5;
  c.embed_dim = 4;
  c.num_embeddings = k;
  c.assignment = mode;
  c.seed = seed;
  return c;
}

TEST(InitModel, ParameterCountMatchesShapeScript) {
  // tests/oracles/param_count.py 64 64 256 4
  ModelConfig c;
  c.region_dim = 64;
  c.phrase_dim = 64;
  c.embed_dim = 256;
  c.num_embeddings = 4;
  EXPECT_EQ(init_model(c).parameter_count(), 2835205u);
  c.num_embeddings = 1;
  EXPECT_EQ(init_model(c).parameter_count(), 2633986u);
  // tests/oracles/param_count.py 64 64 256 1 --external
  c.assignment = AssignmentMode::kExternal;
  EXPECT_EQ(init_model(c).parameter_count(), 2565377u);
}

TEST(InitModel, SeedDeterminism) {
  const ModelParams a = init_model(small_config(3, AssignmentMode::kLearned, 1));
  const ModelParams b = init_model(small_config(3, AssignmentMode::kLearned, 1));
  const ModelParams c = init_model(small_config(3, AssignmentMode::kLearned, 2));
  std::vector<Matrix> ta, tb, tc;
  a.for_each_tensor([&](const std::string&, const Matrix& m) { ta.push_back(m); });
  b.for_each_tensor([&](const std::string&, const Matrix& m) { tb.push_back(m); });
  c.for_each_tensor([&](const std::string&, const Matrix& m) { tc.push_back(m); });
  bool any_diff = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(ta[i].data(), tb[i].data());
    any_diff = any_diff || ta[i].data() != tc[i].data();
  }
  EXPECT_TRUE(any_diff);
}

TEST(InitModel, ZeroDimsRejected) {
  ModelConfig c = small_config(2, AssignmentMode::kLearned);
  c.embed_dim = 0;
  EXPECT_THROW(init_model(c), ValidationError);
}

TEST(ConceptWeightsBranch, MatchesStraightLineOracle) {
  ModelParams p = init_model(small_config(3, AssignmentMode::kLearned));
  perturb_bn(p, 17);
  std::mt19937_64 rng(4);
  const Matrix t = random_matrix(6, 5, rng);
  const ConceptWeightsResult r = concept_weights(p, t);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto u = ref::weights(p, row_of(t, i));
    double s = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(r.weights(i, k), u[k], 1e-6);
      EXPECT_GT(r.weights(i, k), 0.0);
      s += r.weights(i, k);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(ConceptWeightsBranch, ZeroFinalLayerIsUniform) {
  ModelParams p = init_model(small_config(4, AssignmentMode::kLearned));
  p.concept2->weight.value.fill(0.0);
  p.concept2->bias->value.fill(0.0);
  std::mt19937_64 rng(5);
  const ConceptWeightsResult r = concept_weights(p, random_matrix(3, 5, rng));
  for (double v : r.weights.data()) EXPECT_NEAR(v, 0.25, 1e-12);
  for (double v : r.phi.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConceptWeightsBranch, ExternalModelRejected) {
  const ModelParams p = init_model(small_config(2, AssignmentMode::kExternal));
  EXPECT_THROW(concept_weights(p, Matrix(1, 5)), ModeError);
}

TEST(Score, LearnedMatchesStraightLineOracle) {
  ModelParams p = init_model(small_config(3, AssignmentMode::kLearned));
  perturb_bn(p, 23);
  std::mt19937_64 rng(6);
  const Matrix regions = random_matrix(3, 7, rng);
  const Matrix phrases = random_matrix(2, 5, rng);
  const ScoreResult s = score(p, regions, phrases, nullptr);
  ASSERT_EQ(s.scores.rows(), 2u);
  ASSERT_EQ(s.scores.cols(), 3u);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto u = ref::weights(p, row_of(phrases, i));
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(s.scores(i, j), ref::score(p, row_of(regions, j), row_of(phrases, i), u), 1e-6);
    }
  }
}

TEST(Score, ExternalMatchesStraightLineOracle) {
  ModelParams p = init_model(small_config(3, AssignmentMode::kExternal));
  perturb_bn(p, 29);
  std::mt19937_64 rng(7);
  const Matrix regions = random_matrix(3, 7, rng);
  const Matrix phrases = random_matrix(2, 5, rng);
  const std::vector<ConceptWeights> w{ConceptWeights::make({1, 0, 1}, WeightSource::kCoarse),
                                      ConceptWeights::one_hot(2, 3, WeightSource::kKMeans)};
  const ScoreResult s = score(p, regions, phrases, &w);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(s.scores(i, j),
                  ref::score(p, row_of(regions, j), row_of(phrases, i), w[i].values()), 1e-6);
    }
  }
}

TEST(Score, ExternalNeedsWeights) {
  const ModelParams p = init_model(small_config(2, AssignmentMode::kExternal));
  EXPECT_THROW(score(p, Matrix(2, 7), Matrix(1, 5), nullptr), ValidationError);
  const std::vector<ConceptWeights> w{ConceptWeights::one_hot(0, 2, WeightSource::kKMeans)};
  EXPECT_THROW(score(p, Matrix(2, 6), Matrix(1, 5), &w), DimensionError);
}

TEST(Score, FusedIsCTimesU) {
  ModelParams p = init_model(small_config(3, AssignmentMode::kLearned));
  perturb_bn(p, 31);
  std::mt19937_64 rng(8);
  const ScoreResult s = score(p, random_matrix(4, 7, rng), random_matrix(3, 5, rng), nullptr);
  const Matrix& u = s.trace.weights_value();
  const Matrix& f = s.trace.tape.value(s.trace.fused);
  for (std::size_t row = 0; row < 12; ++row) {
    const Matrix c = s.trace.conditional_matrix(row);
    for (std::size_t m = 0; m < 4; ++m) {
      double want = 0;
      for (std::size_t k = 0; k < 3; ++k) want += c(m, k) * u(row, k);
      EXPECT_NEAR(f(row, m), want, 1e-6);
    }
  }
}

TEST(Score, KOneLearnedEqualsBaseline) {
  ModelParams cite = init_model(small_config(1, AssignmentMode::kLearned, 12));
  ModelParams base = init_model(small_config(1, AssignmentMode::kExternal, 12));
  std::mt19937_64 rng(9);
  const Matrix regions = random_matrix(5, 7, rng);
  const Matrix phrases = random_matrix(4, 5, rng);
  const std::vector<ConceptWeights> ones(4, ConceptWeights::one_hot(0, 1, WeightSource::kKMeans));
  const Matrix a = score(cite, regions, phrases, nullptr).scores;
  const Matrix b = score(base, regions, phrases, &ones).scores;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Score, OneHotEqualsTruncatedModel) {
  ModelParams p = init_model(small_config(4, AssignmentMode::kExternal));
  perturb_bn(p, 37);
  std::mt19937_64 rng(10);
  const Matrix regions = random_matrix(5, 7, rng);
  const Matrix phrases = random_matrix(3, 5, rng);
  for (std::size_t k = 0; k < 4; ++k) {
    const std::vector<ConceptWeights> w(3, ConceptWeights::one_hot(k, 4, WeightSource::kKMeans));
    const std::vector<ConceptWeights> one(3, ConceptWeights::one_hot(0, 1, WeightSource::kKMeans));
    const Matrix a = score(p, regions, phrases, &w).scores;
    const Matrix b = score(truncate_to_embedding(p, k), regions, phrases, &one).scores;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  }
}

TEST(Score, FusionIsLinearInU) {
  ModelParams p = init_model(small_config(3, AssignmentMode::kExternal));
  perturb_bn(p, 41);
  std::mt19937_64 rng(11);
  const Matrix regions = random_matrix(4, 7, rng);
  const Matrix phrases = random_matrix(1, 5, rng);
  const std::vector<double> u1{0.2, 0.5, 0.3}, u2{0.7, 0.1, 0.2};
  for (double alpha : {0.0, 0.25, 0.6, 1.0}) {
    std::vector<double> mix(3);
    for (int k = 0; k < 3; ++k) mix[k] = alpha * u1[k] + (1 - alpha) * u2[k];
    const std::vector<ConceptWeights> w1{ConceptWeights::make(u1, WeightSource::kLearned)};
    const std::vector<ConceptWeights> w2{ConceptWeights::make(u2, WeightSource::kLearned)};
    const std::vector<ConceptWeights> wm{ConceptWeights::make(mix, WeightSource::kLearned)};
    const Matrix a = score(p, regions, phrases, &w1).scores;
    const Matrix b = score(p, regions, phrases, &w2).scores;
    const Matrix m = score(p, regions, phrases, &wm).scores;
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(m[j], alpha * a[j] + (1 - alpha) * b[j], 1e-5);
  }
}

TEST(Score, InferIsBatchIndependent) {
  ModelParams p = init_model(small_config(3, AssignmentMode::kLearned));
  perturb_bn(p, 43);
  std::mt19937_64 rng(12);
  const Matrix regions = random_matrix(6, 7, rng);
  const Matrix phrases = random_matrix(3, 5, rng);
  const Matrix all = score(p, regions, phrases, nullptr).scores;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      const Matrix one = score(p, Matrix::row_vector(regions.row(j)),
                               Matrix::row_vector(phrases.row(i)), nullptr)
                             .scores;
      EXPECT_NEAR(one[0], all(i, j), 1e-6);
    }
  }
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path path =
      std::filesystem::temp_directory_path() / ("cite_net_" + std::to_string(::getpid()) + ".ckpt");
  void TearDown() override { std::filesystem::remove(path); }
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  ModelParams p = init_model(small_config(4, AssignmentMode::kLearned));
  perturb_bn(p, 47);
  save_model(p, path);
  const ModelParams q = load_model(path);
  // The seed only drives initialization and is not stored.
  ModelConfig want = p.config;
  want.seed = q.config.seed;
  EXPECT_EQ(q.config, want);
  std::vector<std::pair<std::string, Matrix>> a, b;
  p.for_each_tensor([&](const std::string& n, const Matrix& m) { a.emplace_back(n, m); });
  q.for_each_tensor([&](const std::string& n, const Matrix& m) { b.emplace_back(n, m); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    ASSERT_EQ(a[i].second.size(), b[i].second.size());
    EXPECT_EQ(std::memcmp(a[i].second.data().data(), b[i].second.data().data(),
                          a[i].second.size() * sizeof(double)),
              0)
        << a[i].first;
  }
}

TEST_F(CheckpointTest, TruncatedFileIsCorruption) {
  save_model(init_model(small_config(2, AssignmentMode::kLearned)), path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 13);
  EXPECT_THROW(load_model(path), CorruptionError);
  std::filesystem::resize_file(path, 5);
  EXPECT_THROW(load_model(path), CorruptionError);
}

TEST_F(CheckpointTest, BadMagicIsCorruption) {
  std::ofstream(path, std::ios::binary) << "NOTAMODELFILE";
  EXPECT_THROW(load_model(path), CorruptionError);
}

TEST_F(CheckpointTest, KMismatchNamesTensor) {
  save_model(init_model(small_config(4, AssignmentMode::kLearned)), path);
  const ModelConfig want = small_config(8, AssignmentMode::kLearned);
  try {
    load_model(path, &want);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("cond4"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace cite
