#include "cite/network.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "cite/binary_io.hpp"
#include "cite/error.hpp"
#include "cite/rng.hpp"

namespace cite {

namespace {

constexpr char kMagic[] = "CITEMODL";

Parameter glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (double& v : w.data()) v = (2.0 * uniform01(rng) - 1.0) * limit;
  return Parameter(name, std::move(w));
}

Stage make_stage(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  return Stage{Dense{glorot(name + ".fc.W", in, out, rng), std::nullopt},
               BatchNormState(name + ".bn", out)};
}

template <typename StageT, typename Fn>
void visit_stage(StageT& s, Fn&& fn) {
  fn(s.fc.weight.name, s.fc.weight.value);
  fn(s.bn.gamma.name, s.bn.gamma.value);
  fn(s.bn.beta.name, s.bn.beta.value);
  const std::string prefix = s.bn.gamma.name.substr(0, s.bn.gamma.name.size() - 6);
  fn(prefix + ".running_mean", s.bn.running_mean);
  fn(prefix + ".running_var", s.bn.running_var);
}

template <typename Params, typename Fn>
void visit_all(Params& p, Fn&& fn) {
  visit_stage(p.image1, fn);
  visit_stage(p.image2, fn);
  visit_stage(p.text1, fn);
  visit_stage(p.text2, fn);
  visit_stage(p.joint, fn);
  for (auto& s : p.conditional) visit_stage(s, fn);
  fn(p.classifier.weight.name, p.classifier.weight.value);
  fn(p.classifier.bias->name, p.classifier.bias->value);
  if (p.concept1) {
    visit_stage(*p.concept1, fn);
    fn(p.concept2->weight.name, p.concept2->weight.value);
    fn(p.concept2->bias->name, p.concept2->bias->value);
  }
}

template <typename Params, typename P>
std::vector<P*> collect_parameters(Params& p) {
  std::vector<P*> out;
  auto stage = [&](auto& s) {
    out.push_back(&s.fc.weight);
    out.push_back(&s.bn.gamma);
    out.push_back(&s.bn.beta);
  };
  stage(p.image1);
  stage(p.image2);
  stage(p.text1);
  stage(p.text2);
  stage(p.joint);
  for (auto& s : p.conditional) stage(s);
  out.push_back(&p.classifier.weight);
  out.push_back(&*p.classifier.bias);
  if (p.concept1) {
    stage(*p.concept1);
    out.push_back(&p.concept2->weight);
    out.push_back(&*p.concept2->bias);
  }
  return out;
}

Var run_stage(Tape& t, Var in, Stage& s, Mode mode, bool update_running) {
  Var a = affine(t, in, t.param(s.fc.weight));
  Var b = batch_norm(t, a, s.bn, mode, update_running);
  return relu(t, b);
}

ForwardTrace forward_impl(ModelParams& p, const Matrix& regions, const Matrix& phrases,
                          const Matrix* weights, Mode mode, bool update_running, bool track) {
  const ModelConfig& cfg = p.config;
  if (regions.cols() != cfg.region_dim) {
    throw DimensionError("score: region features have " + std::to_string(regions.cols()) +
                         " columns, model expects " + std::to_string(cfg.region_dim));
  }
  if (phrases.cols() != cfg.phrase_dim) {
    throw DimensionError("score: phrase features have " + std::to_string(phrases.cols()) +
                         " columns, model expects " + std::to_string(cfg.phrase_dim));
  }
  if (regions.rows() != phrases.rows()) {
    throw DimensionError("score: " + std::to_string(regions.rows()) + " region rows vs " +
                         std::to_string(phrases.rows()) + " phrase rows");
  }
  const bool learned = cfg.assignment == AssignmentMode::kLearned;
  if (!learned) {
    if (weights == nullptr) throw ValidationError("score: external assignment needs concept weights");
    if (weights->rows() != regions.rows() || weights->cols() != cfg.num_embeddings) {
      throw DimensionError("score: concept weights " + weights->shape_string() + " for " +
                           std::to_string(regions.rows()) + " pairs and K=" +
                           std::to_string(cfg.num_embeddings));
    }
  }

  ForwardTrace tr(track);
  Tape& t = tr.tape;
  Var v = t.constant(regions);
  Var x = t.constant(phrases);

  tr.image_pre = run_stage(t, run_stage(t, v, p.image1, mode, update_running), p.image2, mode,
                           update_running);
  tr.image_out = l2_normalize_rows(t, tr.image_pre);
  tr.text_pre = run_stage(t, run_stage(t, x, p.text1, mode, update_running), p.text2, mode,
                          update_running);
  tr.text_out = l2_normalize_rows(t, tr.text_pre);
  tr.joint = hadamard(t, tr.image_out, tr.text_out);
  tr.p1 = run_stage(t, tr.joint, p.joint, mode, update_running);
  for (Stage& s : p.conditional) tr.conditional.push_back(run_stage(t, tr.p1, s, mode, update_running));

  if (learned) {
    Var h = run_stage(t, x, *p.concept1, mode, update_running);
    tr.phi = affine(t, h, t.param(p.concept2->weight), t.param(*p.concept2->bias));
    tr.weights = softmax_rows(t, tr.phi);
  } else {
    tr.weights = t.constant(*weights);
  }
  tr.fused = fuse(t, tr.conditional, tr.weights);
  tr.scores = affine(t, tr.fused, t.param(p.classifier.weight), t.param(*p.classifier.bias));
  return tr;
}

Matrix weights_matrix(const std::vector<ConceptWeights>& w, std::size_t k, std::size_t repeat) {
  Matrix out(w.size() * repeat, k);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i].size() != k) {
      throw DimensionError("concept weights of size " + std::to_string(w[i].size()) + " for K=" +
                           std::to_string(k));
    }
    for (std::size_t r = 0; r < repeat; ++r)
      for (std::size_t c = 0; c < k; ++c) out(i * repeat + r, c) = w[i].values()[c];
  }
  return out;
}

struct PairRows {
  Matrix regions;
  Matrix phrases;
};

PairRows expand_pairs(const Matrix& regions, const Matrix& phrases) {
  const std::size_t r = regions.rows();
  const std::size_t p = phrases.rows();
  std::vector<std::size_t> ri(p * r), pi(p * r);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      ri[i * r + j] = j;
      pi[i * r + j] = i;
    }
  }
  return {gather_rows(regions, ri), gather_rows(phrases, pi)};
}

}  // namespace

void ModelConfig::validate() const {
  if (region_dim == 0 || phrase_dim == 0 || embed_dim == 0 || num_embeddings == 0) {
    throw ValidationError("model config: dimensions must be >= 1 (d_v=" + std::to_string(region_dim) +
                          ", d_t=" + std::to_string(phrase_dim) + ", M=" + std::to_string(embed_dim) +
                          ", K=" + std::to_string(num_embeddings) + ")");
  }
}

std::vector<Parameter*> ModelParams::parameters() { return collect_parameters<ModelParams, Parameter>(*this); }

std::vector<const Parameter*> ModelParams::parameters() const {
  return collect_parameters<const ModelParams, const Parameter>(*this);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

void ModelParams::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

void ModelParams::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
  visit_all(*this, fn);
}

void ModelParams::for_each_tensor(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  visit_all(*this, fn);
}

ModelParams init_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t m = cfg.embed_dim;
  const std::size_t h = cfg.hidden_dim();
  ModelParams p;
  p.config = cfg;
  p.image1 = make_stage("image1", cfg.region_dim, h, rng);
  p.image2 = make_stage("image2", h, h, rng);
  p.text1 = make_stage("text1", cfg.phrase_dim, h, rng);
  p.text2 = make_stage("text2", h, h, rng);
  p.joint = make_stage("joint", h, m, rng);
  for (std::size_t k = 0; k < cfg.num_embeddings; ++k) {
    p.conditional.push_back(make_stage("cond" + std::to_string(k), m, m, rng));
  }
  p.classifier = Dense{glorot("classifier.W", m, 1, rng), Parameter("classifier.b", Matrix(1, 1))};
  // The concept branch is drawn last so every shared tensor is identical
  // between learned and external models built from the same seed.
  if (cfg.assignment == AssignmentMode::kLearned) {
    p.concept1 = make_stage("concept1", cfg.phrase_dim, h, rng);
    p.concept2 = Dense{glorot("concept2.W", h, cfg.num_embeddings, rng),
                       Parameter("concept2.b", Matrix(1, cfg.num_embeddings))};
  }
  return p;
}

Matrix ForwardTrace::conditional_matrix(std::size_t row) const {
  const std::size_t k = conditional.size();
  const std::size_t m = k == 0 ? 0 : tape.value(conditional[0]).cols();
  Matrix c(m, k);
  for (std::size_t j = 0; j < k; ++j) {
    const Matrix& ck = tape.value(conditional[j]);
    for (std::size_t i = 0; i < m; ++i) c(i, j) = ck(row, i);
  }
  return c;
}

ForwardTrace forward_pairs(ModelParams& params, const Matrix& region_rows, const Matrix& phrase_rows,
                           const Matrix* weights, Mode mode, bool update_running) {
  return forward_impl(params, region_rows, phrase_rows, weights, mode, update_running, true);
}

ForwardTrace forward_pairs(const ModelParams& params, const Matrix& region_rows,
                           const Matrix& phrase_rows, const Matrix* weights) {
  // Infer mode on an untracked tape reads parameters and running
  // statistics without writing to them.
  return forward_impl(const_cast<ModelParams&>(params), region_rows, phrase_rows, weights,
                      Mode::kInfer, false, false);
}

ConceptWeightsResult concept_weights(const ModelParams& params, const Matrix& phrases) {
  if (params.config.assignment != AssignmentMode::kLearned || !params.concept1) {
    throw ModeError("concept_weights: model uses external assignment");
  }
  if (phrases.cols() != params.config.phrase_dim) {
    throw DimensionError("concept_weights: phrase features " + phrases.shape_string());
  }
  auto& p = const_cast<ModelParams&>(params);
  Tape t(false);
  Var x = t.constant(phrases);
  Var h = run_stage(t, x, *p.concept1, Mode::kInfer, false);
  Var phi = affine(t, h, t.param(p.concept2->weight), t.param(*p.concept2->bias));
  Var u = softmax_rows(t, phi);
  return {t.value(u), t.value(phi)};
}

ScoreResult score(ModelParams& params, const Matrix& regions, const Matrix& phrases,
                  const std::vector<ConceptWeights>* weights, Mode mode) {
  if (params.config.assignment == AssignmentMode::kExternal) {
    if (weights == nullptr) throw ValidationError("score: external assignment needs concept weights");
    if (weights->size() != phrases.rows()) {
      throw DimensionError("score: " + std::to_string(weights->size()) + " weight vectors for " +
                           std::to_string(phrases.rows()) + " phrases");
    }
  }
  PairRows pairs = expand_pairs(regions, phrases);
  std::optional<Matrix> w;
  if (params.config.assignment == AssignmentMode::kExternal) {
    w = weights_matrix(*weights, params.config.num_embeddings, regions.rows());
  }
  ForwardTrace tr = forward_pairs(params, pairs.regions, pairs.phrases, w ? &*w : nullptr, mode);
  Matrix s(phrases.rows(), regions.rows(), tr.scores_value().data());
  return {std::move(s), std::move(tr)};
}

ScoreResult score(const ModelParams& params, const Matrix& regions, const Matrix& phrases,
                  const std::vector<ConceptWeights>* weights) {
  if (params.config.assignment == AssignmentMode::kExternal) {
    if (weights == nullptr) throw ValidationError("score: external assignment needs concept weights");
    if (weights->size() != phrases.rows()) {
      throw DimensionError("score: " + std::to_string(weights->size()) + " weight vectors for " +
                           std::to_string(phrases.rows()) + " phrases");
    }
  }
  PairRows pairs = expand_pairs(regions, phrases);
  std::optional<Matrix> w;
  if (params.config.assignment == AssignmentMode::kExternal) {
    w = weights_matrix(*weights, params.config.num_embeddings, regions.rows());
  }
  ForwardTrace tr = forward_pairs(params, pairs.regions, pairs.phrases, w ? &*w : nullptr);
  Matrix s(phrases.rows(), regions.rows(), tr.scores_value().data());
  return {std::move(s), std::move(tr)};
}

ModelParams truncate_to_embedding(const ModelParams& params, std::size_t k) {
  if (k >= params.conditional.size()) throw ValidationError("truncate_to_embedding: index out of range");
  ModelParams out = params;
  out.config.num_embeddings = 1;
  out.config.assignment = AssignmentMode::kExternal;
  out.conditional = {params.conditional[k]};
  out.concept1.reset();
  out.concept2.reset();
  return out;
}

void save_model(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  binio::write<std::uint32_t>(out, kCheckpointVersion);
  const ModelConfig& c = params.config;
  binio::write<std::uint64_t>(out, c.region_dim);
  binio::write<std::uint64_t>(out, c.phrase_dim);
  binio::write<std::uint64_t>(out, c.embed_dim);
  binio::write<std::uint64_t>(out, c.num_embeddings);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(c.assignment));
  std::uint64_t count = 0;
  params.for_each_tensor([&](const std::string&, const Matrix&) { ++count; });
  binio::write<std::uint64_t>(out, count);
  params.for_each_tensor([&](const std::string& name, const Matrix& m) {
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    binio::write_bytes(out, name);
    binio::write<std::uint32_t>(out, 2);
    binio::write<std::uint64_t>(out, m.rows());
    binio::write<std::uint64_t>(out, m.cols());
    for (double v : m.data()) binio::write<double>(out, v);
  });
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

ModelParams load_model(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const auto size = std::filesystem::file_size(path);
  binio::Reader r(in, "checkpoint " + path.string(), size);
  if (r.read_string(8) != std::string(kMagic, 8)) {
    throw CorruptionError("checkpoint " + path.string() + ": bad magic");
  }
  const auto version = r.read<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CorruptionError("checkpoint " + path.string() + ": unsupported version " +
                          std::to_string(version));
  }
  ModelConfig cfg;
  cfg.region_dim = r.read<std::uint64_t>();
  cfg.phrase_dim = r.read<std::uint64_t>();
  cfg.embed_dim = r.read<std::uint64_t>();
  cfg.num_embeddings = r.read<std::uint64_t>();
  const auto mode = r.read<std::uint32_t>();
  if (mode > 1) throw CorruptionError("checkpoint: unknown assignment mode " + std::to_string(mode));
  cfg.assignment = static_cast<AssignmentMode>(mode);
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw CorruptionError(std::string("checkpoint header: ") + e.what());
  }
  if (cfg.num_embeddings > (1u << 20) || cfg.embed_dim > (1u << 24)) {
    throw CorruptionError("checkpoint header: implausible dimensions");
  }

  std::map<std::string, Matrix> tensors;
  const auto count = r.read<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.read<std::uint32_t>();
    std::string name = r.read_string(name_len);
    const auto rank = r.read<std::uint32_t>();
    if (rank != 2) throw CorruptionError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    const auto rows = r.read<std::uint64_t>();
    const auto cols = r.read<std::uint64_t>();
    r.need(rows * cols * sizeof(double));
    Matrix m(rows, cols);
    for (double& v : m.data()) v = r.read<double>();
    tensors.emplace(std::move(name), std::move(m));
  }
  if (r.offset() != r.total()) {
    throw CorruptionError("checkpoint " + path.string() + ": " + std::to_string(r.total() - r.offset()) +
                          " trailing bytes");
  }

  if (expected != nullptr) {
    // Shape checks run against the caller's configuration so a mismatch
    // names the tensor that disagrees.
    ModelConfig want = *expected;
    want.seed = 0;
    ModelParams shape = init_model(want);
    shape.for_each_tensor([&](const std::string& name, const Matrix& m) {
      auto it = tensors.find(name);
      if (it == tensors.end()) {
        throw ShapeError("checkpoint " + path.string() + " has no tensor '" + name +
                         "' required by the requested configuration");
      }
      if (!it->second.same_shape(m)) {
        throw ShapeError("checkpoint tensor '" + name + "' has shape " + it->second.shape_string() +
                         ", configuration expects " + m.shape_string());
      }
    });
    if (tensors.size() != [&] {
          std::size_t n = 0;
          shape.for_each_tensor([&](const std::string&, const Matrix&) { ++n; });
          return n;
        }()) {
      throw ShapeError("checkpoint " + path.string() + " has tensors beyond the requested configuration");
    }
  }

  cfg.seed = 0;
  ModelParams p = init_model(cfg);
  p.for_each_tensor([&](const std::string& name, Matrix& m) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CorruptionError("checkpoint: missing tensor '" + name + "'");
    if (!it->second.same_shape(m)) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + it->second.shape_string() +
                       ", header implies " + m.shape_string());
    }
    m = it->second;
  });
  for (Parameter* prm : p.parameters()) prm->zero_grad();
  return p;
}

}  // namespace cite
