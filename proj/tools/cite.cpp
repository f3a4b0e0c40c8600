// cite: train, evaluate and inspect conditional image-text embedding models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cite/assignment.hpp"
#include "cite/config.hpp"
#include "cite/dataset.hpp"
#include "cite/error.hpp"
#include "cite/evaluation.hpp"
#include "cite/model_store.hpp"
#include "cite/parallel.hpp"
#include "cite/sweep.hpp"
#include "cite/synthetic.hpp"
#include "cite/training.hpp"

namespace fs = std::filesystem;
using namespace cite;

namespace {

struct ConfigFlags {
  std::string config_path;
  std::string preset;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::string assignment;
  std::optional<std::size_t> proposals;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file");
    app->add_option("--preset", preset, "flickr30k | referit | vgenome | synth");
    app->add_option("--set", overrides, "override, key=value (repeatable)");
    app->add_option("--seed", seed, "seed for training and generation");
    app->add_option("--k", k, "number of conditional embeddings");
    app->add_option("--assignment", assignment, "learned | kmeans | coarse | random");
    app->add_option("--proposals-per-image", proposals, "proposal budget per image (0 = all)");
  }

  RunConfig resolve() const {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config " + config_path);
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
    }
    if (!preset.empty()) j["preset"] = preset;
    RunConfig cfg = config_from_json_text(j.dump());
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) {
      cfg.train.seed = *seed;
      cfg.synth.seed = *seed;
    }
    if (k) cfg.num_embeddings = *k;
    if (!assignment.empty()) cfg.train.assignment = parse_method(assignment);
    if (proposals) cfg.proposals_per_image = *proposals;
    cfg.validate();
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void ensure_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "' (train|val|test)");
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::function<T(const std::string&)>& conv) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(conv(item));
  }
  if (out.empty()) throw ConfigError("empty list '" + text + "'");
  return out;
}

std::size_t parse_count(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  }
}

void progress(const EpochLog& e) {
  std::fprintf(stderr, "epoch %3zu  %-4s  lr %.3g  loss %.5f  val %.4f\n", e.epoch, phase_name(e.phase), e.lr,
               e.train_loss, e.val_accuracy);
}

int cmd_synth(const ConfigFlags& flags, const std::string& out) {
  const RunConfig cfg = flags.resolve();
  ensure_dir(out);
  const GroundingDataset ds = gen_synthetic(cfg.synth);
  save_dataset(ds, out);
  std::fprintf(stderr, "wrote %zu images, %zu phrases to %s\n", ds.images.size(), ds.phrases.size(), out.c_str());
  return 0;
}

int cmd_train(const ConfigFlags& flags, const std::string& data, const std::string& out) {
  const RunConfig cfg = flags.resolve();
  const GroundingDataset ds = load_dataset(data);
  ensure_dir(out);
  const TrainResult r = train(ds, cfg, TrainHooks{progress});
  save_grounding_model(r.model, cfg, out);
  write_text(fs::path(out) / "train_log.csv", training_log_csv(r.log));
  const EvalReport val = accuracy(r.model, ds, Split::kVal, cfg.proposals_per_image);
  write_text(fs::path(out) / "eval_val.csv", eval_report_csv(val));
  if (r.skipped_batches > 0) std::fprintf(stderr, "skipped %zu single-row batches\n", r.skipped_batches);
  std::printf("best_epoch %zu val_accuracy %.6f\n", r.best_epoch, r.best_val_accuracy);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split_name_arg,
             std::optional<std::size_t> proposals, bool oracle, bool concepts, const std::string& out) {
  const GroundingDataset ds = load_dataset(data);
  const Split split = parse_split(split_name_arg);
  if (!ds.has_split(split)) throw DataError("dataset " + data + " has no " + split_name_arg + " split");
  const LoadedModel lm = load_grounding_model(checkpoint, ds);
  const std::size_t budget = proposals.value_or(lm.proposals_per_image);
  ensure_dir(out);
  const auto idx = ds.split_indices(split);
  const EvalReport rep = accuracy(ds, idx, model_scorer(lm.model, ds, budget), budget);
  write_text(fs::path(out) / ("eval_" + split_name_arg + ".csv"), eval_report_csv(rep));
  std::printf("accuracy %.6f phrases %zu skipped %zu\n", rep.accuracy, rep.phrases, rep.skipped);
  if (oracle) {
    const double ub = oracle_upper_bound(ds, idx, budget);
    write_text(fs::path(out) / ("oracle_" + split_name_arg + ".txt"), std::to_string(ub) + "\n");
    std::printf("oracle %.6f\n", ub);
  }
  if (concepts) {
    const ConceptReport cr = concept_report(lm.model.params, ds, idx);
    write_text(fs::path(out) / ("concepts_" + split_name_arg + ".json"), concept_report_json(cr));
  }
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& data, const std::string& image_id,
                std::size_t phrase_row, std::optional<std::size_t> proposals) {
  const GroundingDataset ds = load_dataset(data);
  auto it = ds.image_index.find(image_id);
  if (it == ds.image_index.end()) throw DataError("unknown image id '" + image_id + "'");
  if (phrase_row >= ds.phrase_features.size()) {
    throw DataError("phrase feature row " + std::to_string(phrase_row) + " out of range");
  }
  const LoadedModel lm = load_grounding_model(checkpoint, ds);
  const std::size_t budget = proposals.value_or(lm.proposals_per_image);
  const ImageRecord& img = ds.images[it->second];
  const Matrix regions = region_inputs(ds, it->second, lm.model.spatial, budget);
  if (regions.rows() == 0) throw DataError("image '" + image_id + "' has no proposals");
  const std::vector<std::size_t> rows = {phrase_row};
  const Matrix phrase = gather_rows(ds.phrase_features.rows, rows);
  std::vector<ConceptWeights> weights;
  if (lm.model.assigner.external()) {
    // Weights follow the phrase that owns this feature row, if any.
    std::optional<std::size_t> owner;
    for (std::size_t i = 0; i < ds.phrases.size() && !owner; ++i) {
      if (ds.phrases[i].feature_row == phrase_row) owner = i;
    }
    if (!owner) throw DataError("no phrase uses feature row " + std::to_string(phrase_row));
    weights.push_back(lm.model.assigner.weights_for(ds, *owner));
  }
  const Matrix s = score(lm.model.params, regions, phrase, weights.empty() ? nullptr : &weights).scores;
  std::vector<std::size_t> order(s.cols());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s(0, a) > s(0, b); });
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t idx : order) {
    const BBox& b = img.proposals[idx];
    j.push_back({{"proposal", idx}, {"box", {b.x_min, b.y_min, b.x_max, b.y_max}}, {"score", s(0, idx)}});
  }
  std::cout << j.dump(1) << "\n";
  return 0;
}

int cmd_cluster(const ConfigFlags& flags, const std::string& data, const std::string& split_arg,
                const std::string& out) {
  const RunConfig cfg = flags.resolve();
  const GroundingDataset ds = load_dataset(data);
  const Split split = parse_split(split_arg);
  const auto idx = ds.split_indices(split);
  if (idx.empty()) throw DataError("dataset " + data + " has no " + split_arg + " split");
  ensure_dir(out);
  const Matrix x = phrase_rows(ds, idx);
  const KMeansModel m = kmeans_fit(x, cfg.num_embeddings, cfg.train.seed, cfg.kmeans_max_iter);
  PhraseAssigner::kmeans(m).save(out);
  const auto assign = kmeans_assign_all(x, m.centers);
  std::string csv = "phrase_id,cluster\n";
  for (std::size_t i = 0; i < idx.size(); ++i) csv += ds.phrases[idx[i]].phrase_id + "," + std::to_string(assign[i]) + "\n";
  write_text(fs::path(out) / "clusters.csv", csv);
  std::printf("k %zu iterations %zu inertia %.6f\n", cfg.num_embeddings, m.iterations_run,
              m.inertia_history.empty() ? 0.0 : m.inertia_history.back());
  return 0;
}

int cmd_gradcheck(const ConfigFlags& flags, std::size_t region_dim, std::size_t phrase_dim, std::size_t embed_dim,
                  std::size_t samples, const std::string& out) {
  RunConfig cfg = flags.resolve();
  ModelConfig mc;
  mc.region_dim = region_dim;
  mc.phrase_dim = phrase_dim;
  mc.embed_dim = embed_dim;
  mc.num_embeddings = flags.k.value_or(3);
  mc.assignment = cfg.train.assignment == AssignmentMethod::kLearned ? AssignmentMode::kLearned
                                                                    : AssignmentMode::kExternal;
  mc.seed = cfg.train.seed;
  mc.validate();
  ModelGradCheckOptions opts;
  opts.lambda = cfg.train.lambda;
  opts.check.samples_per_tensor = samples;
  opts.check.seed = cfg.train.seed;
  const GradCheckResult r = model_grad_check(mc, opts);
  char line[512];
  std::snprintf(line, sizeof line, "max_rel_error %.3e checked %zu skipped %zu worst %s[%zu]\n", r.max_rel_error,
                r.checked, r.skipped, r.worst_tensor.c_str(), r.worst_index);
  std::fputs(line, stdout);
  if (!out.empty()) {
    ensure_dir(out);
    write_text(fs::path(out) / "gradcheck.txt", line);
  }
  return r.max_rel_error < 1e-4 ? 0 : 1;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& data, const std::string& ks_arg,
              const std::string& methods_arg, const std::string& seeds_arg, const std::string& out) {
  const RunConfig cfg = flags.resolve();
  const GroundingDataset ds = load_dataset(data);
  const auto ks = parse_list<std::size_t>(ks_arg, parse_count);
  const auto methods = parse_list<AssignmentMethod>(
      methods_arg.empty() ? std::string(method_name(cfg.train.assignment)) : methods_arg, parse_method);
  const auto seeds = parse_list<std::uint64_t>(
      seeds_arg.empty() ? std::to_string(cfg.train.seed) : seeds_arg,
      [](const std::string& s) { return static_cast<std::uint64_t>(parse_count(s)); });
  ensure_dir(out);
  const auto cells = k_sweep(ds, cfg, ks, methods, seeds, [](const SweepCell& c) {
    std::fprintf(stderr, "K=%zu %s seed %llu: test %.4f %s\n", c.k, method_name(c.method),
                 static_cast<unsigned long long>(c.seed), c.test_accuracy, c.error.c_str());
  });
  write_text(fs::path(out) / "sweep.csv", sweep_csv(cells));
  write_text(fs::path(out) / "sweep.svg", sweep_svg(cells));
  std::cout << sweep_csv(cells);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_threads_from_env();
  CLI::App app{"Conditional image-text embeddings for phrase grounding"};
  app.require_subcommand(1);

  ConfigFlags flags;
  std::string out, data, checkpoint, split = "test", cluster_split = "train", image_id, ks = "1,2,4,8", methods, seeds;
  std::size_t phrase_row = 0, region_dim = 16, phrase_dim = 16, embed_dim = 8, samples = 200;
  std::optional<std::size_t> eval_proposals;
  bool oracle = false, concepts = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  flags.attach(synth);
  synth->add_option("--out", out, "output directory")->required();

  auto* trn = app.add_subcommand("train", "train a model");
  flags.attach(trn);
  trn->add_option("--data", data, "dataset directory")->required();
  trn->add_option("--out", out, "output directory")->required();

  auto* evl = app.add_subcommand("eval", "evaluate a trained model");
  evl->add_option("--checkpoint", checkpoint, "model directory or .ckpt file")->required();
  evl->add_option("--data", data, "dataset directory")->required();
  evl->add_option("--split", split, "train | val | test");
  evl->add_option("--proposals-per-image", eval_proposals, "proposal budget per image (0 = all)");
  evl->add_flag("--oracle", oracle, "also report the proposal upper bound");
  evl->add_flag("--concepts", concepts, "write the concept weight report");
  evl->add_option("--out", out, "output directory")->required();

  auto* pred = app.add_subcommand("predict", "rank the proposals of one image for a phrase");
  pred->add_option("--checkpoint", checkpoint, "model directory or .ckpt file")->required();
  pred->add_option("--data", data, "dataset directory")->required();
  pred->add_option("--image", image_id, "image id")->required();
  pred->add_option("--phrase-row", phrase_row, "phrase feature row")->required();
  pred->add_option("--proposals-per-image", eval_proposals, "proposal budget (0 = all)");

  auto* clu = app.add_subcommand("cluster", "k-means over phrase features");
  flags.attach(clu);
  clu->add_option("--data", data, "dataset directory")->required();
  clu->add_option("--split", cluster_split, "split to cluster");
  clu->add_option("--out", out, "output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  flags.attach(gc);
  gc->add_option("--region-dim", region_dim, "region feature size of the probe model");
  gc->add_option("--phrase-dim", phrase_dim, "phrase feature size of the probe model");
  gc->add_option("--embed-dim", embed_dim, "embedding size M of the probe model");
  gc->add_option("--samples", samples, "coordinates sampled per tensor");
  gc->add_option("--out", out, "optional output directory");

  auto* sw = app.add_subcommand("sweep", "accuracy as a function of K");
  flags.attach(sw);
  sw->add_option("--data", data, "dataset directory")->required();
  sw->add_option("--ks", ks, "comma-separated K values");
  sw->add_option("--methods", methods, "comma-separated assignment methods");
  sw->add_option("--seeds", seeds, "comma-separated seeds");
  sw->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(flags, out);
    if (*trn) return cmd_train(flags, data, out);
    if (*evl) return cmd_eval(checkpoint, data, split, eval_proposals, oracle, concepts, out);
    if (*pred) return cmd_predict(checkpoint, data, image_id, phrase_row, eval_proposals);
    if (*clu) return cmd_cluster(flags, data, cluster_split, out);
    if (*gc) return cmd_gradcheck(flags, region_dim, phrase_dim, embed_dim, samples, out);
    if (*sw) return cmd_sweep(flags, data, ks, methods, seeds, out);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
