#include "cite/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cite/assignment.hpp"
#include "cite/error.hpp"
#include "cite/rng.hpp"

namespace cite {

namespace {

const std::array<std::array<const char*, 6>, 8> kNouns = {{
    {"man", "woman", "boy", "girl", "child", "person"},
    {"shirt", "hat", "jacket", "dress", "scarf", "jeans"},
    {"hand", "face", "arm", "leg", "hair", "foot"},
    {"dog", "cat", "horse", "bird", "cow", "sheep"},
    {"car", "bike", "bus", "truck", "boat", "scooter"},
    {"guitar", "drum", "violin", "piano", "flute", "trumpet"},
    {"street", "field", "beach", "room", "park", "water"},
    {"ball", "table", "sign", "bag", "chair", "cup"},
}};

const std::array<std::array<const char*, 3>, 4> kAdjectives = {{
    {"red", "crimson", "pink"},
    {"blue", "navy", "teal"},
    {"green", "olive", "lime"},
    {"yellow", "golden", "orange"},
}};

std::string noun_for(std::size_t cid, std::size_t i) {
  if (cid < kNouns.size()) return kNouns[cid][i % 6];
  return "object" + std::to_string(cid) + char('a' + i % 6);
}

std::string adjective_for(std::size_t group, std::size_t i) {
  if (group < kAdjectives.size()) return kAdjectives[group][i % 3];
  return "tone" + std::to_string(group) + char('a' + i % 3);
}

Matrix gaussian(Rng& rng, std::size_t r, std::size_t c, double scale) {
  Matrix m(r, c);
  for (double& v : m.data()) v = scale * normal01(rng);
  return m;
}

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

}  // namespace

void SynthConfig::validate() const {
  if (concepts == 0 || regions_per_image == 0 || phrases_per_image == 0 || region_dim == 0 ||
      phrase_dim == 0 || attribute_dim == 0 || concepts_per_image == 0 || nuisance_groups == 0 ||
      concept_modes == 0) {
    throw ValidationError("synthetic config: counts and dimensions must be positive");
  }
  if (train_images + val_images + test_images == 0) {
    throw ValidationError("synthetic config: no images requested");
  }
  if (phrases_per_image > regions_per_image) {
    throw ValidationError("synthetic config: more phrases than regions per image");
  }
  if (!(noise >= 0) || !(jitter >= 0) || !(concept_strength >= 0) || !(region_concept_strength >= 0) || !(nuisance_strength >= 0)) {
    throw ValidationError("synthetic config: noise, jitter and strengths must be >= 0");
  }
  if (!(image_width > 0 && image_height > 0)) {
    throw ValidationError("synthetic config: image size must be positive");
  }
}

GroundingDataset gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t G = cfg.concepts;
  const std::size_t dv = cfg.region_dim;
  const std::size_t dt = cfg.phrase_dim;
  const std::size_t dz = cfg.attribute_dim;
  const double a = cfg.concept_strength;
  const double av = cfg.region_concept_strength;
  const double b = cfg.nuisance_strength;

  // Model tensors and the per-image draws use separate streams so that
  // changing image counts leaves the concept structure intact.
  Rng model_rng(derive_seed(cfg.seed, 1));
  const Matrix mu_v = gaussian(model_rng, G, dv, 1.0);
  const Matrix mu_t = gaussian(model_rng, G, dt, 1.0);
  const Matrix nu = gaussian(model_rng, cfg.nuisance_groups, dt, 1.0);
  const Matrix A_v = gaussian(model_rng, dv, dz, 1.0 / std::sqrt(static_cast<double>(dz)));
  const Matrix A_t = gaussian(model_rng, dt, dz, 1.0 / std::sqrt(static_cast<double>(dz)));
  // Per attribute, half the concepts flip it: averaged over concepts the
  // region/phrase attribute agreement cancels out.
  Matrix signs(G, dz);
  std::vector<double> column(G);
  for (std::size_t k = 0; k < dz; ++k) {
    for (std::size_t c = 0; c < G; ++c) column[c] = c < G / 2 ? -1.0 : 1.0;
    std::shuffle(column.begin(), column.end(), model_rng);
    for (std::size_t c = 0; c < G; ++c) signs(c, k) = column[c];
  }
  // Multi-mode concepts: G * modes points evenly spaced on a circle in a
  // random plane, concept c owning every G-th point. For modes = 2 the two
  // modes are antipodal, so no hyperplane isolates a concept.
  const std::size_t modes = cfg.concept_modes;
  Matrix plane(2, dt);
  if (modes > 1) {
    plane = gaussian(model_rng, 2, dt, 1.0);
    auto norm_row = [&](std::size_t r) {
      double n = 0.0;
      for (std::size_t d = 0; d < dt; ++d) n += plane(r, d) * plane(r, d);
      n = std::sqrt(n);
      for (std::size_t d = 0; d < dt; ++d) plane(r, d) *= std::sqrt(static_cast<double>(dt)) / n;
    };
    norm_row(0);
    double dot = 0.0;
    for (std::size_t d = 0; d < dt; ++d) dot += plane(0, d) * plane(1, d);
    for (std::size_t d = 0; d < dt; ++d) plane(1, d) -= dot / static_cast<double>(dt) * plane(0, d);
    norm_row(1);
  }

  Rng rng(derive_seed(cfg.seed, 2));
  const ImageSize size{cfg.image_width, cfg.image_height};
  const std::size_t R = cfg.regions_per_image;
  const std::size_t grid_rows = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(R / 2.0)));
  const std::size_t grid_cols = (R + grid_rows - 1) / grid_rows;
  const double cell_w = size.width / static_cast<double>(grid_cols);
  const double cell_h = size.height / static_cast<double>(grid_rows);
  const std::size_t per_image_concepts = std::min(cfg.concepts_per_image, G);
  const std::size_t copies = cfg.copies_per_region;

  GroundingDataset ds;
  std::vector<double> region_rows;
  std::vector<double> phrase_rows;
  const std::size_t total_images = cfg.train_images + cfg.val_images + cfg.test_images;

  std::vector<std::size_t> concept_pool(G);
  std::iota(concept_pool.begin(), concept_pool.end(), 0);

  for (std::size_t im = 0; im < total_images; ++im) {
    const Split split = im < cfg.train_images                    ? Split::kTrain
                        : im < cfg.train_images + cfg.val_images ? Split::kVal
                                                                 : Split::kTest;
    ImageRecord img;
    img.id = "img" + std::to_string(im);
    img.size = size;

    // Concepts present in this image, spread evenly over its regions.
    for (std::size_t i = 0; i < per_image_concepts; ++i) {
      std::swap(concept_pool[i], concept_pool[i + uniform_index(rng, G - i)]);
    }
    std::vector<std::size_t> region_concept(R);
    for (std::size_t r = 0; r < R; ++r) region_concept[r] = concept_pool[r % per_image_concepts];
    std::shuffle(region_concept.begin(), region_concept.end(), rng);

    std::vector<BBox> boxes(R);
    std::vector<std::vector<double>> clean(R, std::vector<double>(dv));
    std::vector<std::vector<double>> attrs(R, std::vector<double>(dz));
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t c = region_concept[r];
      const double cx = static_cast<double>(r % grid_cols) * cell_w;
      const double cy = static_cast<double>(r / grid_cols) * cell_h;
      double fw, fh, px, py;
      if (cfg.spatial_bias) {
        const double scale = 0.35 + 0.5 * static_cast<double>(c) / static_cast<double>(std::max<std::size_t>(G - 1, 1));
        fw = std::clamp(scale + uniform(rng, -0.05, 0.05), 0.1, 1.0);
        fh = std::clamp(scale + uniform(rng, -0.05, 0.05), 0.1, 1.0);
        px = uniform01(rng);
        py = (c % 2 == 0) ? 0.0 : 1.0;
      } else {
        fw = uniform(rng, 0.5, 0.9);
        fh = uniform(rng, 0.5, 0.9);
        px = uniform01(rng);
        py = uniform01(rng);
      }
      const double w = fw * cell_w;
      const double h = fh * cell_h;
      const double x0 = cx + px * (cell_w - w);
      const double y0 = cy + py * (cell_h - h);
      boxes[r] = BBox{x0, y0, x0 + w, y0 + h};

      for (double& v : attrs[r]) v = normal01(rng);
      for (std::size_t d = 0; d < dv; ++d) {
        double proj = 0.0;
        for (std::size_t k = 0; k < dz; ++k) proj += A_v(d, k) * signs(c, k) * attrs[r][k];
        clean[r][d] = av * mu_v(c, d) + proj;
      }
    }

    // Proposals: every region box plus jittered copies, shuffled.
    struct Proposal {
      BBox box;
      std::size_t region;
    };
    std::vector<Proposal> props;
    for (std::size_t r = 0; r < R; ++r) {
      props.push_back({boxes[r], r});
      for (std::size_t k = 0; k < copies; ++k) {
        const BBox& g = boxes[r];
        BBox j{g.x_min + uniform(rng, -cfg.jitter, cfg.jitter) * g.width(),
               g.y_min + uniform(rng, -cfg.jitter, cfg.jitter) * g.height(),
               g.x_max + uniform(rng, -cfg.jitter, cfg.jitter) * g.width(),
               g.y_max + uniform(rng, -cfg.jitter, cfg.jitter) * g.height()};
        j = clamp_to_image(j, size);
        if (!(j.width() > 0 && j.height() > 0)) j = g;
        props.push_back({j, r});
      }
    }
    std::shuffle(props.begin(), props.end(), rng);
    for (std::size_t p = 0; p < props.size(); ++p) {
      img.proposals.push_back(props[p].box);
      img.proposal_rows.push_back(ds.region_features.ids.size());
      ds.region_features.ids.push_back(img.id + "_prop" + std::to_string(p));
      for (std::size_t d = 0; d < dv; ++d) {
        region_rows.push_back(f32(clean[props[p].region][d] + cfg.noise * normal01(rng)));
      }
    }

    // Phrases describe distinct regions.
    std::vector<std::size_t> order(R);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t image_index = ds.images.size();
    for (std::size_t q = 0; q < cfg.phrases_per_image; ++q) {
      const std::size_t r = order[q];
      const std::size_t c = region_concept[r];
      const std::size_t n = uniform_index(rng, cfg.nuisance_groups);
      PhraseSample p;
      p.phrase_id = img.id + "_p" + std::to_string(q);
      p.image_id = img.id;
      p.image_index = image_index;
      std::vector<double> signature(dt);
      std::size_t noun = 0;
      if (modes > 1) {
        const std::size_t j = uniform_index(rng, modes);
        const double theta = 6.283185307179586 * static_cast<double>(c + G * j) /
                             static_cast<double>(G * modes);
        for (std::size_t d = 0; d < dt; ++d) {
          signature[d] = std::cos(theta) * plane(0, d) + std::sin(theta) * plane(1, d);
        }
        // Each mode has its own nouns, like synonyms far apart in text space.
        noun = (j * 6 / modes + uniform_index(rng, std::max<std::size_t>(6 / modes, 1))) % 6;
      } else {
        for (std::size_t d = 0; d < dt; ++d) signature[d] = mu_t(c, d);
        noun = uniform_index(rng, 6);
      }
      p.text = "a " + adjective_for(n, uniform_index(rng, 3)) + " " + noun_for(c, noun);
      p.category = kCoarseCategories[c % kCoarseCategories.size()];
      p.latent_concept = static_cast<int>(c);
      p.feature_row = ds.phrase_features.ids.size();
      p.gt_boxes = {boxes[r]};
      p.gt_union = boxes[r];
      p.split = split;
      ds.phrase_features.ids.push_back(p.phrase_id);
      for (std::size_t d = 0; d < dt; ++d) {
        double proj = 0.0;
        for (std::size_t k = 0; k < dz; ++k) proj += A_t(d, k) * attrs[r][k];
        phrase_rows.push_back(f32(a * signature[d] + proj + b * nu(n, d) + cfg.noise * normal01(rng)));
      }
      ds.phrases.push_back(std::move(p));
    }
    ds.image_index.emplace(img.id, image_index);
    ds.images.push_back(std::move(img));
  }

  ds.region_features.rows = Matrix(ds.region_features.ids.size(), dv, std::move(region_rows));
  ds.phrase_features.rows = Matrix(ds.phrase_features.ids.size(), dt, std::move(phrase_rows));
  ds.region_features.rebuild_index();
  ds.phrase_features.rebuild_index();

  for (const char* name : kCoarseCategories) ds.coarse_dictionary[name] = {};
  for (std::size_t c = 0; c < G; ++c) {
    auto& list = ds.coarse_dictionary[kCoarseCategories[c % kCoarseCategories.size()]];
    for (std::size_t i = 0; i < 6; ++i) list.push_back(noun_for(c, i));
  }
  ds.validate();
  return ds;
}

}  // namespace cite
