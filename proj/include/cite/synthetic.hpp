#pragma once

#include <cstdint>

#include "cite/dataset.hpp"

namespace cite {

// Desk-scale grounding data with a latent concept per region/phrase.
//
// Each concept c owns a text prototype, a region prototype and a random sign
// pattern s_c. A region with concept c and attribute vector z has features
//   v = a_v * mu_v[c] + A_v (s_c (.) z) + noise
// and a phrase describing it
//   t = a_t * mu_t[c] + A_t z + b * nu[n] + noise,
// where nu[n] is a concept-independent nuisance cluster of the text.
// Matching a phrase to its region therefore needs the attribute agreement
// read through the concept's sign pattern.
struct SynthConfig {
  std::size_t concepts = 4;  // G
  std::size_t train_images = 600;
  std::size_t val_images = 100;
  std::size_t test_images = 100;
  std::size_t regions_per_image = 8;
  std::size_t phrases_per_image = 4;
  std::size_t region_dim = 32;
  std::size_t phrase_dim = 32;
  double noise = 0.1;   // sigma
  double jitter = 0.1;  // max proposal shift as a fraction of box size
  bool spatial_bias = false;
  std::uint64_t seed = 0;

  std::size_t attribute_dim = 8;
  std::size_t concepts_per_image = 2;
  std::size_t copies_per_region = 1;  // jittered proposals per region box
  double concept_strength = 1.0;         // a_t
  double region_concept_strength = 0.0;  // a_v
  double nuisance_strength = 1.5;     // b
  std::size_t nuisance_groups = 4;
  // Text prototypes per concept (see gen_synthetic).
  std::size_t concept_modes = 1;
  double image_width = 640.0;
  double image_height = 480.0;

  void validate() const;
};

GroundingDataset gen_synthetic(const SynthConfig& cfg);

}  // namespace cite
