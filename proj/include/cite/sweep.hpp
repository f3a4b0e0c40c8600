#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cite/config.hpp"
#include "cite/dataset.hpp"

namespace cite {

struct SweepCell {
  std::size_t k = 0;
  AssignmentMethod method = AssignmentMethod::kLearned;
  std::uint64_t seed = 0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t epochs = 0;
  std::string error;  // empty on success
};

// Trains and evaluates one model per (K, method, seed). A failing cell is
// recorded with its error and the sweep moves on.
std::vector<SweepCell> k_sweep(const GroundingDataset& ds, const RunConfig& base, std::span<const std::size_t> ks,
                               std::span<const AssignmentMethod> methods, std::span<const std::uint64_t> seeds,
                               const std::function<void(const SweepCell&)>& on_cell = {});

// k,method,seed,val_accuracy,test_accuracy,epochs,status
std::string sweep_csv(std::span<const SweepCell> cells);
// Test accuracy against K, one polyline per method (mean over seeds).
std::string sweep_svg(std::span<const SweepCell> cells);

}  // namespace cite
