#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spd/datamodel.hpp"

namespace spd::synth {

enum class GenMode { mixed, structure_only, semantics_only };

GenMode mode_from_string(const std::string& s);
std::string mode_to_string(GenMode m);

struct GenConfig {
  int n_samples = 100;
  GenMode mode = GenMode::mixed;
  // Echoes a 1:1.3 positive-to-negative ratio by default.
  double positive_ratio = 0.435;
  int min_blocks = 3;
  int max_blocks = 10;
  uint64_t seed = 0;
};

void validate_config(const GenConfig& cfg);

// Deterministic in (seed, index). Base functions are drawn independently of
// the label; the positive transform inserts a guard block with an early-exit
// edge (and the matching if-return in pseudo-code), the negative transform
// renames and reorders without touching the topology. structure_only renders
// identical pre/post pseudo-code for both classes; semantics_only renders
// identical pre/post CFGs for both classes.
data::PatchSample gen_sample(const GenConfig& cfg, int index);

// n_samples samples with round(n * positive_ratio) positives and projects
// assigned round-robin from five synthetic names.
std::vector<data::PatchSample> gen_dataset(const GenConfig& cfg);

}  // namespace spd::synth
