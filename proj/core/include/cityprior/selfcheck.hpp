#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cityprior/field.hpp"

namespace cityprior {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Quick in-process property suite: spherical-harmonic normalization,
// compositing conservation, a finite-difference gradient probe on a tiny
// field, voxel-mean and merge identities, prior-file round trip, fusion
// identity, clustering sanity and resampling statistics.
std::vector<CheckResult> run_selfcheck(uint64_t seed = 7);

// Miniature field used by the gradient probes: 2 hash levels with 16-entry
// tables, narrow MLPs, 2 sub-fields, 2 videos.
TileField make_tiny_tile(int feature_dim = 4, uint64_t seed = 3, int subfields = 2);

}  // namespace cityprior
