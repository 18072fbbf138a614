#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cityprior/dataset.hpp"
#include "cityprior/geometry.hpp"

namespace cityprior {

// Output of the two-level clustering: which tile each frame belongs to, and
// where each tile's sub-field centroids sit.
struct TilePlan {
  std::vector<Vec3> tile_centroids;
  std::vector<std::vector<Vec3>> subfield_centroids;  // one list per tile
  std::vector<int> assignments;                       // frame index -> tile index

  int num_tiles() const { return static_cast<int>(tile_centroids.size()); }
  std::vector<std::size_t> frames_of_tile(int tile) const;
};

// First-level K-Means over all camera positions yields the tiles; a second
// K-Means inside each tile places its sub-field centroids. Frames go to the
// nearest tile centroid (ties to the lowest index).
TilePlan plan_tiles(const DatasetManifest& manifest, int num_tiles, int subfields_per_tile,
                    uint64_t seed);

void save_tile_plan(const TilePlan& plan, const std::string& path);
TilePlan load_tile_plan(const std::string& path);

}  // namespace cityprior
