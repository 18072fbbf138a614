#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cityprior/dataset.hpp"
#include "cityprior/field.hpp"
#include "cityprior/render.hpp"

namespace cityprior {

struct SurfacePoint {
  Vec3 position = Vec3::Zero();
  Eigen::VectorXd feature;
  int video_id = 0;
  int pixel_row = 0, pixel_col = 0;
};

// Sparse voxel map holding a running mean of contributed features per cell
// and the contribution count as weight. Keys are ordered so iteration and
// serialization are deterministic.
struct PriorVoxelGrid {
  struct CellKey {
    int32_t x = 0, y = 0, z = 0;
    auto operator<=>(const CellKey&) const = default;
  };
  // The running feature sum is kept instead of the mean so that merging two
  // grids and downsampling their concatenated inputs produce identical
  // values; the mean is materialized by mean(), queries and the file format.
  struct Cell {
    Eigen::VectorXd feature_sum;
    double weight = 0.0;  // number of contributing points

    Eigen::VectorXd mean() const { return feature_sum / weight; }
  };

  double voxel_size = 0.2;
  Vec3 origin = Vec3::Zero();
  int feature_dim = 0;
  std::map<CellKey, Cell> cells;

  CellKey key_of(const Vec3& p) const;
  Vec3 cell_center(const CellKey& k) const;
  void insert(const Vec3& p, const Eigen::VectorXd& feature);
};

// Marches one ray through the trained tile and returns the first sample
// where the cumulative blending weight crosses 1/2, with the feature head
// evaluated at that sample (not the ray-composited feature). Sky rays
// (cumulative weight never crossing 1/2) produce no point.
std::optional<SurfacePoint> extract_surface(const TileField& tile, const Ray& ray,
                                            const ProposalConfig& cfg);

// extract_surface over every stride-th non-dynamic pixel of the frames.
std::vector<SurfacePoint> extract_tile(const TileField& tile,
                                       const std::vector<const CameraFrame*>& frames, int stride,
                                       const ProposalConfig& cfg, int threads = 1);

PriorVoxelGrid voxel_downsample(const std::vector<SurfacePoint>& points, double voxel_size,
                                const Vec3& origin);

// Weighted-mean merge of two grids with identical voxel size and origin.
PriorVoxelGrid merge_priors(const PriorVoxelGrid& a, const PriorVoxelGrid& b);

// Binary prior store: magic "PSPV", version, voxel_size f32, origin 3xf32,
// feature_dim u32, cell count u64, then (i32 x3 index, f32 xD feature,
// f32 weight) records, all little-endian.
void save_prior(const PriorVoxelGrid& grid, const std::string& path);
PriorVoxelGrid load_prior(const std::string& path);

struct RegionCell {
  Vec3 ego_position;  // cell center in the ego frame
  Eigen::VectorXd feature;
  double weight = 0.0;
};

// All cells whose centers fall inside the yaw-rotated box (half_extents
// about center); positions are returned in the ego frame.
std::vector<RegionCell> query_region(const PriorVoxelGrid& grid, const Vec3& center,
                                     const Vec3& half_extents, double yaw);

}  // namespace cityprior
