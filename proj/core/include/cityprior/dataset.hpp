#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cityprior/geometry.hpp"
#include "cityprior/image.hpp"

namespace cityprior {

struct CameraIntrinsics {
  double fx = 0, fy = 0;  // focal lengths, pixels
  double cx = 0, cy = 0;  // principal point, pixels
  int width = 0, height = 0;

  bool valid() const {
    return fx > 0 && fy > 0 && cx > 0 && cx < width && cy > 0 && cy < height;
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();  // unit norm
  int video_id = 0;
  int pixel_row = 0, pixel_col = 0;
  double near = 0.1, far = 200.0;
};

// One posed RGB frame with its per-pixel feature map and masks. All
// image-shaped members share the intrinsics' height x width.
struct CameraFrame {
  int video_id = 0;
  Pose pose;
  CameraIntrinsics intrinsics;
  ImageF rgb;           // H x W x 3, [0,1]
  ImageF feature_map;   // H x W x D
  MaskImage dynamic_mask;  // nonzero = moving-object pixel, excluded from supervision
  MaskImage sky_mask;      // nonzero = sky pixel
  double near = 0.1, far = 200.0;

  bool is_dynamic(int row, int col) const { return dynamic_mask.at(row, col) != 0; }
  bool is_sky(int row, int col) const { return sky_mask.at(row, col) != 0; }
};

enum class DatasetRole { Train, Prior, Test };

std::string to_string(DatasetRole role);
DatasetRole role_from_string(const std::string& s);

struct DatasetManifest {
  int feature_dim = 64;
  DatasetRole role = DatasetRole::Train;
  double near = 0.1, far = 200.0;
  std::optional<Aabb> scene_bounds;  // tight bounds written by generators; else derived from cameras
  std::vector<CameraFrame> frames;
};

// Reads a manifest JSON document and all referenced assets; validates shapes,
// feature dimension, and pose orthonormality. Errors name the offending frame.
DatasetManifest load_manifest(const std::string& path);

// Writes manifest.json plus all image assets under `dir`.
void save_manifest(const DatasetManifest& manifest, const std::string& dir);

// Back-projects the center of pixel (row, col). The continuous image
// coordinate of pixel (row, col) is (u, v) = (col, row); camera axes are
// x-right, y-down, z-forward.
Ray pixel_to_ray(const CameraFrame& frame, int row, int col);

struct RaySample {
  Ray ray;
  Vec3 target_rgb;
  Eigen::VectorXd target_feature;
  bool is_sky = false;
};

// Uniform sampler over the non-dynamic pixels of all frames (with
// replacement). Sky pixels are included; they supervise the sky terms.
// An extra exclusion predicate lets callers hold pixels out (e.g. for PSNR).
class RayBatchSampler {
 public:
  struct PixelRef {
    uint32_t frame;
    uint16_t row, col;
  };

  explicit RayBatchSampler(const DatasetManifest& manifest);
  RaySample make_sample(const PixelRef& ref) const;
  std::vector<RaySample> sample(int batch_size, uint64_t seed) const;

  const std::vector<PixelRef>& pool() const { return pool_; }
  // Removes pixels matching pred from the pool and returns them.
  std::vector<PixelRef> split_off(const std::function<bool(const PixelRef&)>& pred);

 private:
  const DatasetManifest* manifest_;
  std::vector<PixelRef> pool_;
};

std::vector<RaySample> sample_ray_batch(const DatasetManifest& manifest, int batch_size,
                                        uint64_t seed);

// Bounding box the fields operate in: the manifest's scene bounds when
// present, otherwise the camera-position box padded by `margin`.
Aabb scene_box(const DatasetManifest& manifest, double margin = 16.0);

}  // namespace cityprior
