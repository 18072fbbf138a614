#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cityprior/dataset.hpp"
#include "cityprior/geometry.hpp"

namespace cityprior {

// Two-tone checker over the surface-tangent coordinates; scale 0 gives a
// constant base_color.
struct SurfaceMaterial {
  Vec3 base_color = Vec3(0.5, 0.5, 0.5);
  Vec3 alt_color = Vec3(0.5, 0.5, 0.5);
  double checker_scale = 0.0;  // checks per meter
  Eigen::VectorXd feature;     // constant per-surface semantic feature
};

struct BoxPrimitive {
  Aabb box;
  SurfaceMaterial material;
  bool dynamic = false;
};

// Axis-aligned rectangle: plane {axis = offset} bounded by half_extents in
// the two tangent axes around center.
struct PlanePrimitive {
  int axis = 2;
  double offset = 0.0;
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Vector2d half_extents = Eigen::Vector2d::Constant(1.0);
  SurfaceMaterial material;
  bool dynamic = false;
};

struct OrbitCameraSpec {
  int num_cameras = 20;
  double radius = 8.0;
  double height = 2.0;
  Vec3 target = Vec3::Zero();
  int image_width = 96, image_height = 96;
  double focal = 80.0;  // fx = fy, principal point at image center
  int num_videos = 2;   // orbit split into contiguous arcs, one video each
};

struct SceneSpec {
  int feature_dim = 8;
  Vec3 sky_color = Vec3(0.6, 0.7, 0.9);
  Eigen::VectorXd sky_feature;
  std::vector<BoxPrimitive> boxes;
  std::vector<PlanePrimitive> planes;
  OrbitCameraSpec cameras;
  double near = 0.1, far = 60.0;
  std::optional<Aabb> bounds;  // defaults to primitives + cameras padded
};

struct SceneHit {
  bool hit = false;
  double t = 0.0;
  Vec3 color = Vec3::Zero();
  Eigen::VectorXd feature;
  bool dynamic = false;
  int primitive = -1;
};

// Analytic ray tracer over the scene primitives; ground truth for depth,
// color and feature along any ray.
class SceneOracle {
 public:
  explicit SceneOracle(SceneSpec spec);

  SceneHit trace(const Vec3& origin, const Vec3& direction, double tmin, double tmax) const;
  SceneHit trace(const Ray& ray) const { return trace(ray.origin, ray.direction, ray.near, ray.far); }

  const SceneSpec& spec() const { return spec_; }

 private:
  SceneSpec spec_;
};

// Renders ground-truth RGB/feature/mask images for the orbit cameras by
// analytic intersection. RGB is quantized to the 8-bit grid at generation
// time so images survive PNG round trips bit-exactly.
std::pair<DatasetManifest, SceneOracle> make_synthetic_scene(const SceneSpec& spec);

// Canned scenes used by tests, the self check, and the documentation walkthrough.
SceneSpec textured_box_scene(int feature_dim = 8, int num_cameras = 20, int image_size = 96);
SceneSpec opaque_plane_scene(double depth = 5.0, int num_cameras = 12, int image_size = 64);
SceneSpec empty_sky_scene(int feature_dim = 4);

}  // namespace cityprior
