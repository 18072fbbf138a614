#include "cityprior/synthetic.hpp"

#include <cmath>
#include <limits>

#include "cityprior/errors.hpp"

namespace cityprior {

namespace {

Vec3 quantize_u8(const Vec3& c) {
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    double v = std::clamp(c[i], 0.0, 1.0);
    out[i] = std::round(v * 255.0) / 255.0;
  }
  return out;
}

Vec3 checker_color(const SurfaceMaterial& m, double u, double v) {
  if (m.checker_scale <= 0.0) return m.base_color;
  long long iu = static_cast<long long>(std::floor(u * m.checker_scale));
  long long iv = static_cast<long long>(std::floor(v * m.checker_scale));
  return ((iu + iv) & 1) == 0 ? m.base_color : m.alt_color;
}

// Entry point of the ray into the box, with the axis of the entered face.
bool intersect_box(const Aabb& box, const Vec3& o, const Vec3& d, double tmin, double tmax,
                   double& t_hit, int& face_axis) {
  double t0 = tmin, t1 = tmax;
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    double inv = 1.0 / d[a];
    double ta = (box.min[a] - o[a]) * inv;
    double tb = (box.max[a] - o[a]) * inv;
    if (inv < 0.0) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = a;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (axis < 0) return false;  // origin inside the box; not a front-face hit
  t_hit = t0;
  face_axis = axis;
  return true;
}

bool intersect_rect(const PlanePrimitive& p, const Vec3& o, const Vec3& d, double tmin, double tmax,
                    double& t_hit) {
  if (std::abs(d[p.axis]) < 1e-12) return false;
  double t = (p.offset - o[p.axis]) / d[p.axis];
  if (t < tmin || t > tmax) return false;
  int u_axis = (p.axis + 1) % 3, v_axis = (p.axis + 2) % 3;
  Vec3 hit = o + t * d;
  if (std::abs(hit[u_axis] - p.center[0]) > p.half_extents[0]) return false;
  if (std::abs(hit[v_axis] - p.center[1]) > p.half_extents[1]) return false;
  t_hit = t;
  return true;
}

Eigen::VectorXd material_feature(const SurfaceMaterial& m, int feature_dim) {
  if (m.feature.size() == 0) return Eigen::VectorXd::Zero(feature_dim);
  return m.feature;
}

void validate_spec(const SceneSpec& spec) {
  for (const BoxPrimitive& b : spec.boxes) {
    if (!b.box.valid() || (b.box.extent().array() <= 0.0).any())
      throw DataError("degenerate box primitive (zero extent)");
    if (b.material.feature.size() != 0 && b.material.feature.size() != spec.feature_dim)
      throw DataError("box feature dimension mismatch");
  }
  for (const PlanePrimitive& p : spec.planes) {
    if (p.axis < 0 || p.axis > 2) throw DataError("plane axis out of range");
    if ((p.half_extents.array() <= 0.0).any())
      throw DataError("degenerate plane primitive (zero extent)");
    if (p.material.feature.size() != 0 && p.material.feature.size() != spec.feature_dim)
      throw DataError("plane feature dimension mismatch");
  }
  if (spec.cameras.num_cameras < 1) throw DataError("scene needs at least one camera");
  if (spec.cameras.focal <= 0) throw DataError("camera focal must be positive");
  if (spec.sky_feature.size() != 0 && spec.sky_feature.size() != spec.feature_dim)
    throw DataError("sky feature dimension mismatch");
}

}  // namespace

SceneOracle::SceneOracle(SceneSpec spec) : spec_(std::move(spec)) { validate_spec(spec_); }

SceneHit SceneOracle::trace(const Vec3& origin, const Vec3& direction, double tmin, double tmax) const {
  SceneHit best;
  best.t = std::numeric_limits<double>::infinity();

  int prim_id = 0;
  for (const BoxPrimitive& b : spec_.boxes) {
    double t;
    int face_axis;
    if (intersect_box(b.box, origin, direction, tmin, tmax, t, face_axis) && t < best.t) {
      Vec3 hit = origin + t * direction;
      int u_axis = (face_axis + 1) % 3, v_axis = (face_axis + 2) % 3;
      best.hit = true;
      best.t = t;
      best.color = checker_color(b.material, hit[u_axis], hit[v_axis]);
      best.feature = material_feature(b.material, spec_.feature_dim);
      best.dynamic = b.dynamic;
      best.primitive = prim_id;
    }
    ++prim_id;
  }
  for (const PlanePrimitive& p : spec_.planes) {
    double t;
    if (intersect_rect(p, origin, direction, tmin, tmax, t) && t < best.t) {
      Vec3 hit = origin + t * direction;
      int u_axis = (p.axis + 1) % 3, v_axis = (p.axis + 2) % 3;
      best.hit = true;
      best.t = t;
      best.color = checker_color(p.material, hit[u_axis], hit[v_axis]);
      best.feature = material_feature(p.material, spec_.feature_dim);
      best.dynamic = p.dynamic;
      best.primitive = prim_id;
    }
    ++prim_id;
  }
  if (!best.hit) best.t = 0.0;
  return best;
}

std::pair<DatasetManifest, SceneOracle> make_synthetic_scene(const SceneSpec& spec) {
  SceneOracle oracle(spec);
  const OrbitCameraSpec& cams = spec.cameras;

  DatasetManifest manifest;
  manifest.feature_dim = spec.feature_dim;
  manifest.role = DatasetRole::Train;
  manifest.near = spec.near;
  manifest.far = spec.far;

  Eigen::VectorXd sky_feature = spec.sky_feature.size() ? spec.sky_feature
                                                        : Eigen::VectorXd::Zero(spec.feature_dim);

  Aabb bounds;
  if (spec.bounds) {
    bounds = *spec.bounds;
  } else {
    for (const BoxPrimitive& b : spec.boxes) {
      bounds.expand(b.box.min);
      bounds.expand(b.box.max);
    }
    for (const PlanePrimitive& p : spec.planes) {
      int u_axis = (p.axis + 1) % 3, v_axis = (p.axis + 2) % 3;
      Vec3 lo, hi;
      lo[p.axis] = hi[p.axis] = p.offset;
      lo[u_axis] = p.center[0] - p.half_extents[0];
      hi[u_axis] = p.center[0] + p.half_extents[0];
      lo[v_axis] = p.center[1] - p.half_extents[1];
      hi[v_axis] = p.center[1] + p.half_extents[1];
      bounds.expand(lo);
      bounds.expand(hi);
    }
    for (int i = 0; i < cams.num_cameras; ++i) {
      double theta = 2.0 * M_PI * i / cams.num_cameras;
      bounds.expand(cams.target + Vec3(cams.radius * std::cos(theta), cams.radius * std::sin(theta), cams.height));
    }
    bounds.pad(2.0);
  }
  manifest.scene_bounds = bounds;

  for (int i = 0; i < cams.num_cameras; ++i) {
    double theta = 2.0 * M_PI * i / cams.num_cameras;
    Vec3 eye = cams.target + Vec3(cams.radius * std::cos(theta), cams.radius * std::sin(theta), cams.height);

    CameraFrame frame;
    frame.video_id = static_cast<int>(static_cast<long long>(i) * cams.num_videos / cams.num_cameras);
    frame.pose = Pose::look_at(eye, cams.target);
    frame.intrinsics.fx = frame.intrinsics.fy = cams.focal;
    frame.intrinsics.cx = cams.image_width / 2;
    frame.intrinsics.cy = cams.image_height / 2;
    frame.intrinsics.width = cams.image_width;
    frame.intrinsics.height = cams.image_height;
    frame.near = spec.near;
    frame.far = spec.far;
    frame.rgb = ImageF(cams.image_height, cams.image_width, 3);
    frame.feature_map = ImageF(cams.image_height, cams.image_width, spec.feature_dim);
    frame.dynamic_mask = MaskImage(cams.image_height, cams.image_width, 1, 0);
    frame.sky_mask = MaskImage(cams.image_height, cams.image_width, 1, 0);

    for (int r = 0; r < cams.image_height; ++r) {
      for (int c = 0; c < cams.image_width; ++c) {
        Ray ray = pixel_to_ray(frame, r, c);
        SceneHit hit = oracle.trace(ray);
        Vec3 color = hit.hit ? quantize_u8(hit.color) : quantize_u8(spec.sky_color);
        const Eigen::VectorXd& feat = hit.hit ? hit.feature : sky_feature;
        for (int ch = 0; ch < 3; ++ch) frame.rgb.at(r, c, ch) = static_cast<float>(color[ch]);
        for (int d = 0; d < spec.feature_dim; ++d)
          frame.feature_map.at(r, c, d) = static_cast<float>(feat[d]);
        if (!hit.hit) frame.sky_mask.at(r, c) = 255;
        if (hit.hit && hit.dynamic) frame.dynamic_mask.at(r, c) = 255;
      }
    }
    manifest.frames.push_back(std::move(frame));
  }

  return {std::move(manifest), std::move(oracle)};
}

SceneSpec textured_box_scene(int feature_dim, int num_cameras, int image_size) {
  SceneSpec spec;
  spec.feature_dim = feature_dim;
  spec.sky_color = Vec3(0.55, 0.65, 0.9);
  spec.sky_feature = Eigen::VectorXd::Zero(feature_dim);
  if (feature_dim > 0) spec.sky_feature[0] = -0.5;

  auto feat = [&](int hot, double v) {
    Eigen::VectorXd f = Eigen::VectorXd::Constant(feature_dim, 0.1);
    f[hot % feature_dim] = v;
    return f;
  };

  PlanePrimitive ground;
  ground.axis = 2;
  ground.offset = 0.0;
  ground.half_extents = Eigen::Vector2d(18.0, 18.0);
  ground.material.base_color = Vec3(0.45, 0.42, 0.4);
  ground.material.alt_color = Vec3(0.25, 0.24, 0.22);
  ground.material.checker_scale = 0.5;
  ground.material.feature = feat(0, 0.8);
  spec.planes.push_back(ground);

  BoxPrimitive building;
  building.box.min = Vec3(-2.0, -2.0, 0.0);
  building.box.max = Vec3(2.0, 2.0, 3.0);
  building.material.base_color = Vec3(0.8, 0.35, 0.25);
  building.material.alt_color = Vec3(0.85, 0.75, 0.55);
  building.material.checker_scale = 1.0;
  building.material.feature = feat(1, -0.7);
  spec.boxes.push_back(building);

  BoxPrimitive shed;
  shed.box.min = Vec3(3.2, -4.6, 0.0);
  shed.box.max = Vec3(4.8, -3.0, 1.2);
  shed.material.base_color = Vec3(0.2, 0.55, 0.3);
  shed.material.alt_color = Vec3(0.15, 0.35, 0.2);
  shed.material.checker_scale = 2.0;
  shed.material.feature = feat(2, 0.6);
  spec.boxes.push_back(shed);

  spec.cameras.num_cameras = num_cameras;
  spec.cameras.radius = 8.0;
  spec.cameras.height = 2.5;
  spec.cameras.target = Vec3(0.0, 0.0, 1.0);
  spec.cameras.image_width = spec.cameras.image_height = image_size;
  spec.cameras.focal = image_size * 5.0 / 6.0;
  spec.cameras.num_videos = 2;
  spec.near = 0.1;
  spec.far = 60.0;

  Aabb bounds;
  bounds.min = Vec3(-20.0, -20.0, -0.5);
  bounds.max = Vec3(20.0, 20.0, 9.0);
  spec.bounds = bounds;
  return spec;
}

SceneSpec opaque_plane_scene(double depth, int num_cameras, int image_size) {
  SceneSpec spec;
  spec.feature_dim = 4;
  spec.sky_color = Vec3(0.5, 0.5, 0.5);
  spec.sky_feature = Eigen::VectorXd::Zero(4);

  PlanePrimitive ground;
  ground.axis = 2;
  ground.offset = 0.0;
  ground.half_extents = Eigen::Vector2d(25.0, 25.0);
  ground.material.base_color = Vec3(0.7, 0.6, 0.3);
  ground.material.alt_color = Vec3(0.3, 0.35, 0.5);
  ground.material.checker_scale = 0.8;
  ground.material.feature = Eigen::VectorXd::Constant(4, 0.5);
  spec.planes.push_back(ground);

  spec.cameras.num_cameras = num_cameras;
  spec.cameras.radius = 2.0;
  spec.cameras.height = depth;
  spec.cameras.target = Vec3(0.0, 0.0, 0.0);
  spec.cameras.image_width = spec.cameras.image_height = image_size;
  spec.cameras.focal = image_size;
  spec.cameras.num_videos = 1;
  spec.near = 0.1;
  spec.far = 4.0 * depth;

  Aabb bounds;
  bounds.min = Vec3(-12.0, -12.0, -0.5);
  bounds.max = Vec3(12.0, 12.0, depth + 2.0);
  spec.bounds = bounds;
  return spec;
}

SceneSpec empty_sky_scene(int feature_dim) {
  SceneSpec spec;
  spec.feature_dim = feature_dim;
  spec.sky_color = Vec3(0.5, 0.5, 0.5);
  spec.sky_feature = Eigen::VectorXd::Zero(feature_dim);
  spec.cameras.num_cameras = 4;
  spec.cameras.radius = 3.0;
  spec.cameras.height = 1.0;
  spec.cameras.image_width = spec.cameras.image_height = 32;
  spec.cameras.focal = 32.0;
  spec.cameras.num_videos = 1;
  Aabb bounds;
  bounds.min = Vec3(-8, -8, -2);
  bounds.max = Vec3(8, 8, 6);
  spec.bounds = bounds;
  return spec;
}

}  // namespace cityprior
