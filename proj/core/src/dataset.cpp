#include "cityprior/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <functional>

#include <nlohmann/json.hpp>

#include "cityprior/errors.hpp"
#include "cityprior/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace cityprior {

std::string to_string(DatasetRole role) {
  switch (role) {
    case DatasetRole::Train: return "train";
    case DatasetRole::Prior: return "prior";
    case DatasetRole::Test: return "test";
  }
  return "train";
}

DatasetRole role_from_string(const std::string& s) {
  if (s == "train") return DatasetRole::Train;
  if (s == "prior") return DatasetRole::Prior;
  if (s == "test") return DatasetRole::Test;
  throw DataError("unknown dataset role: " + s);
}

namespace {

std::string frame_tag(std::size_t index, const CameraFrame& frame) {
  return "frame " + std::to_string(index) + " (video " + std::to_string(frame.video_id) + ")";
}

void validate_frame(std::size_t index, const CameraFrame& f, int feature_dim) {
  const std::string tag = frame_tag(index, f);
  if (!f.intrinsics.valid()) throw DataError(tag + ": invalid intrinsics");
  if (!f.pose.is_rigid()) throw DataError(tag + ": pose rotation is not orthonormal");
  const int h = f.intrinsics.height, w = f.intrinsics.width;
  auto check_shape = [&](int ih, int iw, int ic, int expect_c, const char* what) {
    if (ih != h || iw != w) throw DataError(tag + ": " + what + " shape mismatch");
    if (expect_c > 0 && ic != expect_c) {
      if (std::string(what) == "feature map") throw DataError(tag + ": feature-dim mismatch");
      throw DataError(tag + ": " + what + " channel mismatch");
    }
  };
  check_shape(f.rgb.height, f.rgb.width, f.rgb.channels, 3, "rgb");
  check_shape(f.feature_map.height, f.feature_map.width, f.feature_map.channels, feature_dim, "feature map");
  check_shape(f.dynamic_mask.height, f.dynamic_mask.width, f.dynamic_mask.channels, 1, "dynamic mask");
  check_shape(f.sky_mask.height, f.sky_mask.width, f.sky_mask.channels, 1, "sky mask");
}

MaskImage load_mask(const std::string& path) {
  ImageU8 img = read_png(path);
  if (img.channels != 1) throw DataError("mask must be single-channel: " + path);
  return img;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest not found: " + path);
  json doc;
  try {
    is >> doc;
  } catch (const json::exception& e) {
    throw DataError("manifest parse error in " + path + ": " + e.what());
  }

  DatasetManifest m;
  const fs::path base = fs::path(path).parent_path();
  try {
    m.feature_dim = doc.at("feature_dim").get<int>();
    m.role = role_from_string(doc.value("role", "train"));
    m.near = doc.value("near", 0.1);
    m.far = doc.value("far", 200.0);
    if (doc.contains("scene_bounds")) {
      Aabb box;
      auto lo = doc["scene_bounds"].at("min"), hi = doc["scene_bounds"].at("max");
      for (int a = 0; a < 3; ++a) {
        box.min[a] = lo.at(a).get<double>();
        box.max[a] = hi.at(a).get<double>();
      }
      if (!box.valid()) throw DataError("scene_bounds min exceeds max");
      m.scene_bounds = box;
    }
    if (m.near <= 0 || m.near >= m.far) throw DataError("manifest requires 0 < near < far");

    std::size_t index = 0;
    for (const auto& fj : doc.at("frames")) {
      CameraFrame f;
      f.video_id = fj.at("video_id").get<int>();
      f.near = m.near;
      f.far = m.far;

      const auto& mat = fj.at("world_from_camera");
      if (mat.size() != 16) throw DataError("frame " + std::to_string(index) + ": world_from_camera needs 16 entries");
      Mat4 wfc;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) wfc(r, c) = mat.at(r * 4 + c).get<double>();
      f.pose = Pose::from_matrix(wfc);

      const auto& in = fj.at("intrinsics");
      f.intrinsics.fx = in.at("fx").get<double>();
      f.intrinsics.fy = in.at("fy").get<double>();
      f.intrinsics.cx = in.at("cx").get<double>();
      f.intrinsics.cy = in.at("cy").get<double>();
      f.intrinsics.width = in.at("width").get<int>();
      f.intrinsics.height = in.at("height").get<int>();

      auto asset = [&](const char* key) { return (base / fj.at(key).get<std::string>()).string(); };
      f.rgb = to_float(read_png(asset("rgb")));
      f.feature_map = read_feature_map(asset("feature_map"));
      f.dynamic_mask = load_mask(asset("dynamic_mask"));
      f.sky_mask = load_mask(asset("sky_mask"));

      validate_frame(index, f, m.feature_dim);
      m.frames.push_back(std::move(f));
      ++index;
    }
  } catch (const json::exception& e) {
    throw DataError("manifest field error in " + path + ": " + e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& dir) {
  fs::create_directories(dir);
  json doc;
  doc["feature_dim"] = manifest.feature_dim;
  doc["role"] = to_string(manifest.role);
  doc["near"] = manifest.near;
  doc["far"] = manifest.far;
  if (manifest.scene_bounds) {
    doc["scene_bounds"] = {
        {"min", {manifest.scene_bounds->min[0], manifest.scene_bounds->min[1], manifest.scene_bounds->min[2]}},
        {"max", {manifest.scene_bounds->max[0], manifest.scene_bounds->max[1], manifest.scene_bounds->max[2]}}};
  }
  doc["frames"] = json::array();

  char name[64];
  for (std::size_t i = 0; i < manifest.frames.size(); ++i) {
    const CameraFrame& f = manifest.frames[i];
    json fj;
    fj["video_id"] = f.video_id;
    Mat4 wfc = f.pose.matrix();
    std::vector<double> mat(16);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) mat[r * 4 + c] = wfc(r, c);
    fj["world_from_camera"] = mat;
    fj["intrinsics"] = {{"fx", f.intrinsics.fx}, {"fy", f.intrinsics.fy}, {"cx", f.intrinsics.cx},
                        {"cy", f.intrinsics.cy}, {"width", f.intrinsics.width}, {"height", f.intrinsics.height}};

    std::snprintf(name, sizeof(name), "frame_%04zu", i);
    const std::string stem(name);
    write_png((fs::path(dir) / (stem + "_rgb.png")).string(), to_u8(f.rgb));
    write_feature_map((fs::path(dir) / (stem + "_feat.fmap")).string(), f.feature_map);
    write_png((fs::path(dir) / (stem + "_dyn.png")).string(), f.dynamic_mask);
    write_png((fs::path(dir) / (stem + "_sky.png")).string(), f.sky_mask);
    fj["rgb"] = stem + "_rgb.png";
    fj["feature_map"] = stem + "_feat.fmap";
    fj["dynamic_mask"] = stem + "_dyn.png";
    fj["sky_mask"] = stem + "_sky.png";
    doc["frames"].push_back(std::move(fj));
  }

  std::ofstream os((fs::path(dir) / "manifest.json").string());
  if (!os) throw DataError("cannot write manifest in " + dir);
  os << doc.dump(2) << "\n";
}

Ray pixel_to_ray(const CameraFrame& frame, int row, int col) {
  const CameraIntrinsics& in = frame.intrinsics;
  if (row < 0 || row >= in.height || col < 0 || col >= in.width)
    throw DataError("pixel (" + std::to_string(row) + ", " + std::to_string(col) + ") out of bounds");
  Vec3 dir_cam((col - in.cx) / in.fx, (row - in.cy) / in.fy, 1.0);
  Ray ray;
  ray.origin = frame.pose.translation;
  ray.direction = (frame.pose.rotation * dir_cam).normalized();
  ray.video_id = frame.video_id;
  ray.pixel_row = row;
  ray.pixel_col = col;
  ray.near = frame.near;
  ray.far = frame.far;
  return ray;
}

RayBatchSampler::RayBatchSampler(const DatasetManifest& manifest) : manifest_(&manifest) {
  for (std::size_t fi = 0; fi < manifest.frames.size(); ++fi) {
    const CameraFrame& f = manifest.frames[fi];
    for (int r = 0; r < f.intrinsics.height; ++r)
      for (int c = 0; c < f.intrinsics.width; ++c)
        if (!f.is_dynamic(r, c))
          pool_.push_back({static_cast<uint32_t>(fi), static_cast<uint16_t>(r), static_cast<uint16_t>(c)});
  }
}

RaySample RayBatchSampler::make_sample(const PixelRef& ref) const {
  const CameraFrame& f = manifest_->frames[ref.frame];
  RaySample s;
  s.ray = pixel_to_ray(f, ref.row, ref.col);
  for (int c = 0; c < 3; ++c) s.target_rgb[c] = f.rgb.at(ref.row, ref.col, c);
  s.target_feature.resize(manifest_->feature_dim);
  for (int d = 0; d < manifest_->feature_dim; ++d)
    s.target_feature[d] = f.feature_map.at(ref.row, ref.col, d);
  s.is_sky = f.is_sky(ref.row, ref.col);
  return s;
}

std::vector<RaySample> RayBatchSampler::sample(int batch_size, uint64_t seed) const {
  if (pool_.empty()) throw DataError("no sampleable pixels: all pixels are dynamic-masked");
  Rng rng(seed);
  std::vector<RaySample> batch;
  batch.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) batch.push_back(make_sample(pool_[rng.bounded(pool_.size())]));
  return batch;
}

std::vector<RayBatchSampler::PixelRef> RayBatchSampler::split_off(
    const std::function<bool(const PixelRef&)>& pred) {
  std::vector<PixelRef> held;
  std::vector<PixelRef> kept;
  kept.reserve(pool_.size());
  for (const PixelRef& p : pool_) (pred(p) ? held : kept).push_back(p);
  pool_ = std::move(kept);
  return held;
}

std::vector<RaySample> sample_ray_batch(const DatasetManifest& manifest, int batch_size, uint64_t seed) {
  return RayBatchSampler(manifest).sample(batch_size, seed);
}

Aabb scene_box(const DatasetManifest& manifest, double margin) {
  if (manifest.scene_bounds) return *manifest.scene_bounds;
  Aabb box;
  for (const CameraFrame& f : manifest.frames) box.expand(f.pose.translation);
  if (!box.valid()) throw DataError("cannot derive scene bounds from an empty manifest");
  box.pad(margin);
  return box;
}

}  // namespace cityprior
