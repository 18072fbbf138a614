// Command-line front end for the city-prior pipeline:
//   synth -> partition -> train -> (render) -> extract -> query/rasterize
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cityprior/config.hpp"
#include "cityprior/dataset.hpp"
#include "cityprior/errors.hpp"
#include "cityprior/extract.hpp"
#include "cityprior/field.hpp"
#include "cityprior/image.hpp"
#include "cityprior/integrate.hpp"
#include "cityprior/partition.hpp"
#include "cityprior/render.hpp"
#include "cityprior/selfcheck.hpp"
#include "cityprior/synthetic.hpp"
#include "cityprior/train.hpp"

namespace fs = std::filesystem;
using namespace cityprior;

namespace {

struct EgoPose {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
};

EgoPose parse_ego(const std::string& text) {
  EgoPose ego;
  double x = 0, y = 0, z = 0, yaw = 0;
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf,%lf", &x, &y, &z, &yaw) != 4)
    throw DataError("--ego expects x,y,z,yaw (got '" + text + "')");
  ego.position = Vec3(x, y, z);
  ego.yaw = yaw;
  return ego;
}

// "100x50" or "100x50x8": full extents in meters (x forward, y left, z up)
Vec3 parse_range(const std::string& text, double default_z) {
  double a = 0, b = 0, c = default_z;
  int got = std::sscanf(text.c_str(), "%lfx%lfx%lf", &a, &b, &c);
  if (got < 2) throw DataError("--range expects AxB or AxBxC (got '" + text + "')");
  return Vec3(a, b, c);
}

PipelineConfig base_config(const std::string& config_path, const std::string& preset,
                           int feature_dim) {
  if (!config_path.empty()) return load_pipeline_config(config_path);
  const char* env = std::getenv("CITYPRIOR_CONFIG");
  if (env && *env) return load_pipeline_config(env);
  return make_pipeline_config(preset, feature_dim);
}

TileField build_tile_from_plan(const PipelineConfig& cfg, const DatasetManifest& manifest,
                               const TilePlan& plan, int tile_index) {
  if (tile_index < 0 || tile_index >= plan.num_tiles())
    throw DataError("tile index " + std::to_string(tile_index) + " out of range (plan has " +
                    std::to_string(plan.num_tiles()) + " tiles)");
  std::vector<int> vids;
  for (std::size_t f : plan.frames_of_tile(tile_index))
    vids.push_back(manifest.frames[f].video_id);
  if (vids.empty()) throw DataError("tile " + std::to_string(tile_index) + " has no frames");
  TileFieldConfig field_cfg = cfg.field;
  field_cfg.feature_dim = manifest.feature_dim;
  return make_tile_field(field_cfg, plan.subfield_centroids[tile_index], vids,
                         scene_box(manifest), cfg.seed);
}

DatasetManifest manifest_of_tile(const DatasetManifest& manifest, const TilePlan& plan,
                                 int tile_index) {
  DatasetManifest sub = manifest;
  sub.frames.clear();
  for (std::size_t f : plan.frames_of_tile(tile_index)) sub.frames.push_back(manifest.frames[f]);
  return sub;
}

ImageU8 colormap_depth(const ImageF& depth, const ImageF& opacity) {
  float dmax = 1e-6f;
  for (std::size_t i = 0; i < depth.data.size(); ++i)
    if (opacity.data[i] > 0.5f) dmax = std::max(dmax, depth.data[i]);
  ImageU8 out(depth.height, depth.width, 3);
  for (int r = 0; r < depth.height; ++r)
    for (int c = 0; c < depth.width; ++c) {
      float t = std::clamp(depth.at(r, c) / dmax, 0.0f, 1.0f);
      // near = warm, far = cool
      out.at(r, c, 0) = static_cast<uint8_t>(255.0f * (1.0f - t));
      out.at(r, c, 1) = static_cast<uint8_t>(255.0f * (1.0f - std::abs(2.0f * t - 1.0f)));
      out.at(r, c, 2) = static_cast<uint8_t>(255.0f * t);
    }
  return out;
}

PriorVoxelGrid load_merged_priors(const std::vector<std::string>& paths) {
  if (paths.empty()) throw DataError("no prior files given");
  PriorVoxelGrid grid = load_prior(paths[0]);
  for (std::size_t i = 1; i < paths.size(); ++i) grid = merge_priors(grid, load_prior(paths[i]));
  return grid;
}

int run(int argc, char** argv) {
  CLI::App app{"city-scale static environment priors from posed camera imagery"};
  app.require_subcommand(1);

  std::string config_path, preset = "desk";
  app.add_option("--config", config_path, "pipeline config JSON (or $CITYPRIOR_CONFIG)");
  app.add_option("--preset", preset, "config preset when no file is given: desk | paper");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene dataset");
  std::string synth_scene = "box", synth_out;
  int synth_cameras = 20, synth_size = 96, synth_dim = 8;
  synth->add_option("--scene", synth_scene, "box | plane | sky");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--cameras", synth_cameras);
  synth->add_option("--size", synth_size, "image side length in pixels");
  synth->add_option("--feature-dim", synth_dim);

  // partition
  auto* partition = app.add_subcommand("partition", "cluster cameras into tiles and sub-fields");
  std::string part_manifest, part_out = "plan.json";
  int part_tiles = 1, part_subfields = 2;
  uint64_t part_seed = 1;
  partition->add_option("--manifest", part_manifest)->required();
  partition->add_option("--num-tiles", part_tiles);
  partition->add_option("--subfields", part_subfields);
  partition->add_option("--seed", part_seed);
  partition->add_option("--out", part_out);

  // train
  auto* train = app.add_subcommand("train", "optimize one tile field");
  std::string train_manifest, train_plan, train_ckpt = "checkpoints", train_csv;
  int train_tile_idx = 0, train_iters = -1, train_batch = -1, train_threads = -1;
  uint64_t train_seed = 0;
  bool train_has_seed = false;
  train->add_option("--manifest", train_manifest)->required();
  train->add_option("--plan", train_plan)->required();
  train->add_option("--tile", train_tile_idx);
  train->add_option("--checkpoint-dir", train_ckpt);
  train->add_option("--metrics-csv", train_csv);
  train->add_option("--iterations", train_iters);
  train->add_option("--batch-size", train_batch);
  train->add_option("--threads", train_threads, "1 = deterministic mode");
  train->add_option("--seed", train_seed)->each([&](const std::string&) { train_has_seed = true; });

  // render
  auto* render = app.add_subcommand("render", "render one frame from a checkpoint");
  std::string render_ckpt, render_manifest, render_prefix = "render";
  int render_frame = 0, render_threads = 1;
  render->add_option("--checkpoint", render_ckpt)->required();
  render->add_option("--manifest", render_manifest)->required();
  render->add_option("--frame", render_frame);
  render->add_option("--out-prefix", render_prefix);
  render->add_option("--threads", render_threads);

  // extract
  auto* extract = app.add_subcommand("extract", "ray-march a trained tile into prior voxels");
  std::string ext_ckpt, ext_manifest, ext_plan, ext_out = "prior.pspv";
  int ext_tile = 0, ext_stride = -1, ext_threads = 1;
  double ext_voxel = -1.0;
  extract->add_option("--checkpoint", ext_ckpt)->required();
  extract->add_option("--manifest", ext_manifest)->required();
  extract->add_option("--plan", ext_plan)->required();
  extract->add_option("--tile", ext_tile);
  extract->add_option("--stride", ext_stride);
  extract->add_option("--voxel-size", ext_voxel);
  extract->add_option("--threads", ext_threads);
  extract->add_option("--out", ext_out);

  // query
  auto* query = app.add_subcommand("query", "read prior cells around an ego pose");
  std::vector<std::string> query_priors;
  std::string query_ego = "0,0,0,0", query_range = "100x50", query_out;
  query->add_option("--prior", query_priors)->required();
  query->add_option("--ego", query_ego, "x,y,z,yaw");
  query->add_option("--range", query_range, "AxB or AxBxC extents in meters");
  query->add_option("--out", query_out, "output text file (default stdout)");

  // rasterize
  auto* rasterize = app.add_subcommand("rasterize", "bake prior cells into a BEV feature grid");
  std::vector<std::string> rast_priors;
  std::string rast_ego = "0,0,0,0", rast_range = "100x50", rast_out = "bev.fmap";
  double rast_res = -1.0;
  int rast_bins = -1;
  rasterize->add_option("--prior", rast_priors)->required();
  rasterize->add_option("--ego", rast_ego);
  rasterize->add_option("--range", rast_range);
  rasterize->add_option("--resolution", rast_res);
  rasterize->add_option("--height-bins", rast_bins);
  rasterize->add_option("--out", rast_out);

  // selfcheck
  auto* selfcheck = app.add_subcommand("selfcheck", "run the built-in property suites");
  std::string emit_config;
  uint64_t selfcheck_seed = 7;
  selfcheck->add_option("--emit-config", emit_config, "write the resolved config JSON and exit");
  selfcheck->add_option("--seed", selfcheck_seed);

  CLI11_PARSE(app, argc, argv);

  if (*synth) {
    SceneSpec spec;
    if (synth_scene == "box")
      spec = textured_box_scene(synth_dim, synth_cameras, synth_size);
    else if (synth_scene == "plane")
      spec = opaque_plane_scene(5.0, synth_cameras, synth_size);
    else if (synth_scene == "sky")
      spec = empty_sky_scene(synth_dim);
    else
      throw DataError("unknown scene '" + synth_scene + "' (expected box, plane or sky)");
    auto [manifest, oracle] = make_synthetic_scene(spec);
    save_manifest(manifest, synth_out);
    std::cout << "wrote " << manifest.frames.size() << " frames to " << synth_out << "\n";
    return 0;
  }

  if (*partition) {
    DatasetManifest manifest = load_manifest(part_manifest);
    TilePlan plan = plan_tiles(manifest, part_tiles, part_subfields, part_seed);
    save_tile_plan(plan, part_out);
    std::cout << "wrote " << plan.num_tiles() << " tiles to " << part_out << "\n";
    return 0;
  }

  if (*train) {
    DatasetManifest manifest = load_manifest(train_manifest);
    PipelineConfig cfg = base_config(config_path, preset, manifest.feature_dim);
    if (train_iters >= 0) cfg.train.iterations = train_iters;
    if (train_batch > 0) cfg.train.batch_size = train_batch;
    if (train_threads > 0) cfg.train.threads = train_threads;
    if (train_has_seed) {
      cfg.seed = train_seed;
      cfg.train.seed = train_seed;
    }
    cfg.train.checkpoint_dir = train_ckpt;
    cfg.train.metrics_csv = train_csv;

    TilePlan plan = load_tile_plan(train_plan);
    TileField tile = build_tile_from_plan(cfg, manifest, plan, train_tile_idx);
    DatasetManifest tile_frames = manifest_of_tile(manifest, plan, train_tile_idx);
    TrainMetrics metrics = train_tile(tile, tile_frames, cfg.train);
    std::cout << "trained tile " << train_tile_idx << " for " << cfg.train.iterations
              << " iterations; holdout PSNR " << metrics.final_psnr << " dB, feature MSE "
              << metrics.final_feat_mse << "\n"
              << "checkpoint: " << (fs::path(train_ckpt) / "tile_final.ckpt").string() << "\n";
    return 0;
  }

  if (*render) {
    DatasetManifest manifest = load_manifest(render_manifest);
    if (render_frame < 0 || render_frame >= static_cast<int>(manifest.frames.size()))
      throw DataError("frame index out of range");
    PipelineConfig cfg = base_config(config_path, preset, manifest.feature_dim);
    TileField tile = load_tile_field(render_ckpt);
    RenderedImages images =
        render_image(tile, manifest.frames[render_frame], cfg.train.proposal, render_threads);
    write_png(render_prefix + "_rgb.png", to_u8(images.rgb));
    write_png(render_prefix + "_opacity.png", to_u8(images.opacity));
    write_png(render_prefix + "_depth.png", colormap_depth(images.depth, images.opacity));
    write_feature_map(render_prefix + "_feature.fmap", images.feature);
    std::cout << "wrote " << render_prefix << "_{rgb,opacity,depth}.png and feature.fmap\n";
    return 0;
  }

  if (*extract) {
    DatasetManifest manifest = load_manifest(ext_manifest);
    PipelineConfig cfg = base_config(config_path, preset, manifest.feature_dim);
    if (ext_stride > 0) cfg.extract_stride = ext_stride;
    if (ext_voxel > 0) cfg.voxel_size = ext_voxel;
    TilePlan plan = load_tile_plan(ext_plan);
    TileField tile = load_tile_field(ext_ckpt);
    std::vector<const CameraFrame*> frames;
    for (std::size_t f : plan.frames_of_tile(ext_tile)) frames.push_back(&manifest.frames[f]);
    std::vector<SurfacePoint> points =
        extract_tile(tile, frames, cfg.extract_stride, cfg.train.proposal, ext_threads);
    PriorVoxelGrid grid = voxel_downsample(points, cfg.voxel_size, Vec3::Zero());
    save_prior(grid, ext_out);
    std::cout << "extracted " << points.size() << " surface points into " << grid.cells.size()
              << " voxels: " << ext_out << "\n";
    return 0;
  }

  if (*query) {
    PriorVoxelGrid grid = load_merged_priors(query_priors);
    EgoPose ego = parse_ego(query_ego);
    Vec3 range = parse_range(query_range, 16.0);
    std::vector<RegionCell> cells = query_region(grid, ego.position, range / 2.0, ego.yaw);
    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!query_out.empty()) {
      file.open(query_out);
      if (!file) throw DataError("cannot write " + query_out);
      os = &file;
    }
    for (const RegionCell& cell : cells) {
      (*os) << cell.ego_position[0] << " " << cell.ego_position[1] << " " << cell.ego_position[2]
            << " " << cell.weight;
      for (int d = 0; d < cell.feature.size(); ++d) (*os) << " " << cell.feature[d];
      (*os) << "\n";
    }
    if (!query_out.empty()) std::cout << cells.size() << " cells -> " << query_out << "\n";
    return 0;
  }

  if (*rasterize) {
    PriorVoxelGrid grid = load_merged_priors(rast_priors);
    PipelineConfig cfg = base_config(config_path, preset, grid.feature_dim);
    if (rast_res > 0) cfg.bev.resolution = rast_res;
    if (rast_bins > 0) cfg.height_bins = rast_bins;
    EgoPose ego = parse_ego(rast_ego);
    Vec3 range = parse_range(rast_range, cfg.bev.z_max - cfg.bev.z_min);
    GridSpec spec = cfg.bev;
    spec.x_min = -range[0] / 2;
    spec.x_max = range[0] / 2;
    spec.y_min = -range[1] / 2;
    spec.y_max = range[1] / 2;

    std::vector<RegionCell> cells =
        query_region(grid, ego.position, Vec3(range[0] / 2, range[1] / 2, range[2] / 2), ego.yaw);
    BEVFeatureGrid bev = rasterize_bev(cells, spec, grid.feature_dim, cfg.height_bins);

    ImageF out(bev.spec.rows(), bev.spec.cols(), bev.channels);
    for (std::size_t i = 0; i < bev.data.size(); ++i) out.data[i] = static_cast<float>(bev.data[i]);
    write_feature_map(rast_out, out);
    std::cout << "rasterized " << cells.size() << " cells into " << bev.spec.rows() << "x"
              << bev.spec.cols() << "x" << bev.channels << ": " << rast_out << "\n";
    return 0;
  }

  if (*selfcheck) {
    if (!emit_config.empty()) {
      PipelineConfig cfg = base_config(config_path, preset, 64);
      save_pipeline_config(cfg, emit_config);
      std::cout << "wrote " << emit_config << "\n";
      return 0;
    }
    std::vector<CheckResult> results = run_selfcheck(selfcheck_seed);
    bool all = true;
    for (const CheckResult& r : results) {
      std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
      all &= r.pass;
    }
    if (!all) throw NumericError("selfcheck failed");
    std::cout << "all checks passed\n";
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
