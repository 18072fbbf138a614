#include "cityprior/config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "cityprior/errors.hpp"

using json = nlohmann::json;

namespace cityprior {

TileFieldConfig desk_field_config(int feature_dim) {
  TileFieldConfig cfg;
  cfg.main_grid.num_levels = 8;
  cfg.main_grid.min_resolution = 16;
  cfg.main_grid.max_resolution = 512;
  cfg.main_grid.features_per_level = 2;
  cfg.main_grid.table_capacity = 1u << 15;
  cfg.proposal_grid.num_levels = 5;
  cfg.proposal_grid.min_resolution = 16;
  cfg.proposal_grid.max_resolution = 256;
  cfg.proposal_grid.features_per_level = 1;
  cfg.proposal_grid.table_capacity = 1u << 12;
  cfg.g_dim = 15;
  cfg.hidden_width = 64;
  cfg.proposal_hidden_width = 32;
  cfg.sh_degree = 4;
  cfg.embedding_dim = 16;
  cfg.feature_dim = feature_dim;
  return cfg;
}

TileFieldConfig paper_field_config(int feature_dim) {
  TileFieldConfig cfg;
  cfg.main_grid.num_levels = 10;
  cfg.main_grid.min_resolution = 1 << 4;
  cfg.main_grid.max_resolution = 1 << 14;
  cfg.main_grid.features_per_level = 4;
  cfg.main_grid.table_capacity = 1u << 20;
  cfg.proposal_grid.num_levels = 8;
  cfg.proposal_grid.min_resolution = 1 << 4;
  cfg.proposal_grid.max_resolution = 1 << 10;
  cfg.proposal_grid.features_per_level = 1;
  cfg.proposal_grid.table_capacity = 1u << 20;
  cfg.g_dim = 15;
  cfg.hidden_width = 64;
  cfg.proposal_hidden_width = 64;
  cfg.sh_degree = 4;
  cfg.embedding_dim = 16;
  cfg.feature_dim = feature_dim;
  return cfg;
}

TrainConfig desk_train_config() {
  TrainConfig cfg;
  cfg.iterations = 2000;
  cfg.batch_size = 1024;
  cfg.proposal.stage_samples = {64, 32};
  cfg.proposal.final_samples = 32;
  return cfg;
}

TrainConfig paper_train_config() {
  TrainConfig cfg;
  cfg.iterations = 100000;
  cfg.batch_size = 1 << 16;
  cfg.proposal.stage_samples = {128, 64};
  cfg.proposal.final_samples = 32;
  return cfg;
}

PipelineConfig make_pipeline_config(const std::string& preset, int feature_dim) {
  PipelineConfig cfg;
  cfg.preset = preset;
  if (preset == "desk") {
    cfg.field = desk_field_config(feature_dim);
    cfg.train = desk_train_config();
  } else if (preset == "paper") {
    cfg.field = paper_field_config(feature_dim);
    cfg.train = paper_train_config();
    cfg.subfields_per_tile = 8;
    cfg.extract_stride = 1;
  } else {
    throw DataError("unknown preset: " + preset + " (expected desk or paper)");
  }
  return cfg;
}

namespace {

json grid_json(const HashGridConfig& g) {
  return {{"num_levels", g.num_levels},
          {"min_resolution", g.min_resolution},
          {"max_resolution", g.max_resolution},
          {"features_per_level", g.features_per_level},
          {"table_capacity", g.table_capacity}};
}

void grid_from_json(const json& j, HashGridConfig& g) {
  g.num_levels = j.value("num_levels", g.num_levels);
  g.min_resolution = j.value("min_resolution", g.min_resolution);
  g.max_resolution = j.value("max_resolution", g.max_resolution);
  g.features_per_level = j.value("features_per_level", g.features_per_level);
  g.table_capacity = j.value("table_capacity", g.table_capacity);
}

}  // namespace

std::string pipeline_config_json(const PipelineConfig& cfg) {
  json doc;
  doc["preset"] = cfg.preset;
  doc["paths"] = {{"manifest", cfg.manifest_path},
                  {"plan", cfg.plan_path},
                  {"checkpoint_dir", cfg.checkpoint_dir},
                  {"prior", cfg.prior_path}};
  doc["seed"] = cfg.seed;
  doc["threads"] = cfg.threads;
  doc["partition"] = {{"num_tiles", cfg.num_tiles}, {"subfields_per_tile", cfg.subfields_per_tile}};
  doc["field"] = {{"main_grid", grid_json(cfg.field.main_grid)},
                  {"proposal_grid", grid_json(cfg.field.proposal_grid)},
                  {"g_dim", cfg.field.g_dim},
                  {"hidden_width", cfg.field.hidden_width},
                  {"proposal_hidden_width", cfg.field.proposal_hidden_width},
                  {"sh_degree", cfg.field.sh_degree},
                  {"embedding_dim", cfg.field.embedding_dim},
                  {"feature_dim", cfg.field.feature_dim}};
  doc["train"] = {{"iterations", cfg.train.iterations},
                  {"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"lr_decay_factor", cfg.train.lr_decay_factor},
                  {"loss_weights",
                   {{"feat", cfg.train.loss_weights.feat},
                    {"sky", cfg.train.loss_weights.sky},
                    {"inter", cfg.train.loss_weights.inter},
                    {"dist", cfg.train.loss_weights.dist}}},
                  {"adamw",
                   {{"beta1", cfg.train.adamw.beta1},
                    {"beta2", cfg.train.adamw.beta2},
                    {"eps", cfg.train.adamw.eps},
                    {"weight_decay", cfg.train.adamw.weight_decay}}},
                  {"grad_clip_norm", cfg.train.grad_clip_norm},
                  {"proposal_samples", cfg.train.proposal.stage_samples},
                  {"final_samples", cfg.train.proposal.final_samples},
                  {"holdout_modulus", cfg.train.holdout_modulus}};
  doc["extract"] = {{"stride", cfg.extract_stride}, {"voxel_size", cfg.voxel_size}};
  doc["rasterize"] = {{"x_min", cfg.bev.x_min},   {"x_max", cfg.bev.x_max},
                      {"y_min", cfg.bev.y_min},   {"y_max", cfg.bev.y_max},
                      {"z_min", cfg.bev.z_min},   {"z_max", cfg.bev.z_max},
                      {"resolution", cfg.bev.resolution}, {"height_bins", cfg.height_bins}};
  return doc.dump(2);
}

void save_pipeline_config(const PipelineConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write config: " + path);
  os << pipeline_config_json(cfg) << "\n";
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("config not found: " + path);
  json doc;
  try {
    is >> doc;
  } catch (const json::exception& e) {
    throw DataError("config parse error in " + path + ": " + e.what());
  }

  try {
    const std::string preset = doc.value("preset", "desk");
    int feature_dim = 64;
    if (doc.contains("field") && doc["field"].contains("feature_dim"))
      feature_dim = doc["field"]["feature_dim"].get<int>();
    PipelineConfig cfg = make_pipeline_config(preset, feature_dim);

    if (doc.contains("paths")) {
      const auto& p = doc["paths"];
      cfg.manifest_path = p.value("manifest", cfg.manifest_path);
      cfg.plan_path = p.value("plan", cfg.plan_path);
      cfg.checkpoint_dir = p.value("checkpoint_dir", cfg.checkpoint_dir);
      cfg.prior_path = p.value("prior", cfg.prior_path);
    }
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.threads = doc.value("threads", cfg.threads);
    if (doc.contains("partition")) {
      cfg.num_tiles = doc["partition"].value("num_tiles", cfg.num_tiles);
      cfg.subfields_per_tile = doc["partition"].value("subfields_per_tile", cfg.subfields_per_tile);
    }
    if (doc.contains("field")) {
      const auto& f = doc["field"];
      if (f.contains("main_grid")) grid_from_json(f["main_grid"], cfg.field.main_grid);
      if (f.contains("proposal_grid")) grid_from_json(f["proposal_grid"], cfg.field.proposal_grid);
      cfg.field.g_dim = f.value("g_dim", cfg.field.g_dim);
      cfg.field.hidden_width = f.value("hidden_width", cfg.field.hidden_width);
      cfg.field.proposal_hidden_width =
          f.value("proposal_hidden_width", cfg.field.proposal_hidden_width);
      cfg.field.sh_degree = f.value("sh_degree", cfg.field.sh_degree);
      cfg.field.embedding_dim = f.value("embedding_dim", cfg.field.embedding_dim);
      cfg.field.feature_dim = f.value("feature_dim", cfg.field.feature_dim);
    }
    if (doc.contains("train")) {
      const auto& t = doc["train"];
      cfg.train.iterations = t.value("iterations", cfg.train.iterations);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
      cfg.train.lr_decay_factor = t.value("lr_decay_factor", cfg.train.lr_decay_factor);
      if (t.contains("loss_weights")) {
        const auto& w = t["loss_weights"];
        cfg.train.loss_weights.feat = w.value("feat", cfg.train.loss_weights.feat);
        cfg.train.loss_weights.sky = w.value("sky", cfg.train.loss_weights.sky);
        cfg.train.loss_weights.inter = w.value("inter", cfg.train.loss_weights.inter);
        cfg.train.loss_weights.dist = w.value("dist", cfg.train.loss_weights.dist);
      }
      if (t.contains("adamw")) {
        const auto& a = t["adamw"];
        cfg.train.adamw.beta1 = a.value("beta1", cfg.train.adamw.beta1);
        cfg.train.adamw.beta2 = a.value("beta2", cfg.train.adamw.beta2);
        cfg.train.adamw.eps = a.value("eps", cfg.train.adamw.eps);
        cfg.train.adamw.weight_decay = a.value("weight_decay", cfg.train.adamw.weight_decay);
      }
      cfg.train.grad_clip_norm = t.value("grad_clip_norm", cfg.train.grad_clip_norm);
      if (t.contains("proposal_samples"))
        cfg.train.proposal.stage_samples = t["proposal_samples"].get<std::vector<int>>();
      cfg.train.proposal.final_samples = t.value("final_samples", cfg.train.proposal.final_samples);
      cfg.train.holdout_modulus = t.value("holdout_modulus", cfg.train.holdout_modulus);
    }
    if (doc.contains("extract")) {
      cfg.extract_stride = doc["extract"].value("stride", cfg.extract_stride);
      cfg.voxel_size = doc["extract"].value("voxel_size", cfg.voxel_size);
    }
    if (doc.contains("rasterize")) {
      const auto& r = doc["rasterize"];
      cfg.bev.x_min = r.value("x_min", cfg.bev.x_min);
      cfg.bev.x_max = r.value("x_max", cfg.bev.x_max);
      cfg.bev.y_min = r.value("y_min", cfg.bev.y_min);
      cfg.bev.y_max = r.value("y_max", cfg.bev.y_max);
      cfg.bev.z_min = r.value("z_min", cfg.bev.z_min);
      cfg.bev.z_max = r.value("z_max", cfg.bev.z_max);
      cfg.bev.resolution = r.value("resolution", cfg.bev.resolution);
      cfg.height_bins = r.value("height_bins", cfg.height_bins);
    }

    cfg.train.seed = cfg.seed;
    cfg.train.threads = cfg.threads;
    return cfg;
  } catch (const json::exception& e) {
    throw DataError("config field error in " + path + ": " + e.what());
  }
}

}  // namespace cityprior
