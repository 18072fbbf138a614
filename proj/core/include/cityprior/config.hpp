#pragma once

#include <string>

#include "cityprior/field.hpp"
#include "cityprior/integrate.hpp"
#include "cityprior/train.hpp"

namespace cityprior {

// One document configuring the whole pipeline. Presets: "desk" is sized for
// laptop-scale synthetic scenes and CI; "paper" carries the full-scale
// settings (10x4 hash levels to 2^14, 2^20 tables, 128/64 proposal samples,
// 100k iterations at batch 2^16) for documentation and real runs.
struct PipelineConfig {
  std::string preset = "desk";

  std::string manifest_path;
  std::string plan_path;
  std::string checkpoint_dir;
  std::string prior_path;

  uint64_t seed = 1;
  int threads = 1;

  int num_tiles = 1;
  int subfields_per_tile = 2;

  TileFieldConfig field;
  TrainConfig train;

  int extract_stride = 4;
  double voxel_size = 0.2;

  GridSpec bev;
  int height_bins = 4;
};

TileFieldConfig desk_field_config(int feature_dim);
TileFieldConfig paper_field_config(int feature_dim);
TrainConfig desk_train_config();
TrainConfig paper_train_config();

PipelineConfig make_pipeline_config(const std::string& preset, int feature_dim);

// JSON round trip with preset inheritance: the document names a preset and
// overrides individual fields.
PipelineConfig load_pipeline_config(const std::string& path);
std::string pipeline_config_json(const PipelineConfig& cfg);
void save_pipeline_config(const PipelineConfig& cfg, const std::string& path);

}  // namespace cityprior
