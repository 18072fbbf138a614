#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cityprior/adamw.hpp"
#include "cityprior/dataset.hpp"
#include "cityprior/field.hpp"
#include "cityprior/losses.hpp"
#include "cityprior/render.hpp"

namespace cityprior {

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 1024;  // rays
  double learning_rate = 0.01;
  double lr_decay_factor = 0.33;  // applied at the 25/50/75% milestones
  LossWeights loss_weights;
  AdamWConfig adamw;
  double grad_clip_norm = 10.0;
  ProposalConfig proposal;
  uint64_t seed = 1;
  int threads = 1;  // 1 = deterministic mode

  // pixels with (row * width + col) % holdout_modulus == holdout_modulus - 1
  // are excluded from training and used for PSNR; 0 disables the holdout
  int holdout_modulus = 64;

  std::string checkpoint_dir;  // empty = no checkpoints written
  int checkpoint_every = 0;    // 0 = final checkpoint only
  std::string metrics_csv;     // empty = no metrics file
  int log_every = 10;
  int eval_every = 0;  // holdout PSNR cadence; 0 = once at the end
};

// 0.33^k of the initial rate, where k counts passed milestones
// (floor(fraction * iterations) for fraction in {0.25, 0.5, 0.75}).
double lr_at(const TrainConfig& cfg, int step);

struct TrainMetrics {
  std::vector<LossBreakdown> per_step;
  std::vector<double> total_per_step;
  double final_psnr = 0.0;      // over the holdout pixels; 0 when no holdout
  double final_feat_mse = 0.0;  // per-channel feature MSE over the holdout
};

// Samples masked ray batches, renders with two proposal stages, applies the
// five-term loss, and runs AdamW with milestone decay. Throws NumericError
// naming the offending term if any loss goes non-finite.
TrainMetrics train_tile(TileField& tile, const DatasetManifest& manifest, const TrainConfig& cfg);

struct HoldoutEval {
  double psnr = 0.0;
  double feat_mse = 0.0;
};
HoldoutEval evaluate_holdout(const TileField& tile, const DatasetManifest& manifest,
                             const std::vector<RayBatchSampler::PixelRef>& pixels,
                             const RayBatchSampler& sampler, const ProposalConfig& cfg,
                             int threads);

}  // namespace cityprior
