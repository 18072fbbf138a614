#include "cityprior/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "cityprior/errors.hpp"
#include "cityprior/rng.hpp"
#include "cityprior/threading.hpp"

namespace fs = std::filesystem;

namespace cityprior {

double lr_at(const TrainConfig& cfg, int step) {
  int k = 0;
  for (double frac : {0.25, 0.5, 0.75})
    if (step >= static_cast<int>(std::floor(frac * cfg.iterations))) ++k;
  return cfg.learning_rate * std::pow(cfg.lr_decay_factor, k);
}

HoldoutEval evaluate_holdout(const TileField& tile, const DatasetManifest& manifest,
                             const std::vector<RayBatchSampler::PixelRef>& pixels,
                             const RayBatchSampler& sampler, const ProposalConfig& cfg,
                             int threads) {
  HoldoutEval out;
  if (pixels.empty()) return out;
  const int D = manifest.feature_dim;

  std::vector<double> rgb_sq(threads > 1 ? threads : 1, 0.0);
  std::vector<double> feat_sq(rgb_sq.size(), 0.0);
  parallel_for(pixels.size(), static_cast<int>(rgb_sq.size()),
               [&](int w, std::size_t begin, std::size_t end) {
                 RayRenderer renderer(tile, cfg);
                 for (std::size_t i = begin; i < end; ++i) {
                   RaySample s = sampler.make_sample(pixels[i]);
                   const RaySampleBatch& fb = renderer.render(s.ray, 0, false).final_batch;
                   rgb_sq[w] += (fb.rendered_rgb - s.target_rgb).squaredNorm();
                   feat_sq[w] += (fb.rendered_feature - s.target_feature).squaredNorm();
                 }
               });
  double rgb_mse = 0.0, feat_mse = 0.0;
  for (double v : rgb_sq) rgb_mse += v;
  for (double v : feat_sq) feat_mse += v;
  rgb_mse /= 3.0 * pixels.size();
  feat_mse /= static_cast<double>(D) * pixels.size();
  out.psnr = rgb_mse > 0.0 ? -10.0 * std::log10(rgb_mse) : 99.0;
  out.feat_mse = feat_mse;
  return out;
}

namespace {

void check_finite(double v, const char* term, int step) {
  if (!std::isfinite(v))
    throw NumericError(std::string(term) + " loss is not finite at iteration " +
                       std::to_string(step));
}

}  // namespace

TrainMetrics train_tile(TileField& tile, const DatasetManifest& manifest, const TrainConfig& cfg) {
  if (cfg.iterations < 0) throw DataError("train: iterations must be >= 0");
  if (cfg.batch_size < 1) throw DataError("train: batch_size must be >= 1");
  const int threads = std::max(1, cfg.threads);
  const int D = manifest.feature_dim;
  if (D != tile.config.feature_dim)
    throw DataError("train: manifest feature_dim does not match the tile field");

  RayBatchSampler sampler(manifest);
  std::vector<RayBatchSampler::PixelRef> holdout;
  if (cfg.holdout_modulus > 1) {
    const int mod = cfg.holdout_modulus;
    holdout = sampler.split_off([&](const RayBatchSampler::PixelRef& p) {
      const CameraFrame& f = manifest.frames[p.frame];
      return (static_cast<int>(p.row) * f.intrinsics.width + p.col) % mod == mod - 1;
    });
  }
  if (sampler.pool().empty()) throw DataError("train: no trainable pixels left after masking");

  auto params = collect_param_blocks(tile);
  AdamW optimizer(cfg.adamw);

  std::vector<TileGrads> worker_grads;
  std::vector<std::vector<NamedBlock>> worker_blocks;
  for (int w = 0; w < threads; ++w) {
    worker_grads.push_back(TileGrads::zeros_like(tile));
    worker_blocks.push_back(collect_grad_blocks(worker_grads.back(), tile));
  }
  std::vector<std::unique_ptr<RayRenderer>> renderers;
  for (int w = 0; w < threads; ++w)
    renderers.push_back(std::make_unique<RayRenderer>(tile, cfg.proposal));

  std::ofstream csv;
  if (!cfg.metrics_csv.empty()) {
    csv.open(cfg.metrics_csv);
    if (!csv) throw DataError("cannot write metrics csv: " + cfg.metrics_csv);
    csv << "step,lr,total,rgb,feat,sky,inter,dist,psnr\n";
  }

  auto write_checkpoint_file = [&](const std::string& name) {
    if (cfg.checkpoint_dir.empty()) return;
    fs::create_directories(cfg.checkpoint_dir);
    save_tile_field(tile, (fs::path(cfg.checkpoint_dir) / name).string());
  };

  TrainMetrics metrics;
  const int num_stages = static_cast<int>(tile.proposals.size());

  for (int step = 0; step < cfg.iterations; ++step) {
    const double lr = lr_at(cfg, step);
    const uint64_t step_seed = Rng::mix(cfg.seed, step);
    std::vector<RaySample> batch = sampler.sample(cfg.batch_size, step_seed);
    const double n_rays = static_cast<double>(batch.size());

    for (int w = 0; w < threads; ++w) zero_blocks(worker_blocks[w]);
    std::vector<LossBreakdown> worker_losses(threads);

    parallel_for(batch.size(), threads, [&](int w, std::size_t begin, std::size_t end) {
      RayRenderer& renderer = *renderers[w];
      LossBreakdown& acc = worker_losses[w];
      std::vector<double> d_w_final;
      std::vector<std::vector<double>> d_w_prop(num_stages);

      for (std::size_t i = begin; i < end; ++i) {
        const RaySample& s = batch[i];
        const RayRenderResult& res = renderer.render(s.ray, Rng::mix(step_seed, i), true);
        const RaySampleBatch& fb = res.final_batch;

        acc.rgb += (fb.rendered_rgb - s.target_rgb).squaredNorm();
        acc.feat += (fb.rendered_feature - s.target_feature).squaredNorm();
        double o = std::clamp(fb.opacity, kSkyLossClamp, 1.0 - kSkyLossClamp);
        double y = s.is_sky ? 0.0 : 1.0;
        acc.sky += -(y * std::log(o) + (1.0 - y) * std::log(1.0 - o));
        acc.inter += interlevel_loss(fb, res.proposal_batches);
        acc.dist += distortion_loss(fb);

        RayBackwardInput gin;
        gin.d_rgb = (2.0 / (3.0 * n_rays)) * (fb.rendered_rgb - s.target_rgb);
        gin.d_feature =
            (cfg.loss_weights.feat * 2.0 / (D * n_rays)) * (fb.rendered_feature - s.target_feature);
        gin.d_opacity = cfg.loss_weights.sky * sky_loss_grad(fb.opacity, s.is_sky) / n_rays;

        d_w_final.assign(fb.size(), 0.0);
        distortion_loss_grad(fb, cfg.loss_weights.dist / n_rays, d_w_final.data());
        gin.d_weights_final = fb.size() ? d_w_final.data() : nullptr;

        gin.d_weights_prop.resize(num_stages);
        for (int p = 0; p < num_stages; ++p) {
          const RaySampleBatch& pb = res.proposal_batches[p];
          d_w_prop[p].assign(pb.size(), 0.0);
          if (pb.size())
            interlevel_loss_grad(fb, pb, cfg.loss_weights.inter / n_rays, d_w_prop[p].data());
          gin.d_weights_prop[p] = pb.size() ? d_w_prop[p].data() : nullptr;
        }

        renderer.backward(gin, worker_grads[w]);
      }
    });

    for (int w = 1; w < threads; ++w) add_blocks(worker_blocks[0], worker_blocks[w]);

    LossBreakdown parts;
    for (const LossBreakdown& wl : worker_losses) {
      parts.rgb += wl.rgb;
      parts.feat += wl.feat;
      parts.sky += wl.sky;
      parts.inter += wl.inter;
      parts.dist += wl.dist;
    }
    parts.rgb /= 3.0 * n_rays;
    parts.feat /= static_cast<double>(D) * n_rays;
    parts.sky /= n_rays;
    parts.inter /= n_rays;
    parts.dist /= n_rays;

    check_finite(parts.rgb, "rgb", step);
    check_finite(parts.feat, "feat", step);
    check_finite(parts.sky, "sky", step);
    check_finite(parts.inter, "interlevel", step);
    check_finite(parts.dist, "distortion", step);
    const double total = parts.total(cfg.loss_weights);

    if (cfg.grad_clip_norm > 0.0) {
      double norm = global_norm(worker_blocks[0]);
      if (norm > cfg.grad_clip_norm) scale_blocks(worker_blocks[0], cfg.grad_clip_norm / norm);
    }
    optimizer.step(params, worker_blocks[0], lr);

    metrics.per_step.push_back(parts);
    metrics.total_per_step.push_back(total);

    const bool last = step + 1 == cfg.iterations;
    bool eval_now = cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0;
    HoldoutEval eval;
    if (eval_now) eval = evaluate_holdout(tile, manifest, holdout, sampler, cfg.proposal, threads);

    if (csv.is_open() && (step % cfg.log_every == 0 || last || eval_now)) {
      csv << step << "," << lr << "," << total << "," << parts.rgb << "," << parts.feat << ","
          << parts.sky << "," << parts.inter << "," << parts.dist << ",";
      if (eval_now) csv << eval.psnr;
      csv << "\n";
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && !last)
      write_checkpoint_file("tile_step" + std::to_string(step + 1) + ".ckpt");
  }

  HoldoutEval final_eval =
      evaluate_holdout(tile, manifest, holdout, sampler, cfg.proposal, threads);
  metrics.final_psnr = final_eval.psnr;
  metrics.final_feat_mse = final_eval.feat_mse;

  if (csv.is_open()) {
    csv << cfg.iterations << ",,,,,,,," << metrics.final_psnr << "\n";
  }
  write_checkpoint_file("tile_final.ckpt");
  return metrics;
}

}  // namespace cityprior
