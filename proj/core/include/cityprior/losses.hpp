#pragma once

#include <cstdint>
#include <vector>

#include "cityprior/render.hpp"

namespace cityprior {

struct LossWeights {
  double feat = 0.5;
  double sky = 0.001;
  double inter = 1.0;
  double dist = 0.002;
};

struct LossBreakdown {
  double rgb = 0.0, feat = 0.0, sky = 0.0, inter = 0.0, dist = 0.0;
  double total(const LossWeights& w) const {
    return rgb + w.feat * feat + w.sky * sky + w.inter * inter + w.dist * dist;
  }
};

// Mean squared error over rays and channels.
double rgb_loss(const std::vector<Vec3>& pred, const std::vector<Vec3>& target);
double feat_loss(const std::vector<Eigen::VectorXd>& pred,
                 const std::vector<Eigen::VectorXd>& target);

// Binary cross entropy between accumulated opacity (clamped to
// [1e-6, 1 - 1e-6]) and target occupancy 1 - sky_mask, averaged over rays.
double sky_loss(const std::vector<double>& opacity, const std::vector<uint8_t>& sky_mask);
constexpr double kSkyLossClamp = 1e-6;
// d(BCE)/d(opacity) for a single ray (zero where the clamp saturates).
double sky_loss_grad(double opacity, bool is_sky);

// Proposal-weight histogram bound: for each proposal interval, the summed
// final weights of all overlapping final intervals must upper-bound the
// proposal weight; shortfalls are penalized quadratically. The bound is
// treated as constant, so gradients reach only the proposal weights.
constexpr double kInterlevelEps = 1e-7;
double interlevel_loss(const RaySampleBatch& final_batch,
                       const std::vector<RaySampleBatch>& proposal_batches);
// Adds scale * dL/d(proposal weight) into d_w (sized like proposals[stage]).
void interlevel_loss_grad(const RaySampleBatch& final_batch, const RaySampleBatch& proposal_batch,
                          double scale, double* d_w);

// Weight-compactness regularizer over normalized interval midpoints
// s in [0,1]: sum_{i,j} w_i w_j |s_i - s_j| + (1/3) sum_i w_i^2 width_i.
double distortion_loss(const RaySampleBatch& final_batch);
void distortion_loss_grad(const RaySampleBatch& final_batch, double scale, double* d_w);

// L = L_rgb + lf*L_feat + ls*L_sky + li*L_inter + ld*L_dist
double total_loss(const LossBreakdown& parts, const LossWeights& weights);

}  // namespace cityprior
