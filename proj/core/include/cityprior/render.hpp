#pragma once

#include <cstdint>
#include <vector>

#include "cityprior/dataset.hpp"
#include "cityprior/field.hpp"
#include "cityprior/geometry.hpp"
#include "cityprior/image.hpp"
#include "cityprior/rng.hpp"

namespace cityprior {

struct ProposalConfig {
  std::vector<int> stage_samples = {128, 64};
  int final_samples = 32;

  bool valid() const {
    if (final_samples < 2) return false;
    for (int n : stage_samples)
      if (n < 2) return false;
    return true;
  }
};

// Everything produced along one ray for one stage: sorted sample depths,
// interval lengths (the last interval runs to the clipped far plane),
// densities, compositing terms, and the blended outputs.
struct RaySampleBatch {
  std::vector<double> depths;
  std::vector<double> deltas;
  std::vector<int> subfield;      // per-sample assignment; empty for proposal stages
  std::vector<double> densities;
  std::vector<double> alphas;
  std::vector<double> trans;      // T^i with T^1 = 1
  std::vector<double> weights;    // T^i alpha^i
  std::vector<double> colors;     // n x 3; empty for proposal stages
  std::vector<double> features;   // n x D; empty for proposal stages
  double opacity = 0.0;           // O = sum of weights
  Vec3 rendered_rgb = Vec3::Zero();
  Eigen::VectorXd rendered_feature;
  double depth = 0.0;             // opacity-weighted mean depth
  double t_near = 0.0, t_far = 0.0;  // sampling interval after box clipping

  int size() const { return static_cast<int>(depths.size()); }
};

struct RayRenderResult {
  RaySampleBatch final_batch;
  std::vector<RaySampleBatch> proposal_batches;
};

// n depths in [near, far]: bin midpoints when not stratified, one uniform
// draw per bin otherwise. Always sorted.
std::vector<double> sample_uniform(double near, double far, int n, bool stratified, Rng& rng);
std::vector<double> sample_uniform(const Ray& ray, int n, bool stratified, uint64_t seed);

// Inverse-CDF draws from the piecewise-constant pdf proportional to
// weights over the depth bins [t_i, t_{i+1}] (last bin ends at far).
// All-zero weights fall back to uniform. Sorted output.
std::vector<double> resample_from_weights(const std::vector<double>& depths,
                                          const std::vector<double>& weights, double far, int n,
                                          bool stratified, Rng& rng);

// Nearest sub-field centroid; ties break to the lowest index.
int assign_subfield(const TileField& tile, const Vec3& x);

// Per-ray gradient seeds for the backward pass through rendering.
struct RayBackwardInput {
  Vec3 d_rgb = Vec3::Zero();                   // dL/d rendered_rgb
  Eigen::VectorXd d_feature;                   // dL/d rendered_feature (size 0 = none)
  double d_opacity = 0.0;                      // dL/dO
  const double* d_weights_final = nullptr;     // extra dL/dw per final sample (distortion)
  std::vector<const double*> d_weights_prop;   // dL/dw per proposal stage (interlevel)
};

// Renders rays against one tile and replays exact gradients. One instance
// per worker thread; forward caches are reused between render and backward.
class RayRenderer {
 public:
  RayRenderer(const TileField& tile, ProposalConfig cfg);

  // Two-stage proposal resampling followed by the full-field composite.
  const RayRenderResult& render(const Ray& ray, uint64_t seed, bool stratified);

  // Full-field composite at caller-supplied depths (no proposal stages).
  const RayRenderResult& composite_at(const Ray& ray, const std::vector<double>& depths);

  // Re-evaluates every stage at fixed depths. Sample placement is a
  // stop-gradient boundary, so gradient checks and replays hold the depths
  // of a previous render constant while parameters vary.
  const RayRenderResult& render_at(const Ray& ray,
                                   const std::vector<std::vector<double>>& proposal_depths,
                                   const std::vector<double>& final_depths);

  // Accumulates parameter gradients for the most recent render into grads.
  void backward(const RayBackwardInput& grad_in, TileGrads& grads);

  const RayRenderResult& result() const { return result_; }
  const TileField& tile() const { return *tile_; }

 private:
  void begin_ray(const Ray& ray);
  void run_proposal_stage(int stage, const std::vector<double>& depths);
  void run_final_stage(const std::vector<double>& depths);

  const TileField* tile_;
  ProposalConfig cfg_;
  RayRenderResult result_;

  Ray ray_;
  double t0_ = 0.0, t1_ = 0.0;
  bool in_box_ = false;
  std::vector<double> sh_;
  std::vector<ProposalEval> prop_evals_;
  std::vector<std::vector<int>> group_members_;  // per sub-field sample indices
  std::vector<SubFieldEval> sf_evals_;
  SkyEval sky_eval_;
};

// Spec-level wrappers.
RayRenderResult render_ray(const TileField& tile, const Ray& ray, const ProposalConfig& cfg,
                           uint64_t seed, bool stratified = true);
RaySampleBatch composite(const TileField& tile, const Ray& ray, const std::vector<double>& depths);

struct RenderedImages {
  ImageF rgb;       // H x W x 3
  ImageF feature;   // H x W x D
  ImageF opacity;   // H x W x 1
  ImageF depth;     // H x W x 1, meters
};

RenderedImages render_image(const TileField& tile, const CameraFrame& frame,
                            const ProposalConfig& cfg, int num_threads = 1);

// Shared compositing kernel: fills alphas/trans/weights/opacity from
// densities and deltas (exponential absorption along the ray).
void composite_weights(RaySampleBatch& batch);
// dL/d density from total per-weight gradients, via the transmittance chain.
void composite_weights_backward(const RaySampleBatch& batch, const double* d_weights,
                                double* d_density);

}  // namespace cityprior
