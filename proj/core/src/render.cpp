#include "cityprior/render.hpp"

#include <algorithm>
#include <cmath>

#include "cityprior/errors.hpp"
#include "cityprior/threading.hpp"

namespace cityprior {

std::vector<double> sample_uniform(double near, double far, int n, bool stratified, Rng& rng) {
  std::vector<double> depths(n);
  const double width = (far - near) / n;
  for (int k = 0; k < n; ++k) {
    double u = stratified ? rng.next_double() : 0.5;
    depths[k] = near + (k + u) * width;
  }
  return depths;
}

std::vector<double> sample_uniform(const Ray& ray, int n, bool stratified, uint64_t seed) {
  if (n < 2) throw DataError("sample_uniform: need at least 2 samples");
  Rng rng(seed);
  return sample_uniform(ray.near, ray.far, n, stratified, rng);
}

std::vector<double> resample_from_weights(const std::vector<double>& depths,
                                          const std::vector<double>& weights, double far, int n,
                                          bool stratified, Rng& rng) {
  if (depths.empty() || depths.size() != weights.size())
    throw DataError("resample_from_weights: depths/weights mismatch");
  const int nbins = static_cast<int>(depths.size());

  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw DataError("resample_from_weights: negative weight");
    total += w;
  }

  std::vector<double> out(n);
  if (total <= 0.0) {
    // all-zero weights: uniform over the covered range
    return sample_uniform(depths.front(), far, n, stratified, rng);
  }

  auto edge = [&](int j) { return j < nbins ? depths[j] : far; };
  int j = 0;
  double cum = 0.0;
  for (int k = 0; k < n; ++k) {
    double u = stratified ? (k + rng.next_double()) / n : (k + 0.5) / n;
    double target = u * total;
    while (j + 1 < nbins && cum + weights[j] <= target) {
      cum += weights[j];
      ++j;
    }
    double denom = weights[j] > 0.0 ? weights[j] : 1.0;
    double frac = std::clamp((target - cum) / denom, 0.0, 1.0);
    out[k] = edge(j) + frac * (edge(j + 1) - edge(j));
  }
  return out;
}

int assign_subfield(const TileField& tile, const Vec3& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < tile.subfields.size(); ++j) {
    double d = (x - tile.subfields[j].centroid).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

void composite_weights(RaySampleBatch& batch) {
  const int n = batch.size();
  batch.alphas.resize(n);
  batch.trans.resize(n);
  batch.weights.resize(n);
  double T = 1.0;
  double opacity = 0.0;
  for (int i = 0; i < n; ++i) {
    double a = -std::expm1(-batch.densities[i] * batch.deltas[i]);
    batch.alphas[i] = a;
    batch.trans[i] = T;
    batch.weights[i] = T * a;
    opacity += batch.weights[i];
    T *= 1.0 - a;
  }
  batch.opacity = opacity;
}

void composite_weights_backward(const RaySampleBatch& batch, const double* d_weights,
                                double* d_density) {
  // w_i = T_i a_i with T_i = prod_{k<i} (1 - a_k) and a_i = 1 - exp(-s_i d_i):
  //   dw_i/ds_i = d_i T_{i+1},   dw_i/ds_j = -d_j w_i for j < i,
  // so dL/ds_j = d_j (T_{j+1} dw_j - sum_{i>j} w_i dw_i), via a suffix sum.
  const int n = batch.size();
  double suffix = 0.0;
  for (int j = n - 1; j >= 0; --j) {
    double t_next = batch.trans[j] * (1.0 - batch.alphas[j]);
    d_density[j] = batch.deltas[j] * (t_next * d_weights[j] - suffix);
    suffix += batch.weights[j] * d_weights[j];
  }
}

RayRenderer::RayRenderer(const TileField& tile, ProposalConfig cfg)
    : tile_(&tile), cfg_(std::move(cfg)) {
  if (!cfg_.valid()) throw DataError("invalid proposal config: all sample counts must be >= 2");
  sh_.resize(tile.sh_dim());
  prop_evals_.resize(tile.proposals.size());
  sf_evals_.resize(tile.subfields.size());
  group_members_.resize(tile.subfields.size());
  result_.proposal_batches.resize(tile.proposals.size());
}

void RayRenderer::begin_ray(const Ray& ray) {
  ray_ = ray;
  tile_->embedding_index(ray.video_id);  // reject unknown videos up front
  sh_encode(ray.direction, tile_->config.sh_degree, sh_.data());
  t0_ = ray.near;
  t1_ = ray.far;
  in_box_ = tile_->bounding_box.clip_ray(ray.origin, ray.direction, t0_, t1_) && t0_ < t1_;
  for (auto& b : result_.proposal_batches) b = RaySampleBatch{};
  result_.final_batch = RaySampleBatch{};
}

namespace {

void fill_deltas(RaySampleBatch& batch) {
  const int n = batch.size();
  batch.deltas.resize(n);
  for (int i = 0; i + 1 < n; ++i) batch.deltas[i] = batch.depths[i + 1] - batch.depths[i];
  if (n > 0) batch.deltas[n - 1] = batch.t_far - batch.depths[n - 1];
}

}  // namespace

void RayRenderer::run_proposal_stage(int stage, const std::vector<double>& depths) {
  RaySampleBatch& batch = result_.proposal_batches[stage];
  batch.depths = depths;
  batch.t_near = t0_;
  batch.t_far = t1_;
  fill_deltas(batch);

  const int n = batch.size();
  std::vector<Vec3> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = ray_.origin + batch.depths[i] * ray_.direction;
  prop_evals_[stage].forward(tile_->proposals[stage], xs.data(), n);
  batch.densities = prop_evals_[stage].density();
  composite_weights(batch);
}

void RayRenderer::run_final_stage(const std::vector<double>& depths) {
  RaySampleBatch& batch = result_.final_batch;
  const TileFieldConfig& cfg = tile_->config;
  const int D = cfg.feature_dim;
  batch.depths = depths;
  batch.t_near = t0_;
  batch.t_far = t1_;
  fill_deltas(batch);

  const int n = batch.size();
  std::vector<Vec3> xs(n);
  batch.subfield.resize(n);
  for (auto& g : group_members_) g.clear();
  for (int i = 0; i < n; ++i) {
    xs[i] = ray_.origin + batch.depths[i] * ray_.direction;
    batch.subfield[i] = assign_subfield(*tile_, xs[i]);
    group_members_[batch.subfield[i]].push_back(i);
  }

  batch.densities.assign(n, 0.0);
  batch.colors.assign(static_cast<std::size_t>(n) * 3, 0.0);
  batch.features.assign(static_cast<std::size_t>(n) * D, 0.0);

  std::vector<Vec3> group_xs;
  for (std::size_t s = 0; s < tile_->subfields.size(); ++s) {
    const auto& members = group_members_[s];
    if (members.empty()) continue;
    group_xs.resize(members.size());
    for (std::size_t m = 0; m < members.size(); ++m) group_xs[m] = xs[members[m]];
    SubFieldEval& eval = sf_evals_[s];
    eval.forward(tile_->subfields[s], *tile_, group_xs.data(), static_cast<int>(members.size()),
                 sh_.data(), ray_.video_id);
    for (std::size_t m = 0; m < members.size(); ++m) {
      const int i = members[m];
      batch.densities[i] = eval.density()[m];
      for (int c = 0; c < 3; ++c) batch.colors[i * 3 + c] = eval.color()[m * 3 + c];
      for (int d = 0; d < D; ++d)
        batch.features[static_cast<std::size_t>(i) * D + d] = eval.feature()[m * D + d];
    }
  }

  composite_weights(batch);

  sky_eval_.forward(*tile_, sh_.data(), ray_.video_id);
  const Vec3& c_sky = sky_eval_.color();
  const Eigen::VectorXd& f_sky = sky_eval_.feature();

  Vec3 rgb = Vec3::Zero();
  Eigen::VectorXd feat = Eigen::VectorXd::Zero(D);
  double depth_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = batch.weights[i];
    for (int c = 0; c < 3; ++c) rgb[c] += w * batch.colors[i * 3 + c];
    for (int d = 0; d < D; ++d) feat[d] += w * batch.features[static_cast<std::size_t>(i) * D + d];
    depth_sum += w * batch.depths[i];
  }
  const double residual = 1.0 - batch.opacity;
  batch.rendered_rgb = rgb + residual * c_sky;
  batch.rendered_feature = feat + residual * f_sky;
  batch.depth = depth_sum / std::max(batch.opacity, 1e-10);
}

const RayRenderResult& RayRenderer::render(const Ray& ray, uint64_t seed, bool stratified) {
  begin_ray(ray);
  Rng rng(seed);
  if (!in_box_) {
    run_final_stage({});
    return result_;
  }

  std::vector<double> depths;
  for (std::size_t p = 0; p < tile_->proposals.size(); ++p) {
    int count = p < cfg_.stage_samples.size()
                    ? cfg_.stage_samples[p]
                    : (cfg_.stage_samples.empty() ? cfg_.final_samples : cfg_.stage_samples.back());
    if (p == 0) {
      depths = sample_uniform(t0_, t1_, count, stratified, rng);
    } else {
      const RaySampleBatch& prev = result_.proposal_batches[p - 1];
      depths = resample_from_weights(prev.depths, prev.weights, t1_, count, stratified, rng);
    }
    run_proposal_stage(static_cast<int>(p), depths);
  }

  if (tile_->proposals.empty()) {
    depths = sample_uniform(t0_, t1_, cfg_.final_samples, stratified, rng);
  } else {
    const RaySampleBatch& last = result_.proposal_batches.back();
    depths = resample_from_weights(last.depths, last.weights, t1_, cfg_.final_samples, stratified, rng);
  }
  run_final_stage(depths);
  return result_;
}

const RayRenderResult& RayRenderer::composite_at(const Ray& ray, const std::vector<double>& depths) {
  begin_ray(ray);
  for (std::size_t i = 1; i < depths.size(); ++i)
    if (depths[i] < depths[i - 1]) throw DataError("composite: depths must be sorted ascending");
  if (!depths.empty() && (depths.front() < ray.near || depths.back() > ray.far))
    throw DataError("composite: depths outside [near, far]");
  // caller-supplied depths composite over the full [near, far] span; sample
  // positions are clamped into the grid box by the hash encoding
  t0_ = ray.near;
  t1_ = ray.far;
  run_final_stage(depths);
  return result_;
}

const RayRenderResult& RayRenderer::render_at(const Ray& ray,
                                              const std::vector<std::vector<double>>& proposal_depths,
                                              const std::vector<double>& final_depths) {
  begin_ray(ray);
  if (proposal_depths.size() != tile_->proposals.size())
    throw DataError("render_at: wrong number of proposal stages");
  for (std::size_t p = 0; p < proposal_depths.size(); ++p)
    run_proposal_stage(static_cast<int>(p), proposal_depths[p]);
  run_final_stage(final_depths);
  return result_;
}

void RayRenderer::backward(const RayBackwardInput& grad_in, TileGrads& grads) {
  const RaySampleBatch& batch = result_.final_batch;
  const TileFieldConfig& cfg = tile_->config;
  const int n = batch.size();
  const int D = cfg.feature_dim;
  const bool has_feature = grad_in.d_feature.size() == D;

  const Vec3& c_sky = sky_eval_.color();
  const Eigen::VectorXd& f_sky = sky_eval_.feature();

  if (n > 0) {
    // dL/dw_i = (c_i - c_sky).dC + (f_i - f_sky).dF + dO + extra_i
    std::vector<double> d_w(n, 0.0);
    std::vector<double> d_color(static_cast<std::size_t>(n) * 3);
    std::vector<double> d_feature(static_cast<std::size_t>(n) * D, 0.0);
    for (int i = 0; i < n; ++i) {
      double dw = grad_in.d_opacity;
      for (int c = 0; c < 3; ++c) {
        dw += (batch.colors[i * 3 + c] - c_sky[c]) * grad_in.d_rgb[c];
        d_color[i * 3 + c] = batch.weights[i] * grad_in.d_rgb[c];
      }
      if (has_feature) {
        const double* fi = batch.features.data() + static_cast<std::size_t>(i) * D;
        double* dfi = d_feature.data() + static_cast<std::size_t>(i) * D;
        for (int d = 0; d < D; ++d) {
          dw += (fi[d] - f_sky[d]) * grad_in.d_feature[d];
          dfi[d] = batch.weights[i] * grad_in.d_feature[d];
        }
      }
      if (grad_in.d_weights_final) dw += grad_in.d_weights_final[i];
      d_w[i] = dw;
    }

    std::vector<double> d_density(n);
    composite_weights_backward(batch, d_w.data(), d_density.data());

    std::vector<double> g_density, g_color, g_feature;
    for (std::size_t s = 0; s < tile_->subfields.size(); ++s) {
      const auto& members = group_members_[s];
      if (members.empty()) continue;
      const int m = static_cast<int>(members.size());
      g_density.resize(m);
      g_color.resize(static_cast<std::size_t>(m) * 3);
      g_feature.resize(static_cast<std::size_t>(m) * D);
      for (int k = 0; k < m; ++k) {
        const int i = members[k];
        g_density[k] = d_density[i];
        for (int c = 0; c < 3; ++c) g_color[k * 3 + c] = d_color[i * 3 + c];
        for (int d = 0; d < D; ++d)
          g_feature[static_cast<std::size_t>(k) * D + d] =
              d_feature[static_cast<std::size_t>(i) * D + d];
      }
      sf_evals_[s].backward(tile_->subfields[s], *tile_, g_density.data(), g_color.data(),
                            has_feature ? g_feature.data() : nullptr, grads.subfields[s],
                            grads.video_embeddings.data() +
                                static_cast<std::size_t>(tile_->embedding_index(ray_.video_id)) *
                                    cfg.embedding_dim);
    }
  }

  // sky receives the residual transmittance share
  const double residual = 1.0 - batch.opacity;
  Vec3 d_sky_color = residual * grad_in.d_rgb;
  Eigen::VectorXd d_sky_feature;
  if (has_feature) d_sky_feature = residual * grad_in.d_feature;
  sky_eval_.backward(*tile_, d_sky_color, d_sky_feature, grads.sky,
                     grads.video_embeddings.data() +
                         static_cast<std::size_t>(tile_->embedding_index(ray_.video_id)) *
                             cfg.embedding_dim);

  // proposal stages are supervised only through their weights
  for (std::size_t p = 0; p < result_.proposal_batches.size(); ++p) {
    if (p >= grad_in.d_weights_prop.size() || grad_in.d_weights_prop[p] == nullptr) continue;
    const RaySampleBatch& pb = result_.proposal_batches[p];
    if (pb.size() == 0) continue;
    std::vector<double> d_density(pb.size());
    composite_weights_backward(pb, grad_in.d_weights_prop[p], d_density.data());
    prop_evals_[p].backward(tile_->proposals[p], d_density.data(), grads.proposals[p]);
  }
}

RayRenderResult render_ray(const TileField& tile, const Ray& ray, const ProposalConfig& cfg,
                           uint64_t seed, bool stratified) {
  RayRenderer renderer(tile, cfg);
  return renderer.render(ray, seed, stratified);
}

RaySampleBatch composite(const TileField& tile, const Ray& ray, const std::vector<double>& depths) {
  if (depths.size() < 2) throw DataError("composite: need at least 2 sorted depths");
  RayRenderer renderer(tile, ProposalConfig{});
  return renderer.composite_at(ray, depths).final_batch;
}

RenderedImages render_image(const TileField& tile, const CameraFrame& frame,
                            const ProposalConfig& cfg, int num_threads) {
  const int H = frame.intrinsics.height, W = frame.intrinsics.width;
  const int D = tile.config.feature_dim;
  RenderedImages out;
  out.rgb = ImageF(H, W, 3);
  out.feature = ImageF(H, W, D);
  out.opacity = ImageF(H, W, 1);
  out.depth = ImageF(H, W, 1);

  parallel_for(static_cast<std::size_t>(H) * W, num_threads,
               [&](int, std::size_t begin, std::size_t end) {
                 RayRenderer renderer(tile, cfg);
                 for (std::size_t p = begin; p < end; ++p) {
                   const int r = static_cast<int>(p / W), c = static_cast<int>(p % W);
                   Ray ray = pixel_to_ray(frame, r, c);
                   // bin midpoints: image rendering is deterministic
                   const RaySampleBatch& fb = renderer.render(ray, 0, false).final_batch;
                   for (int ch = 0; ch < 3; ++ch)
                     out.rgb.at(r, c, ch) = static_cast<float>(fb.rendered_rgb[ch]);
                   for (int d = 0; d < D; ++d)
                     out.feature.at(r, c, d) = static_cast<float>(fb.rendered_feature[d]);
                   out.opacity.at(r, c) = static_cast<float>(fb.opacity);
                   out.depth.at(r, c) = static_cast<float>(fb.depth);
                 }
               });
  return out;
}

}  // namespace cityprior
