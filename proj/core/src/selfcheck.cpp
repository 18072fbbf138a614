#include "cityprior/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "cityprior/extract.hpp"
#include "cityprior/integrate.hpp"
#include "cityprior/kmeans.hpp"
#include "cityprior/losses.hpp"
#include "cityprior/render.hpp"
#include "cityprior/rng.hpp"
#include "cityprior/sh.hpp"

namespace cityprior {

TileField make_tiny_tile(int feature_dim, uint64_t seed, int subfields) {
  TileFieldConfig cfg;
  cfg.main_grid.num_levels = 2;
  cfg.main_grid.min_resolution = 2;
  cfg.main_grid.max_resolution = 4;
  cfg.main_grid.features_per_level = 2;
  cfg.main_grid.table_capacity = 16;
  cfg.proposal_grid.num_levels = 2;
  cfg.proposal_grid.min_resolution = 2;
  cfg.proposal_grid.max_resolution = 4;
  cfg.proposal_grid.features_per_level = 1;
  cfg.proposal_grid.table_capacity = 16;
  cfg.g_dim = 4;
  cfg.hidden_width = 8;
  cfg.proposal_hidden_width = 8;
  cfg.sh_degree = 2;
  cfg.embedding_dim = 4;
  cfg.feature_dim = feature_dim;

  Aabb box;
  box.min = Vec3(-4, -4, -4);
  box.max = Vec3(4, 4, 4);
  std::vector<Vec3> centroids;
  for (int s = 0; s < subfields; ++s) centroids.emplace_back(s * 2.0 - 1.0, 0.0, 0.0);
  TileField tile = make_tile_field(cfg, centroids, {0, 1}, box, seed);

  // nudge hash tables and embeddings off their tiny/zero init so every
  // parameter class participates in the gradient probes
  Rng rng(Rng::mix(seed, 99));
  auto blocks = collect_param_blocks(tile);
  for (NamedBlock& b : blocks) {
    if (b.name.find("/hash/") != std::string::npos || b.name == "video_embeddings")
      for (std::size_t j = 0; j < b.size; ++j) b.data[j] = rng.uniform(-0.3, 0.3);
  }
  return tile;
}

namespace {

struct FrozenRay {
  Ray ray;
  Vec3 target_rgb;
  Eigen::VectorXd target_feature;
  bool is_sky = false;
  std::vector<std::vector<double>> prop_depths;
  std::vector<double> final_depths;
  std::vector<std::vector<double>> frozen_bounds;  // per stage
};

// Interlevel penalty against bounds captured at the reference parameters;
// resampling and the weight bound are stop-gradient boundaries, so the
// finite-difference loss must hold them constant.
double frozen_interlevel(const RaySampleBatch& prop, const std::vector<double>& bound) {
  double loss = 0.0;
  for (int i = 0; i < prop.size(); ++i) {
    double short_fall = std::max(0.0, bound[i] - prop.weights[i]);
    loss += short_fall * short_fall / (prop.weights[i] + kInterlevelEps);
  }
  return loss;
}

std::vector<double> capture_bounds(const RaySampleBatch& fin, const RaySampleBatch& prop) {
  std::vector<double> bound(prop.size(), 0.0);
  auto hi = [](const RaySampleBatch& b, int i) {
    return i + 1 < b.size() ? b.depths[i + 1] : b.t_far;
  };
  for (int i = 0; i < prop.size(); ++i)
    for (int j = 0; j < fin.size(); ++j)
      if (fin.depths[j] < hi(prop, i) && hi(fin, j) > prop.depths[i]) bound[i] += fin.weights[j];
  return bound;
}

double frozen_loss(const TileField& tile, RayRenderer& renderer,
                   const std::vector<FrozenRay>& rays, const LossWeights& lw) {
  const double n = static_cast<double>(rays.size());
  const int D = tile.config.feature_dim;
  LossBreakdown parts;
  for (const FrozenRay& fr : rays) {
    const RayRenderResult& res = renderer.render_at(fr.ray, fr.prop_depths, fr.final_depths);
    const RaySampleBatch& fb = res.final_batch;
    parts.rgb += (fb.rendered_rgb - fr.target_rgb).squaredNorm() / (3.0 * n);
    parts.feat += (fb.rendered_feature - fr.target_feature).squaredNorm() / (D * n);
    double o = std::clamp(fb.opacity, kSkyLossClamp, 1.0 - kSkyLossClamp);
    double y = fr.is_sky ? 0.0 : 1.0;
    parts.sky += -(y * std::log(o) + (1.0 - y) * std::log(1.0 - o)) / n;
    for (std::size_t p = 0; p < res.proposal_batches.size(); ++p)
      parts.inter += frozen_interlevel(res.proposal_batches[p], fr.frozen_bounds[p]) / n;
    parts.dist += distortion_loss(fb) / n;
  }
  return parts.total(lw);
}

CheckResult check_sh(uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Vec3 d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (d.norm() < 1e-3) continue;
    d.normalize();
    for (int degree = 1; degree <= 4; ++degree) {
      double vals[16];
      sh_encode(d, degree, vals);
      double sum = 0.0;
      for (int i = 0; i < degree * degree; ++i) sum += vals[i] * vals[i];
      double expect = degree * degree / (4.0 * M_PI);
      worst = std::max(worst, std::abs(sum - expect));
    }
  }
  return {"sh-normalization", worst < 1e-9, "max |sum sq - d^2/4pi| = " + std::to_string(worst)};
}

CheckResult check_conservation(uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 2 + static_cast<int>(rng.bounded(30));
    RaySampleBatch b;
    b.densities.resize(n);
    b.deltas.resize(n);
    b.depths.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
      b.densities[i] = rng.uniform(0.0, 5.0);
      b.deltas[i] = rng.uniform(1e-4, 2.0);
    }
    composite_weights(b);
    double residual = 1.0;
    for (int i = 0; i < n; ++i) residual *= 1.0 - b.alphas[i];
    worst = std::max(worst, std::abs(b.opacity + residual - 1.0));
  }
  return {"compositing-conservation", worst < 1e-9,
          "max |sum w + prod(1-a) - 1| = " + std::to_string(worst)};
}

CheckResult check_gradient(uint64_t seed) {
  TileField tile = make_tiny_tile(4, seed);
  RayRenderer renderer(tile, ProposalConfig{{8, 8}, 8});
  LossWeights lw;

  Rng rng(Rng::mix(seed, 1));
  std::vector<FrozenRay> rays;
  for (int r = 0; r < 4; ++r) {
    FrozenRay fr;
    fr.ray.origin = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    fr.ray.direction = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized();
    fr.ray.near = 0.1;
    fr.ray.far = 6.0;
    fr.ray.video_id = r % 2;
    fr.target_rgb = Vec3(rng.next_double(), rng.next_double(), rng.next_double());
    fr.target_feature = Eigen::VectorXd::NullaryExpr(4, [&](Eigen::Index) { return rng.uniform(-1, 1); });
    fr.is_sky = r == 3;
    const RayRenderResult& res = renderer.render(fr.ray, Rng::mix(seed, 50 + r), true);
    for (const auto& pb : res.proposal_batches) {
      fr.prop_depths.push_back(pb.depths);
      fr.frozen_bounds.push_back(capture_bounds(res.final_batch, pb));
    }
    fr.final_depths = res.final_batch.depths;
    rays.push_back(std::move(fr));
  }

  // analytic gradients via the training backward path
  TileGrads grads = TileGrads::zeros_like(tile);
  const double n = static_cast<double>(rays.size());
  const int D = tile.config.feature_dim;
  for (const FrozenRay& fr : rays) {
    const RayRenderResult& res = renderer.render_at(fr.ray, fr.prop_depths, fr.final_depths);
    const RaySampleBatch& fb = res.final_batch;
    RayBackwardInput gin;
    gin.d_rgb = (2.0 / (3.0 * n)) * (fb.rendered_rgb - fr.target_rgb);
    gin.d_feature = (lw.feat * 2.0 / (D * n)) * (fb.rendered_feature - fr.target_feature);
    gin.d_opacity = lw.sky * sky_loss_grad(fb.opacity, fr.is_sky) / n;
    std::vector<double> dwf(fb.size(), 0.0);
    distortion_loss_grad(fb, lw.dist / n, dwf.data());
    gin.d_weights_final = fb.size() ? dwf.data() : nullptr;
    std::vector<std::vector<double>> dwp(res.proposal_batches.size());
    gin.d_weights_prop.resize(res.proposal_batches.size());
    for (std::size_t p = 0; p < res.proposal_batches.size(); ++p) {
      dwp[p].assign(res.proposal_batches[p].size(), 0.0);
      interlevel_loss_grad(fb, res.proposal_batches[p], lw.inter / n, dwp[p].data());
      gin.d_weights_prop[p] = dwp[p].data();
    }
    renderer.backward(gin, grads);
  }

  auto params = collect_param_blocks(tile);
  auto grad_blocks = collect_grad_blocks(grads, tile);
  const double h = 1e-4;
  double worst_rel = 0.0;
  std::string worst_name;
  int checked = 0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t j = 0; j < params[b].size; j += 5) {  // probe subset for speed
      double saved = params[b].data[j];
      params[b].data[j] = saved + h;
      double up = frozen_loss(tile, renderer, rays, lw);
      params[b].data[j] = saved - h;
      double down = frozen_loss(tile, renderer, rays, lw);
      params[b].data[j] = saved;
      double fd = (up - down) / (2.0 * h);
      double an = grad_blocks[b].data[j];
      ++checked;
      double scale = std::max(std::abs(fd), std::abs(an));
      if (scale < 1e-6) {
        if (std::abs(fd - an) > 1e-8 && worst_rel < 1.0) {
          worst_rel = 1.0;
          worst_name = params[b].name + "[" + std::to_string(j) + "] (abs)";
        }
        continue;
      }
      double rel = std::abs(fd - an) / scale;
      if (rel > worst_rel) {
        worst_rel = rel;
        worst_name = params[b].name + "[" + std::to_string(j) + "]";
      }
    }
  }
  std::ostringstream detail;
  detail << checked << " probes, worst rel err " << worst_rel;
  if (!worst_name.empty()) detail << " at " << worst_name;
  return {"gradient-fd", worst_rel < 1e-3, detail.str()};
}

CheckResult check_voxels(uint64_t seed) {
  Rng rng(seed);
  auto dyadic = [&](double lo, double hi) {
    return std::floor(rng.uniform(lo, hi) * 256.0) / 256.0;
  };
  std::vector<SurfacePoint> a(700), b(500);
  for (auto* list : {&a, &b}) {
    for (SurfacePoint& sp : *list) {
      sp.position = Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
      sp.feature = Eigen::VectorXd::NullaryExpr(3, [&](Eigen::Index) { return dyadic(-2, 2); });
    }
  }
  std::vector<SurfacePoint> both = a;
  both.insert(both.end(), b.begin(), b.end());

  const double vs = 0.7;
  const Vec3 origin(-3.1, -3.1, -3.1);
  PriorVoxelGrid ga = voxel_downsample(a, vs, origin);
  PriorVoxelGrid gb = voxel_downsample(b, vs, origin);
  PriorVoxelGrid gu = voxel_downsample(both, vs, origin);
  PriorVoxelGrid gm = merge_priors(ga, gb);

  // brute-force group-by mean
  std::map<PriorVoxelGrid::CellKey, std::pair<Eigen::VectorXd, double>> oracle;
  for (const SurfacePoint& sp : both) {
    auto key = gu.key_of(sp.position);
    auto it = oracle.find(key);
    if (it == oracle.end())
      oracle[key] = {sp.feature, 1.0};
    else {
      it->second.first += sp.feature;
      it->second.second += 1.0;
    }
  }
  if (oracle.size() != gu.cells.size()) return {"voxel-mean", false, "cell count mismatch"};
  for (const auto& [key, cell] : gu.cells) {
    auto it = oracle.find(key);
    if (it == oracle.end()) return {"voxel-mean", false, "extra cell"};
    Eigen::VectorXd mean = it->second.first / it->second.second;
    if (mean != cell.mean() || it->second.second != cell.weight)
      return {"voxel-mean", false, "mean mismatch vs brute force"};
  }
  if (gm.cells.size() != gu.cells.size()) return {"voxel-mean", false, "merge cell count mismatch"};
  for (const auto& [key, cell] : gu.cells) {
    const auto& merged = gm.cells.at(key);
    if (merged.feature_sum != cell.feature_sum || merged.weight != cell.weight)
      return {"voxel-mean", false, "merge identity violated"};
  }
  return {"voxel-mean", true, std::to_string(gu.cells.size()) + " cells, exact"};
}

CheckResult check_prior_roundtrip(uint64_t seed) {
  Rng rng(seed);
  std::vector<SurfacePoint> pts(300);
  for (SurfacePoint& sp : pts) {
    sp.position = Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-1, 3));
    sp.feature = Eigen::VectorXd::NullaryExpr(4, [&](Eigen::Index) { return rng.uniform(-1, 1); });
  }
  PriorVoxelGrid g = voxel_downsample(pts, 0.4, Vec3(-5, -5, -1));
  auto tmp = std::filesystem::temp_directory_path() / "cityprior_selfcheck.pspv";
  save_prior(g, tmp.string());
  PriorVoxelGrid g2 = load_prior(tmp.string());
  auto tmp2 = std::filesystem::temp_directory_path() / "cityprior_selfcheck2.pspv";
  save_prior(g2, tmp2.string());

  std::ifstream f1(tmp, std::ios::binary), f2(tmp2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  std::filesystem::remove(tmp);
  std::filesystem::remove(tmp2);
  bool pass = !s1.empty() && s1 == s2 && g2.cells.size() == g.cells.size();
  return {"prior-roundtrip", pass, std::to_string(g.cells.size()) + " cells, byte-stable"};
}

CheckResult check_fusion(uint64_t seed) {
  Rng rng(seed);
  GridSpec spec;
  spec.x_min = -2;
  spec.x_max = 2;
  spec.y_min = -2;
  spec.y_max = 2;
  spec.resolution = 1.0;
  const int C_on = 3, C_prior = 2;
  BEVFeatureGrid online, prior;
  online.spec = prior.spec = spec;
  online.channels = C_on;
  prior.channels = C_prior;
  online.data.resize(static_cast<std::size_t>(spec.rows()) * spec.cols() * C_on);
  prior.data.assign(static_cast<std::size_t>(spec.rows()) * spec.cols() * C_prior, 0.0);
  for (double& v : online.data) v = rng.uniform(-2, 2);

  FusionHead head(C_on, C_prior);
  BEVFeatureGrid out = fuse(online, prior, head);
  double worst = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    worst = std::max(worst, std::abs(out.data[i] - online.data[i]));
  if (worst > 1e-12) return {"fusion-identity", false, "identity init deviates by " + std::to_string(worst)};

  // FD on a few head weights against the analytic backward
  for (double& v : prior.data) v = rng.uniform(-1, 1);
  FusionHead::Workspace ws;
  BEVFeatureGrid base = head.forward(online, prior, ws);
  std::vector<double> d_out(base.data.size());
  for (double& v : d_out) v = rng.uniform(-1, 1);
  FusionHead::Grads g = head.make_grads();
  head.backward(ws, d_out.data(), g, nullptr, nullptr);

  auto readout = [&]() {
    FusionHead::Workspace w2;
    BEVFeatureGrid o = head.forward(online, prior, w2);
    double s = 0.0;
    for (std::size_t i = 0; i < o.data.size(); ++i) s += o.data[i] * d_out[i];
    return s;
  };
  const double h = 1e-5;
  double worst_rel = 0.0;
  Rng pick(Rng::mix(seed, 5));
  for (int probe = 0; probe < 24; ++probe) {
    bool first = probe % 2 == 0;
    auto& w = first ? head.conv1().w : head.conv2().w;
    auto& gw = first ? g.w1 : g.w2;
    std::size_t j = pick.bounded(w.size());
    double saved = w[j];
    w[j] = saved + h;
    double up = readout();
    w[j] = saved - h;
    double down = readout();
    w[j] = saved;
    double fd = (up - down) / (2.0 * h);
    double scale = std::max({std::abs(fd), std::abs(gw[j]), 1e-6});
    worst_rel = std::max(worst_rel, std::abs(fd - gw[j]) / scale);
  }
  return {"fusion-identity", worst_rel < 1e-5, "identity exact, fd rel err " + std::to_string(worst_rel)};
}

CheckResult check_kmeans(uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> pts;
  for (int i = 0; i < 60; ++i)
    pts.emplace_back(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.0);
  for (int i = 0; i < 60; ++i)
    pts.emplace_back(100.0 + rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.0);
  KMeansResult res = kmeans(pts, 2, seed);
  bool near = false;
  for (const Vec3& c : res.centroids) near |= std::abs(c[0]) < 0.2 || std::abs(c[0] - 100.0) < 0.2;
  bool monotone = true;
  for (std::size_t i = 1; i < res.wcss_history.size(); ++i)
    monotone &= res.wcss_history[i] <= res.wcss_history[i - 1] + 1e-9;
  return {"kmeans", near && monotone, "wcss " + std::to_string(res.wcss)};
}

CheckResult check_resample(uint64_t seed) {
  std::vector<double> depths = {0.0, 1.0, 2.0, 3.0};
  std::vector<double> weights = {1.0, 2.0, 3.0, 4.0};
  const int n = 20000;
  Rng rng(seed);
  std::vector<double> draws = resample_from_weights(depths, weights, 4.0, n, true, rng);
  std::vector<int> counts(4, 0);
  for (double d : draws) ++counts[std::min(3, static_cast<int>(d))];
  double total = 10.0;
  for (int i = 0; i < 4; ++i) {
    double p = weights[i] / total;
    double sigma = std::sqrt(n * p * (1 - p));
    if (std::abs(counts[i] - n * p) > 4.0 * sigma)
      return {"resample-histogram", false, "bin " + std::to_string(i) + " off by >4 sigma"};
  }
  return {"resample-histogram", true, "all bins within 4 sigma"};
}

}  // namespace

std::vector<CheckResult> run_selfcheck(uint64_t seed) {
  std::vector<CheckResult> results;
  results.push_back(check_sh(Rng::mix(seed, 1)));
  results.push_back(check_conservation(Rng::mix(seed, 2)));
  results.push_back(check_gradient(Rng::mix(seed, 3)));
  results.push_back(check_voxels(Rng::mix(seed, 4)));
  results.push_back(check_prior_roundtrip(Rng::mix(seed, 5)));
  results.push_back(check_fusion(Rng::mix(seed, 6)));
  results.push_back(check_kmeans(Rng::mix(seed, 7)));
  results.push_back(check_resample(Rng::mix(seed, 8)));
  return results;
}

}  // namespace cityprior
