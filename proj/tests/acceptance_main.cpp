// Acceptance suite: runs every release criterion at its pinned tolerance and
// prints one [PASS]/[FAIL] line per criterion. Returns nonzero if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cityprior/config.hpp"
#include "cityprior/dataset.hpp"
#include "cityprior/extract.hpp"
#include "cityprior/field.hpp"
#include "cityprior/integrate.hpp"
#include "cityprior/losses.hpp"
#include "cityprior/partition.hpp"
#include "cityprior/render.hpp"
#include "cityprior/rng.hpp"
#include "cityprior/selfcheck.hpp"
#include "cityprior/synthetic.hpp"
#include "cityprior/threading.hpp"
#include "cityprior/train.hpp"

#include <nlohmann/json.hpp>

#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace cityprior;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string g_cli_path;

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// criterion 1: full-parameter finite-difference gradient oracle
// ---------------------------------------------------------------------------

struct FrozenRay {
  Ray ray;
  Vec3 target_rgb;
  Eigen::VectorXd target_feature;
  bool is_sky = false;
  std::vector<std::vector<double>> prop_depths;
  std::vector<double> final_depths;
  std::vector<std::vector<double>> frozen_bounds;
};

// O(N^2) overlap bound, written directly from the interval definition.
std::vector<double> bounds_reference(const RaySampleBatch& fin, const RaySampleBatch& prop) {
  auto hi = [](const RaySampleBatch& b, int i) {
    return i + 1 < b.size() ? b.depths[i + 1] : b.t_far;
  };
  std::vector<double> bound(prop.size(), 0.0);
  for (int i = 0; i < prop.size(); ++i)
    for (int j = 0; j < fin.size(); ++j)
      if (fin.depths[j] < hi(prop, i) && hi(fin, j) > prop.depths[i]) bound[i] += fin.weights[j];
  return bound;
}

// The loss replayed at frozen sample depths and frozen interlevel bounds;
// both are stop-gradient boundaries of the training graph, so central
// differences of this function are exactly what the analytic backward
// pass computes.
double frozen_total_loss(RayRenderer& renderer, const std::vector<FrozenRay>& rays,
                         const LossWeights& lw, int feature_dim) {
  const double n = static_cast<double>(rays.size());
  LossBreakdown parts;
  for (const FrozenRay& fr : rays) {
    const RayRenderResult& res = renderer.render_at(fr.ray, fr.prop_depths, fr.final_depths);
    const RaySampleBatch& fb = res.final_batch;
    parts.rgb += (fb.rendered_rgb - fr.target_rgb).squaredNorm() / (3.0 * n);
    parts.feat += (fb.rendered_feature - fr.target_feature).squaredNorm() / (feature_dim * n);
    double o = std::clamp(fb.opacity, kSkyLossClamp, 1.0 - kSkyLossClamp);
    double y = fr.is_sky ? 0.0 : 1.0;
    parts.sky += -(y * std::log(o) + (1.0 - y) * std::log(1.0 - o)) / n;
    for (std::size_t p = 0; p < res.proposal_batches.size(); ++p) {
      const RaySampleBatch& pb = res.proposal_batches[p];
      for (int i = 0; i < pb.size(); ++i) {
        double shortfall = std::max(0.0, fr.frozen_bounds[p][i] - pb.weights[i]);
        parts.inter += shortfall * shortfall / (pb.weights[i] + kInterlevelEps) / n;
      }
    }
    parts.dist += distortion_loss(fb) / n;
  }
  return parts.total(lw);
}

Outcome criterion_gradient_oracle() {
  const uint64_t seed = 404;
  TileField tile = make_tiny_tile(4, seed);  // 2 hash levels, 16-entry tables, D=4
  RayRenderer renderer(tile, ProposalConfig{{8, 8}, 8});
  LossWeights lw;

  Rng rng(Rng::mix(seed, 1));
  std::vector<FrozenRay> rays;
  for (int r = 0; r < 4; ++r) {
    FrozenRay fr;
    fr.ray.origin = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    fr.ray.direction =
        Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized();
    fr.ray.near = 0.1;
    fr.ray.far = 6.0;
    fr.ray.video_id = r % 2;
    fr.target_rgb = Vec3(rng.next_double(), rng.next_double(), rng.next_double());
    fr.target_feature =
        Eigen::VectorXd::NullaryExpr(4, [&](Eigen::Index) { return rng.uniform(-1, 1); });
    fr.is_sky = r == 3;
    const RayRenderResult& res = renderer.render(fr.ray, Rng::mix(seed, 50 + r), true);
    for (const auto& pb : res.proposal_batches) {
      fr.prop_depths.push_back(pb.depths);
      fr.frozen_bounds.push_back(bounds_reference(res.final_batch, pb));
    }
    fr.final_depths = res.final_batch.depths;
    rays.push_back(std::move(fr));
  }

  // analytic gradients via the training backward path
  TileGrads grads = TileGrads::zeros_like(tile);
  const double n = static_cast<double>(rays.size());
  for (const FrozenRay& fr : rays) {
    const RayRenderResult& res = renderer.render_at(fr.ray, fr.prop_depths, fr.final_depths);
    const RaySampleBatch& fb = res.final_batch;
    RayBackwardInput gin;
    gin.d_rgb = (2.0 / (3.0 * n)) * (fb.rendered_rgb - fr.target_rgb);
    gin.d_feature = (lw.feat * 2.0 / (4.0 * n)) * (fb.rendered_feature - fr.target_feature);
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
  double worst_rel = 0.0, worst_abs = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  auto started = std::chrono::steady_clock::now();
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t j = 0; j < params[b].size; ++j) {
      double saved = params[b].data[j];
      params[b].data[j] = saved + h;
      double up = frozen_total_loss(renderer, rays, lw, 4);
      params[b].data[j] = saved - h;
      double down = frozen_total_loss(renderer, rays, lw, 4);
      params[b].data[j] = saved;
      double fd = (up - down) / (2.0 * h);
      double an = grad_blocks[b].data[j];
      ++checked;
      double scale = std::max(std::abs(fd), std::abs(an));
      if (scale < 1e-6) {
        if (std::abs(fd - an) > worst_abs) worst_abs = std::abs(fd - an);
        continue;
      }
      double rel = std::abs(fd - an) / scale;
      if (rel > worst_rel) {
        worst_rel = rel;
        worst_name = params[b].name + "[" + std::to_string(j) + "]";
      }
    }
  }
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  Outcome out;
  out.pass = worst_rel < 1e-3 && worst_abs < 1e-8 && seconds < 60.0;
  std::ostringstream ss;
  ss << checked << " parameters over 7 classes, worst rel " << worst_rel << " (at "
     << (worst_name.empty() ? "-" : worst_name) << "), worst near-zero abs " << worst_abs
     << ", " << seconds << " s";
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 2: compositing conservation on 1e4 random rays
// ---------------------------------------------------------------------------

Outcome criterion_conservation() {
  Rng rng(777);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    int n = 2 + static_cast<int>(rng.bounded(62));
    RaySampleBatch b;
    b.depths.assign(n, 0.0);
    b.densities.resize(n);
    b.deltas.resize(n);
    for (int i = 0; i < n; ++i) {
      b.densities[i] = rng.uniform(0.0, 20.0);
      b.deltas[i] = rng.uniform(1e-5, 3.0);
    }
    composite_weights(b);
    double residual = 1.0;
    for (double a : b.alphas) residual *= 1.0 - a;
    worst = std::max(worst, std::abs(b.opacity + residual - 1.0));
  }
  Outcome out;
  out.pass = worst <= 1e-6;
  out.detail = "max |sum T a + prod(1-a) - 1| = " + std::to_string(worst) + " over 10^4 rays";
  return out;
}

// ---------------------------------------------------------------------------
// criterion 3: constant-density transmittance against the closed form
// ---------------------------------------------------------------------------

Outcome criterion_analytic_transmittance() {
  Rng rng(778);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    double sigma = rng.uniform(0.01, 4.0);
    double length = rng.uniform(0.1, 10.0);
    int n = 2 + static_cast<int>(rng.bounded(100));
    RaySampleBatch b;
    b.depths.assign(n, 0.0);
    b.densities.assign(n, sigma);
    b.deltas.assign(n, length / n);  // segment boundaries aligned with samples
    composite_weights(b);
    worst = std::max(worst, std::abs(b.opacity - (1.0 - std::exp(-sigma * length))));
  }
  Outcome out;
  out.pass = worst <= 1e-6;
  out.detail = "max |O - (1 - exp(-sigma L))| = " + std::to_string(worst);
  return out;
}

// ---------------------------------------------------------------------------
// criterion 4: synthetic-scene reconstruction quality at desk scale
// ---------------------------------------------------------------------------

Outcome criterion_reconstruction() {
  auto [manifest, oracle] = make_synthetic_scene(textured_box_scene(8, 20, 96));

  PipelineConfig cfg = make_pipeline_config("desk", manifest.feature_dim);
  TilePlan plan = plan_tiles(manifest, 1, 2, 11);
  std::vector<int> vids;
  for (const CameraFrame& f : manifest.frames) vids.push_back(f.video_id);
  TileField tile =
      make_tile_field(cfg.field, plan.subfield_centroids[0], vids, scene_box(manifest), 11);

  TrainConfig train_cfg = cfg.train;
  train_cfg.iterations = 1500;  // frozen after calibration on this scene
  train_cfg.batch_size = 1024;
  train_cfg.seed = 11;
  train_cfg.threads = hardware_threads();
  auto started = std::chrono::steady_clock::now();
  TrainMetrics metrics = train_tile(tile, manifest, train_cfg);
  double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() / 60.0;

  // the 100-step moving average of the total loss must trend down
  auto moving_avg = [&](int center) {
    double s = 0.0;
    int lo = std::max(0, center - 99);
    for (int i = lo; i <= center; ++i) s += metrics.total_per_step[i];
    return s / (center - lo + 1);
  };
  int last = static_cast<int>(metrics.total_per_step.size()) - 1;
  bool trend = moving_avg(last) < moving_avg(std::min(199, last));

  Outcome out;
  out.pass = metrics.final_psnr >= 25.0 && metrics.final_feat_mse <= 0.01 && minutes <= 30.0 && trend;
  std::ostringstream ss;
  ss << "PSNR " << metrics.final_psnr << " dB (need >= 25), feature MSE " << metrics.final_feat_mse
     << " (need <= 0.01), " << minutes << " min (need <= 30), loss trend "
     << (trend ? "down" : "flat");
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 5: surface extraction accuracy on the opaque-plane scene
// ---------------------------------------------------------------------------

Outcome criterion_surface_extraction() {
  auto [manifest, oracle] = make_synthetic_scene(opaque_plane_scene(5.0, 12, 64));
  PipelineConfig cfg = make_pipeline_config("desk", manifest.feature_dim);
  std::vector<int> vids;
  for (const CameraFrame& f : manifest.frames) vids.push_back(f.video_id);
  TilePlan plan = plan_tiles(manifest, 1, 1, 21);
  TileField tile =
      make_tile_field(cfg.field, plan.subfield_centroids[0], vids, scene_box(manifest), 21);

  TrainConfig train_cfg = cfg.train;
  train_cfg.iterations = 600;
  train_cfg.batch_size = 512;
  train_cfg.seed = 21;
  train_cfg.threads = hardware_threads();
  train_tile(tile, manifest, train_cfg);

  std::vector<const CameraFrame*> frames;
  for (const CameraFrame& f : manifest.frames) frames.push_back(&f);
  std::vector<SurfacePoint> points =
      extract_tile(tile, frames, 7, train_cfg.proposal, hardware_threads());

  // tolerance: one final-stage sample spacing of the ray's clipped span
  std::size_t good = 0;
  const std::size_t total = points.size();
  const Aabb box = scene_box(manifest);
  for (const SurfacePoint& sp : points) {
    // per-point spacing bound: clipped span of a vertical ray / final count
    double t0 = manifest.near, t1 = manifest.far;
    Vec3 origin(sp.position[0], sp.position[1], 5.0);
    box.clip_ray(origin, Vec3(0, 0, -1), t0, t1);
    double spacing = (t1 - t0) / cfg.train.proposal.final_samples;
    if (std::abs(sp.position[2]) <= spacing) ++good;
  }
  double frac = total ? static_cast<double>(good) / total : 0.0;

  // trained sky rays must not produce surface points
  int sky_hits = 0;
  for (int i = 0; i < 64; ++i) {
    Ray up;
    up.origin = Vec3(-3.0 + 0.1 * i, 0.5, 5.0);
    up.direction = Vec3(0.05, 0.02, 1.0).normalized();
    up.near = 0.1;
    up.far = manifest.far;
    up.video_id = 0;
    if (extract_surface(tile, up, train_cfg.proposal)) ++sky_hits;
  }

  Outcome out;
  out.pass = frac >= 0.95 && sky_hits == 0 && total > 1000;
  std::ostringstream ss;
  ss << 100.0 * frac << "% of " << total
     << " points within one final-sample spacing of the plane (need >= 95%), sky rays with "
        "points: "
     << sky_hits << " (need 0)";
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 6: voxel mean and merge identities
// ---------------------------------------------------------------------------

Outcome criterion_voxel_oracle() {
  Rng rng(606);
  std::vector<SurfacePoint> a(6000), b(4000);
  auto dyadic = [&]() { return std::floor(rng.uniform(-512, 512)) / 256.0; };
  for (auto* list : {&a, &b})
    for (SurfacePoint& sp : *list) {
      sp.position = Vec3(rng.uniform(-7, 7), rng.uniform(-7, 7), rng.uniform(-2, 4));
      sp.feature = Eigen::VectorXd::NullaryExpr(6, [&](Eigen::Index) { return dyadic(); });
    }
  std::vector<SurfacePoint> both = a;
  both.insert(both.end(), b.begin(), b.end());
  const Vec3 origin(-7, -7, -2);
  const double vs = 0.45;

  PriorVoxelGrid gu = voxel_downsample(both, vs, origin);

  // brute-force group-by mean (input order accumulation)
  std::map<PriorVoxelGrid::CellKey, std::pair<Eigen::VectorXd, double>> reference;
  for (const SurfacePoint& sp : both) {
    auto key = gu.key_of(sp.position);
    auto it = reference.find(key);
    if (it == reference.end())
      reference[key] = {sp.feature, 1.0};
    else {
      it->second.first += sp.feature;
      it->second.second += 1.0;
    }
  }
  bool mean_exact = reference.size() == gu.cells.size();
  for (const auto& [key, cell] : gu.cells) {
    auto it = reference.find(key);
    if (it == reference.end() || it->second.second != cell.weight ||
        Eigen::VectorXd(it->second.first / it->second.second) != cell.mean()) {
      mean_exact = false;
      break;
    }
  }

  PriorVoxelGrid gm = merge_priors(voxel_downsample(a, vs, origin), voxel_downsample(b, vs, origin));
  bool merge_exact = gm.cells.size() == gu.cells.size();
  for (const auto& [key, cell] : gu.cells) {
    auto it = gm.cells.find(key);
    if (it == gm.cells.end() || it->second.weight != cell.weight ||
        it->second.feature_sum != cell.feature_sum || it->second.mean() != cell.mean()) {
      merge_exact = false;
      break;
    }
  }

  Outcome out;
  out.pass = mean_exact && merge_exact;
  out.detail = std::to_string(gu.cells.size()) + " cells from 10^4 points; group-by mean " +
               (mean_exact ? "exact" : "MISMATCH") + ", A-union-B merge " +
               (merge_exact ? "exact" : "MISMATCH");
  return out;
}

// ---------------------------------------------------------------------------
// criterion 7: sub-field reduction and assignment
// ---------------------------------------------------------------------------

Outcome criterion_subfield_equivalence() {
  // (a) one sub-field: the grouped path must equal the direct path bitwise
  TileField one = make_tiny_tile(6, 700, 1);
  Ray ray;
  ray.origin = Vec3(0.2, -0.4, -3.5);
  ray.direction = Vec3(0.05, 0.1, 1.0).normalized();
  ray.near = 0.1;
  ray.far = 7.0;
  ray.video_id = 0;

  bool bitwise = true;
  Rng rng(701);
  for (int trial = 0; trial < 20 && bitwise; ++trial) {
    auto depths = sample_uniform(ray.near, ray.far, 24, true, rng);
    RaySampleBatch batch = composite(one, ray, depths);

    std::vector<double> sh(one.sh_dim());
    sh_encode(ray.direction, one.config.sh_degree, sh.data());
    std::vector<Vec3> xs;
    for (double t : depths) xs.push_back(ray.origin + t * ray.direction);
    SubFieldEval eval;
    eval.forward(one.subfields[0], one, xs.data(), static_cast<int>(xs.size()), sh.data(),
                 ray.video_id);
    SkyEval sky;
    sky.forward(one, sh.data(), ray.video_id);

    double T = 1.0, opacity = 0.0;
    Vec3 rgb = Vec3::Zero();
    const int n = static_cast<int>(depths.size());
    for (int i = 0; i < n; ++i) {
      double delta = (i + 1 < n ? depths[i + 1] : ray.far) - depths[i];
      double alpha = -std::expm1(-eval.density()[i] * delta);
      double w = T * alpha;
      for (int c = 0; c < 3; ++c) rgb[c] += w * eval.color()[i * 3 + c];
      opacity += w;
      T *= 1.0 - alpha;
    }
    Vec3 reference = rgb + (1.0 - opacity) * sky.color();
    bitwise &= reference == batch.rendered_rgb && opacity == batch.opacity;
  }

  // (b) k sub-fields: every sample assignment equals the exhaustive scan
  TileField many = make_tiny_tile(6, 702, 5);
  Rng crng(703);
  std::vector<Vec3> centroids;
  for (SubField& sf : many.subfields) {
    sf.centroid = Vec3(crng.uniform(-3, 3), crng.uniform(-3, 3), crng.uniform(-3, 3));
    centroids.push_back(sf.centroid);
  }
  std::size_t checked = 0;
  bool assignment_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    Ray rr;
    rr.origin = Vec3(crng.uniform(-2, 2), crng.uniform(-2, 2), crng.uniform(-2, 2));
    rr.direction = Vec3(crng.uniform(-1, 1), crng.uniform(-1, 1), crng.uniform(-1, 1));
    if (rr.direction.norm() < 1e-6) continue;
    rr.direction.normalize();
    rr.near = 0.1;
    rr.far = 6.0;
    rr.video_id = 0;
    RayRenderResult res = render_ray(many, rr, ProposalConfig{{8, 8}, 8}, trial);
    for (int i = 0; i < res.final_batch.size(); ++i) {
      Vec3 x = rr.origin + res.final_batch.depths[i] * rr.direction;
      assignment_ok &= res.final_batch.subfield[i] == oracles::nearest_reference(centroids, x);
      ++checked;
    }
  }

  Outcome out;
  out.pass = bitwise && assignment_ok && checked > 500;
  std::ostringstream ss;
  ss << "single-field reduction " << (bitwise ? "bit-identical" : "DIFFERS") << "; " << checked
     << " sample assignments " << (assignment_ok ? "match" : "MISMATCH")
     << " the exhaustive scan";
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 8: loss-formula oracles and emitted default weights
// ---------------------------------------------------------------------------

Outcome criterion_loss_oracles() {
  Rng rng(808);
  double worst_inter = 0.0, worst_dist = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    auto make_sorted = [&](int n, double far) {
      std::vector<double> d(n);
      for (double& v : d) v = rng.uniform(0.0, far * 0.95);
      std::sort(d.begin(), d.end());
      return d;
    };
    const double far = 12.0;
    RaySampleBatch fin, prop;
    fin.depths = make_sorted(2 + rng.bounded(40), far);
    prop.depths = make_sorted(2 + rng.bounded(24), far);
    fin.t_near = prop.t_near = 0.0;
    fin.t_far = prop.t_far = far;
    fin.weights.resize(fin.depths.size());
    prop.weights.resize(prop.depths.size());
    for (double& w : fin.weights) w = rng.next_double() * 0.08;
    for (double& w : prop.weights) w = rng.next_double() * 0.08;

    worst_inter = std::max(worst_inter,
                           std::abs(interlevel_loss(fin, {prop}) -
                                    oracles::interlevel_reference(fin, prop, kInterlevelEps)));
    worst_dist =
        std::max(worst_dist, std::abs(distortion_loss(fin) - oracles::distortion_reference(fin)));
  }

  // the emitted config carries the default loss weights
  PipelineConfig cfg = make_pipeline_config("desk", 64);
  auto doc = nlohmann::json::parse(pipeline_config_json(cfg));
  const auto& w = doc.at("train").at("loss_weights");
  bool weights_ok = w.at("feat").get<double>() == 0.5 && w.at("sky").get<double>() == 0.001 &&
                    w.at("inter").get<double>() == 1.0 && w.at("dist").get<double>() == 0.002;

  Outcome out;
  out.pass = worst_inter <= 1e-6 && worst_dist <= 1e-6 && weights_ok;
  std::ostringstream ss;
  ss << "vs O(N^2): interlevel dev " << worst_inter << ", distortion dev " << worst_dist
     << "; emitted weights (0.5, 0.001, 1.0, 0.002): " << (weights_ok ? "yes" : "NO");
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 9: pipeline determinism and file round trips (via the CLI)
// ---------------------------------------------------------------------------

Outcome criterion_determinism() {
  Outcome out;
  if (g_cli_path.empty()) {
    out.pass = false;
    out.detail = "CLI path not supplied (--cli)";
    return out;
  }
  fs::path scratch = fs::temp_directory_path() / "cityprior_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  auto run = [&](const std::string& args) {
    std::string cmd = g_cli_path + " " + args + " >> " + (scratch / "log.txt").string() + " 2>&1";
    return std::system(cmd.c_str()) == 0;
  };

  bool ok = true;
  std::string scene = (scratch / "scene").string();
  ok &= run("synth --scene box --out " + scene + " --cameras 6 --size 48 --feature-dim 4");
  for (int pass = 0; pass < 2 && ok; ++pass) {
    fs::path dir = scratch / ("run" + std::to_string(pass));
    fs::create_directories(dir);
    std::string plan = (dir / "plan.json").string();
    std::string ckpt = (dir / "ckpt").string();
    std::string prior = (dir / "prior.pspv").string();
    std::string bev = (dir / "bev.fmap").string();
    ok &= run("partition --manifest " + scene + "/manifest.json --num-tiles 1 --subfields 2 "
              "--seed 9 --out " + plan);
    ok &= run("train --manifest " + scene + "/manifest.json --plan " + plan +
              " --tile 0 --iterations 10 --batch-size 128 --threads 1 --seed 9 "
              "--checkpoint-dir " + ckpt);
    ok &= run("extract --checkpoint " + ckpt + "/tile_final.ckpt --manifest " + scene +
              "/manifest.json --plan " + plan + " --tile 0 --stride 5 --voxel-size 0.3 --out " +
              prior);
    ok &= run("rasterize --prior " + prior + " --ego 0,0,0,0 --range 24x24x8 --resolution 0.5 "
              "--height-bins 2 --out " + bev);
  }
  if (!ok) {
    out.pass = false;
    out.detail = "a pipeline stage exited nonzero; see " + (scratch / "log.txt").string();
    return out;
  }

  auto same = [&](const char* name) {
    std::string a = slurp((scratch / "run0" / name).string());
    std::string b = slurp((scratch / "run1" / name).string());
    return !a.empty() && a == b;
  };
  bool prior_same = same("prior.pspv");
  bool bev_same = same("bev.fmap");
  std::string ckpt0 = (scratch / "run0" / "ckpt" / "tile_final.ckpt").string();
  bool ckpt_same = slurp(ckpt0) == slurp((scratch / "run1" / "ckpt" / "tile_final.ckpt").string());

  // bit-exact round trips through load/save
  PriorVoxelGrid grid = load_prior((scratch / "run0" / "prior.pspv").string());
  save_prior(grid, (scratch / "prior_resaved.pspv").string());
  bool prior_rt = slurp((scratch / "run0" / "prior.pspv").string()) ==
                  slurp((scratch / "prior_resaved.pspv").string());
  TileField tile = load_tile_field(ckpt0);
  save_tile_field(tile, (scratch / "ckpt_resaved.ckpt").string());
  bool ckpt_rt = slurp(ckpt0) == slurp((scratch / "ckpt_resaved.ckpt").string());

  out.pass = prior_same && bev_same && ckpt_same && prior_rt && ckpt_rt;
  std::ostringstream ss;
  ss << "two seeded runs byte-identical: prior " << (prior_same ? "yes" : "NO") << ", bev "
     << (bev_same ? "yes" : "NO") << ", checkpoint " << (ckpt_same ? "yes" : "NO")
     << "; round trips bit-exact: prior " << (prior_rt ? "yes" : "NO") << ", checkpoint "
     << (ckpt_rt ? "yes" : "NO");
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 10: fusion identity and head gradients
// ---------------------------------------------------------------------------

Outcome criterion_fusion() {
  Rng rng(1010);
  GridSpec spec;
  spec.x_min = -8;
  spec.x_max = 8;
  spec.y_min = -4;
  spec.y_max = 4;
  spec.resolution = 1.0;
  const int C_on = 5, C_prior = 3;

  BEVFeatureGrid online, prior;
  online.spec = prior.spec = spec;
  online.channels = C_on;
  prior.channels = C_prior;
  online.data.resize(static_cast<std::size_t>(spec.rows()) * spec.cols() * C_on);
  prior.data.assign(static_cast<std::size_t>(spec.rows()) * spec.cols() * C_prior, 0.0);
  for (double& v : online.data) v = rng.uniform(-3, 3);

  FusionHead head(C_on, C_prior);
  BEVFeatureGrid fused = fuse(online, prior, head);
  double identity_dev = 0.0;
  for (std::size_t i = 0; i < fused.data.size(); ++i)
    identity_dev = std::max(identity_dev, std::abs(fused.data[i] - online.data[i]));

  // gradient probe on a perturbed head against central differences
  for (double& v : prior.data) v = rng.uniform(-1, 1);
  for (double& w : head.conv1().w) w += rng.uniform(-0.1, 0.1);
  for (double& w : head.conv2().w) w += rng.uniform(-0.1, 0.1);
  std::vector<double> d_out(fused.data.size());
  for (double& v : d_out) v = rng.uniform(-1, 1);

  FusionHead::Workspace ws;
  head.forward(online, prior, ws);
  FusionHead::Grads g = head.make_grads();
  head.backward(ws, d_out.data(), g, nullptr, nullptr);

  auto readout = [&]() {
    FusionHead::Workspace w2;
    BEVFeatureGrid o = head.forward(online, prior, w2);
    double s = 0.0;
    for (std::size_t i = 0; i < o.data.size(); ++i) s += o.data[i] * d_out[i];
    return s;
  };
  double worst_rel = 0.0;
  const double h = 1e-6;
  Rng pick(1011);
  for (int probe = 0; probe < 60; ++probe) {
    double* slot;
    double analytic;
    switch (probe % 4) {
      case 0: {
        std::size_t j = pick.bounded(head.conv1().w.size());
        slot = &head.conv1().w[j];
        analytic = g.w1[j];
        break;
      }
      case 1: {
        std::size_t j = pick.bounded(head.conv2().w.size());
        slot = &head.conv2().w[j];
        analytic = g.w2[j];
        break;
      }
      case 2: {
        std::size_t j = pick.bounded(head.conv1().b.size());
        slot = &head.conv1().b[j];
        analytic = g.b1[j];
        break;
      }
      default: {
        std::size_t j = pick.bounded(head.conv2().b.size());
        slot = &head.conv2().b[j];
        analytic = g.b2[j];
        break;
      }
    }
    double saved = *slot;
    *slot = saved + h;
    double up = readout();
    *slot = saved - h;
    double down = readout();
    *slot = saved;
    double fd = (up - down) / (2 * h);
    double scale = std::max({std::abs(fd), std::abs(analytic), 1e-8});
    worst_rel = std::max(worst_rel, std::abs(fd - analytic) / scale);
  }

  Outcome out;
  out.pass = identity_dev <= 1e-6 && worst_rel < 1e-4;
  std::ostringstream ss;
  ss << "identity deviation " << identity_dev << " (need <= 1e-6), head-gradient FD rel err "
     << worst_rel;
  out.detail = ss.str();
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--cli") g_cli_path = argv[i + 1];

  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  std::vector<Entry> criteria = {
      {1, "gradient oracle (finite differences, every parameter class)", criterion_gradient_oracle},
      {2, "compositing conservation", criterion_conservation},
      {3, "analytic transmittance", criterion_analytic_transmittance},
      {4, "synthetic reconstruction", criterion_reconstruction},
      {5, "surface-extraction accuracy", criterion_surface_extraction},
      {6, "voxel-mean oracle", criterion_voxel_oracle},
      {7, "sub-field equivalence", criterion_subfield_equivalence},
      {8, "loss-formula oracles", criterion_loss_oracles},
      {9, "determinism and round-trips", criterion_determinism},
      {10, "fusion identity", criterion_fusion},
  };

  bool all = true;
  for (const Entry& e : criteria) {
    auto started = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = e.fn();
    } catch (const std::exception& ex) {
      out.pass = false;
      out.detail = std::string("exception: ") + ex.what();
    }
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::printf("[%s] criterion %d: %s - %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", e.id, e.name,
                out.detail.c_str(), seconds);
    std::fflush(stdout);
    all &= out.pass;
  }
  return all ? 0 : 1;
}
