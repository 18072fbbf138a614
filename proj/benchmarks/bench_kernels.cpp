// Microbenchmarks for the hot kernels, built against the public API only.
// Run with --benchmark_format=csv for machine-readable output; medians come
// from --benchmark_repetitions (>= 10 for reported numbers).

#include <benchmark/benchmark.h>

#include "cityprior/extract.hpp"
#include "cityprior/field.hpp"
#include "cityprior/render.hpp"
#include "cityprior/rng.hpp"
#include "cityprior/selfcheck.hpp"
#include "cityprior/threading.hpp"

using namespace cityprior;

namespace {

HashGrid make_bench_grid() {
  HashGridConfig cfg;
  cfg.num_levels = 8;
  cfg.min_resolution = 16;
  cfg.max_resolution = 512;
  cfg.features_per_level = 2;
  cfg.table_capacity = 1u << 15;
  cfg.bounding_box.min = Vec3(-20, -20, -2);
  cfg.bounding_box.max = Vec3(20, 20, 10);
  Rng rng(1);
  return HashGrid(cfg, rng);
}

std::vector<Vec3> random_points(std::size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) p = Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-2, 10));
  return pts;
}

TileField make_bench_tile() {
  TileFieldConfig cfg;
  cfg.main_grid = HashGridConfig{8, 16, 512, 2, 1u << 15, {}};
  cfg.proposal_grid = HashGridConfig{5, 16, 256, 1, 1u << 12, {}};
  cfg.g_dim = 15;
  cfg.hidden_width = 64;
  cfg.proposal_hidden_width = 32;
  cfg.sh_degree = 4;
  cfg.embedding_dim = 16;
  cfg.feature_dim = 8;
  Aabb box;
  box.min = Vec3(-20, -20, -2);
  box.max = Vec3(20, 20, 10);
  return make_tile_field(cfg, {Vec3(-4, 0, 1), Vec3(4, 0, 1)}, {0, 1}, box, 2);
}

Ray bench_ray(Rng& rng) {
  Ray ray;
  ray.origin = Vec3(rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(0, 4));
  ray.direction = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.3, 0.3)).normalized();
  ray.near = 0.1;
  ray.far = 40.0;
  ray.video_id = 0;
  return ray;
}

void BM_HashEncode(benchmark::State& state) {
  HashGrid grid = make_bench_grid();
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::vector<Vec3> pts = random_points(n, 7);
  std::vector<double> out(n * grid.output_dim());
  for (auto _ : state) {
    grid.encode(pts.data(), static_cast<int>(n), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
  state.counters["points/s"] =
      benchmark::Counter(static_cast<double>(state.iterations() * n), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_HashEncode)->Arg(1 << 14)->Arg(1 << 20)->Unit(benchmark::kMillisecond);

void BM_Composite(benchmark::State& state) {
  TileField tile = make_bench_tile();
  const int rays = static_cast<int>(state.range(0));
  const int samples = 96;
  Rng rng(3);
  std::vector<Ray> batch;
  for (int i = 0; i < rays; ++i) batch.push_back(bench_ray(rng));
  RayRenderer renderer(tile, ProposalConfig{{8, 8}, samples});
  for (auto _ : state) {
    for (const Ray& ray : batch) {
      Rng srng(11);
      auto depths = sample_uniform(0.2, 35.0, samples, false, srng);
      benchmark::DoNotOptimize(renderer.composite_at(ray, depths).final_batch.opacity);
    }
  }
  state.SetItemsProcessed(state.iterations() * rays);
  state.counters["rays/s"] = benchmark::Counter(static_cast<double>(state.iterations() * rays),
                                                benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Composite)->Arg(256)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_CompositeParallel(benchmark::State& state) {
  TileField tile = make_bench_tile();
  const int threads = static_cast<int>(state.range(0));
  const int rays = 2048, samples = 96;
  Rng rng(3);
  std::vector<Ray> batch;
  for (int i = 0; i < rays; ++i) batch.push_back(bench_ray(rng));
  for (auto _ : state) {
    parallel_for(batch.size(), threads, [&](int, std::size_t begin, std::size_t end) {
      RayRenderer renderer(tile, ProposalConfig{{8, 8}, samples});
      Rng srng(11);
      auto depths = sample_uniform(0.2, 35.0, samples, false, srng);
      for (std::size_t i = begin; i < end; ++i)
        benchmark::DoNotOptimize(renderer.composite_at(batch[i], depths).final_batch.opacity);
    });
  }
  state.SetItemsProcessed(state.iterations() * rays);
  state.counters["rays/s"] = benchmark::Counter(static_cast<double>(state.iterations() * rays),
                                                benchmark::Counter::kIsRate);
}
BENCHMARK(BM_CompositeParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_RenderRay(benchmark::State& state) {
  TileField tile = make_bench_tile();
  Rng rng(5);
  std::vector<Ray> batch;
  for (int i = 0; i < 256; ++i) batch.push_back(bench_ray(rng));
  RayRenderer renderer(tile, ProposalConfig{{64, 32}, 32});
  uint64_t seed = 0;
  for (auto _ : state) {
    for (const Ray& ray : batch)
      benchmark::DoNotOptimize(renderer.render(ray, ++seed, true).final_batch.opacity);
  }
  state.SetItemsProcessed(state.iterations() * batch.size());
  state.counters["rays/s"] = benchmark::Counter(
      static_cast<double>(state.iterations() * batch.size()), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_RenderRay)->Unit(benchmark::kMillisecond);

void BM_VoxelScatter(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(9);
  std::vector<SurfacePoint> points(n);
  for (SurfacePoint& sp : points) {
    sp.position = Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-2, 6));
    sp.feature = Eigen::VectorXd::NullaryExpr(8, [&](Eigen::Index) { return rng.uniform(-1, 1); });
  }
  for (auto _ : state) {
    PriorVoxelGrid grid = voxel_downsample(points, 0.2, Vec3::Zero());
    benchmark::DoNotOptimize(grid.cells.size());
  }
  state.SetItemsProcessed(state.iterations() * n);
  state.counters["points/s"] =
      benchmark::Counter(static_cast<double>(state.iterations() * n), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_VoxelScatter)->Arg(1 << 16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
