#include <doctest.h>

#include <fstream>

#include "cityprior/errors.hpp"
#include "cityprior/field.hpp"
#include "cityprior/selfcheck.hpp"
#include "cityprior/sh.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace cityprior;

namespace {

HashGridConfig small_grid_config() {
  HashGridConfig cfg;
  cfg.num_levels = 3;
  cfg.min_resolution = 2;
  cfg.max_resolution = 8;
  cfg.features_per_level = 2;
  cfg.table_capacity = 1u << 10;  // all three levels fit densely
  cfg.bounding_box.min = Vec3(-1, -1, -1);
  cfg.bounding_box.max = Vec3(1, 1, 1);
  return cfg;
}

}  // namespace

TEST_CASE("hash grid: lattice corner returns that corner's entry") {
  Rng rng(4);
  HashGrid grid(small_grid_config(), rng);
  const int level = 1;
  const int res = grid.level_resolution(level);
  REQUIRE(grid.level_is_dense(level));

  // corner (2, 1, 3) of the level lattice
  const Aabb& box = grid.config().bounding_box;
  Vec3 x = box.min + (box.max - box.min).cwiseProduct(Vec3(2.0 / res, 1.0 / res, 3.0 / res));
  std::vector<double> out(grid.output_dim());
  grid.encode(&x, 1, out.data());

  const int stride = res + 1;
  std::size_t slot = 2 + static_cast<std::size_t>(stride) * (1 + static_cast<std::size_t>(stride) * 3);
  const int F = grid.config().features_per_level;
  for (int f = 0; f < F; ++f)
    CHECK(out[level * F + f] == doctest::Approx(grid.tables()[level][slot * F + f]).epsilon(1e-12));
}

TEST_CASE("hash grid: cell center is the mean of its 8 corners") {
  Rng rng(5);
  HashGrid grid(small_grid_config(), rng);
  const int level = 0;
  const int res = grid.level_resolution(level);
  const Aabb& box = grid.config().bounding_box;
  Vec3 x = box.min + (box.max - box.min).cwiseProduct(Vec3(0.5 / res, 0.5 / res, 0.5 / res));
  std::vector<double> out(grid.output_dim());
  grid.encode(&x, 1, out.data());

  const int F = grid.config().features_per_level;
  const int stride = res + 1;
  for (int f = 0; f < F; ++f) {
    double mean = 0.0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          std::size_t slot = (dx) + static_cast<std::size_t>(stride) * ((dy) +
                             static_cast<std::size_t>(stride) * (dz));
          mean += grid.tables()[level][slot * F + f];
        }
    mean /= 8.0;
    CHECK(out[level * F + f] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("hash grid: dense level matches the dense trilinear oracle on random points") {
  Rng rng(6);
  HashGrid grid(small_grid_config(), rng);
  const int F = grid.config().features_per_level;
  std::vector<double> out(grid.output_dim()), expect(F);
  for (int trial = 0; trial < 300; ++trial) {
    Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    grid.encode(&x, 1, out.data());
    for (int level = 0; level < grid.config().num_levels; ++level) {
      REQUIRE(grid.level_is_dense(level));
      oracles::dense_trilinear(grid.tables()[level], grid.level_resolution(level), F,
                               grid.config().bounding_box, x, expect.data());
      for (int f = 0; f < F; ++f)
        CHECK(out[level * F + f] == doctest::Approx(expect[f]).epsilon(1e-12));
    }
  }
}

TEST_CASE("hash grid: identical config and seed give identical tables") {
  Rng r1(99), r2(99);
  HashGrid a(small_grid_config(), r1), b(small_grid_config(), r2);
  for (int l = 0; l < a.config().num_levels; ++l) CHECK(a.tables()[l] == b.tables()[l]);
}

TEST_CASE("hash grid: hashed level uses the capacity and stays in range") {
  HashGridConfig cfg = small_grid_config();
  cfg.table_capacity = 8;  // force collisions everywhere
  Rng rng(7);
  HashGrid grid(cfg, rng);
  for (int l = 0; l < cfg.num_levels; ++l) {
    if (!grid.level_is_dense(l)) CHECK(grid.level_table_size(l) == 8);
  }
  std::vector<double> out(grid.output_dim());
  Vec3 x(0.3, -0.2, 0.9);
  grid.encode(&x, 1, out.data());  // must not touch out-of-range slots
  for (double v : out) CHECK(std::isfinite(v));
}

TEST_CASE("sh_encode: degree-1 constant band") {
  double out[16];
  sh_encode(Vec3(0.26726, 0.53452, 0.80178), 1, out);
  CHECK(out[0] == doctest::Approx(0.28209479177).epsilon(1e-9));
}

TEST_CASE("sh_encode: +z direction kills the x/y bands") {
  double out[16];
  sh_encode(Vec3(0, 0, 1), 2, out);
  CHECK(out[1] == 0.0);  // y component
  CHECK(out[3] == 0.0);  // x component
  CHECK(out[2] != 0.0);
}

TEST_CASE("sh_encode: addition theorem at degree 4") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    Vec3 d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (d.norm() < 1e-3) continue;
    d.normalize();
    double out[16];
    sh_encode(d, 4, out);
    double sum = 0;
    for (int i = 0; i < 16; ++i) sum += out[i] * out[i];
    CHECK(sum == doctest::Approx(16.0 / (4.0 * M_PI)).epsilon(1e-10));
  }
  double out[16];
  CHECK_THROWS_AS(sh_encode(Vec3(0, 0, 1), 5, out), DataError);
}

TEST_CASE("query_subfield: zero-initialized heads give mid-gray and zero features") {
  TileField tile = make_tiny_tile(4, 21);
  for (SubField& sf : tile.subfields) {
    for (auto& l : sf.color_head.layers()) {
      std::fill(l.w.begin(), l.w.end(), 0.0);
      std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    for (auto& l : sf.feature_head.layers()) {
      std::fill(l.w.begin(), l.w.end(), 0.0);
      std::fill(l.b.begin(), l.b.end(), 0.0);
    }
  }
  FieldSample s = query_subfield(tile, 0, Vec3(0.2, -0.3, 0.4), Vec3(0, 0, 1), 0);
  CHECK(s.color == Vec3(0.5, 0.5, 0.5));
  CHECK(s.feature.isZero(0.0));
  CHECK(s.density >= 0.0);
}

TEST_CASE("query_subfield: feature is direction- and video-invariant, color may differ") {
  TileField tile = make_tiny_tile(4, 22);
  // make embeddings distinct so the color head can actually see the video id
  Rng rng(5);
  for (double& v : tile.video_embeddings) v = rng.uniform(-1, 1);

  Vec3 x(0.4, 0.1, -0.7);
  Vec3 d1 = Vec3(1, 2, 3).normalized(), d2 = Vec3(-2, 0.5, 1).normalized();
  FieldSample a = query_subfield(tile, 0, x, d1, 0);
  FieldSample b = query_subfield(tile, 0, x, d2, 0);
  CHECK(a.feature == b.feature);  // bit-for-bit
  CHECK(a.density == b.density);

  FieldSample c = query_subfield(tile, 0, x, d1, 1);
  CHECK(a.feature == c.feature);
  CHECK(a.density == c.density);
  CHECK(a.color != c.color);  // video embedding feeds only the color head

  CHECK_THROWS_AS(query_subfield(tile, 0, x, d1, 77), DataError);
  CHECK_THROWS_AS(query_subfield(tile, 9, x, d1, 0), DataError);
}

TEST_CASE("query_subfield: density stays non-negative over random queries") {
  TileField tile = make_tiny_tile(4, 23);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Vec3 x(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4));
    Vec3 d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (d.norm() < 1e-6) continue;
    FieldSample s = query_subfield(tile, 0, x, d.normalized(), 0);
    CHECK(s.density >= 0.0);
    for (int c = 0; c < 3; ++c) {
      CHECK(s.color[c] >= 0.0);
      CHECK(s.color[c] <= 1.0);
    }
  }
}

TEST_CASE("query_sky: pure in (direction, video) and matches a straight-line MLP oracle") {
  TileField tile = make_tiny_tile(4, 24);
  Rng rng(9);
  for (double& v : tile.video_embeddings) v = rng.uniform(-1, 1);

  Vec3 d = Vec3(0.3, -0.4, 0.85).normalized();
  auto [c1, f1] = query_sky(tile, d, 1);
  auto [c2, f2] = query_sky(tile, d, 1);
  CHECK(c1 == c2);
  CHECK(f1 == f2);

  // independent forward pass over the sky weights
  const int sh_d = tile.sh_dim();
  std::vector<int> widths = {sh_d + tile.config.embedding_dim, tile.config.hidden_width,
                             tile.config.hidden_width, 3 + tile.config.feature_dim};
  std::vector<std::vector<double>> ws, bs;
  for (const auto& l : tile.sky.layers()) {
    ws.push_back(l.w);
    bs.push_back(l.b);
  }
  for (int trial = 0; trial < 20; ++trial) {
    Vec3 dir(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (dir.norm() < 1e-3) continue;
    dir.normalize();
    int vid = trial % 2;
    std::vector<double> input(sh_d + tile.config.embedding_dim);
    sh_encode(dir, tile.config.sh_degree, input.data());
    const double* emb = tile.embedding(vid);
    for (int k = 0; k < tile.config.embedding_dim; ++k) input[sh_d + k] = emb[k];
    std::vector<double> expect = oracles::mlp_reference(ws, bs, widths, input);

    auto [c, f] = query_sky(tile, dir, vid);
    for (int ch = 0; ch < 3; ++ch)
      CHECK(c[ch] == doctest::Approx(1.0 / (1.0 + std::exp(-expect[ch]))).epsilon(1e-12));
    for (int k = 0; k < tile.config.feature_dim; ++k)
      CHECK(f[k] == doctest::Approx(expect[3 + k]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(query_sky(tile, d, 42), DataError);
}

TEST_CASE("gradients: zero upstream gradient leaves every parameter gradient zero") {
  TileField tile = make_tiny_tile(4, 25);
  TileGrads grads = TileGrads::zeros_like(tile);
  SubFieldEval eval;
  std::vector<double> sh(tile.sh_dim());
  sh_encode(Vec3(0, 0, 1), tile.config.sh_degree, sh.data());
  Vec3 xs[2] = {Vec3(0.1, 0.2, 0.3), Vec3(-0.5, 0.4, 0.0)};
  eval.forward(tile.subfields[0], tile, xs, 2, sh.data(), 0);
  std::vector<double> zero_d(2, 0.0), zero_c(6, 0.0), zero_f(8, 0.0);
  eval.backward(tile.subfields[0], tile, zero_d.data(), zero_c.data(), zero_f.data(),
                grads.subfields[0], grads.video_embeddings.data());

  auto blocks = collect_grad_blocks(grads, tile);
  for (const NamedBlock& b : blocks)
    for (std::size_t j = 0; j < b.size; ++j) CHECK(b.data[j] == 0.0);
}

TEST_CASE("gradients: the feature path never reaches the color head") {
  TileField tile = make_tiny_tile(4, 26);
  TileGrads grads = TileGrads::zeros_like(tile);
  SubFieldEval eval;
  std::vector<double> sh(tile.sh_dim());
  sh_encode(Vec3(0, 0, 1), tile.config.sh_degree, sh.data());
  Vec3 x(0.3, -0.1, 0.6);
  eval.forward(tile.subfields[0], tile, &x, 1, sh.data(), 0);
  std::vector<double> d_feature(4, 1.0);
  eval.backward(tile.subfields[0], tile, nullptr, nullptr, d_feature.data(), grads.subfields[0],
                grads.video_embeddings.data());

  for (const auto& wg : grads.subfields[0].color.w)
    for (double v : wg) CHECK(v == 0.0);
  for (double v : grads.video_embeddings) CHECK(v == 0.0);
  // while the trunk and hash do receive gradient
  double trunk_norm = 0.0;
  for (const auto& wg : grads.subfields[0].trunk.w)
    for (double v : wg) trunk_norm += v * v;
  CHECK(trunk_norm > 0.0);
}

TEST_CASE("checkpoint: save/load/save is byte-stable and loads the same field") {
  TempDir dir("ckpt");
  TileField tile = make_tiny_tile(4, 27);
  save_tile_field(tile, dir.file("a.ckpt"));
  TileField loaded = load_tile_field(dir.file("a.ckpt"));
  save_tile_field(loaded, dir.file("b.ckpt"));

  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(dir.file("a.ckpt")) == slurp(dir.file("b.ckpt")));

  CHECK(loaded.subfields.size() == tile.subfields.size());
  CHECK(loaded.video_ids == tile.video_ids);
  CHECK(loaded.config.feature_dim == tile.config.feature_dim);

  // parameters survive as float32
  auto pa = collect_param_blocks(tile);
  auto pb = collect_param_blocks(loaded);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t b = 0; b < pa.size(); ++b) {
    CHECK(pa[b].name == pb[b].name);
    for (std::size_t j = 0; j < pa[b].size; ++j)
      CHECK(pb[b].data[j] == static_cast<double>(static_cast<float>(pa[b].data[j])));
  }

  CHECK_THROWS_AS(load_tile_field(dir.file("missing.ckpt")), DataError);
  std::ofstream(dir.file("junk.ckpt")) << "not a checkpoint";
  CHECK_THROWS_AS(load_tile_field(dir.file("junk.ckpt")), DataError);
}
