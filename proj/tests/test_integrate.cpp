#include <doctest.h>

#include <map>

#include "cityprior/errors.hpp"
#include "cityprior/integrate.hpp"
#include "cityprior/rng.hpp"

using namespace cityprior;

namespace {

GridSpec small_spec() {
  GridSpec spec;
  spec.x_min = -5;
  spec.x_max = 5;
  spec.y_min = -5;
  spec.y_max = 5;
  spec.z_min = -2;
  spec.z_max = 2;
  spec.resolution = 1.0;
  return spec;
}

RegionCell cell_at(const Vec3& p, const Eigen::VectorXd& f, double w = 1.0) {
  RegionCell c;
  c.ego_position = p;
  c.feature = f;
  c.weight = w;
  return c;
}

BEVFeatureGrid random_grid(const GridSpec& spec, int channels, Rng& rng) {
  BEVFeatureGrid g;
  g.spec = spec;
  g.channels = channels;
  g.data.resize(static_cast<std::size_t>(spec.rows()) * spec.cols() * channels);
  for (double& v : g.data) v = rng.uniform(-1.5, 1.5);
  return g;
}

}  // namespace

TEST_CASE("rasterize_bev: one cell at the ego origin fills exactly the center bin") {
  Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(3, 0.5, 1.5);
  auto grid = rasterize_bev({cell_at(Vec3(0.01, 0.01, 0.0), f)}, small_spec(), 3, 1);
  CHECK(grid.channels == 3);
  int nonzero_bins = 0;
  for (int r = 0; r < grid.spec.rows(); ++r)
    for (int c = 0; c < grid.spec.cols(); ++c)
      for (int ch = 0; ch < 3; ++ch)
        if (grid.at(r, c, ch) != 0.0) {
          ++nonzero_bins;
          break;
        }
  CHECK(nonzero_bins == 1);
  for (int ch = 0; ch < 3; ++ch) CHECK(grid.at(5, 5, ch) == f[ch]);
}

TEST_CASE("rasterize_bev: weighted mean within a bin, slabs stack channels") {
  Eigen::VectorXd f1 = Eigen::VectorXd::Constant(2, 1.0);
  Eigen::VectorXd f2 = Eigen::VectorXd::Constant(2, 5.0);
  auto grid = rasterize_bev(
      {cell_at(Vec3(0.2, 0.2, -1.0), f1, 1.0), cell_at(Vec3(0.4, 0.3, -1.2), f2, 3.0),
       cell_at(Vec3(0.2, 0.2, 1.0), f1, 2.0)},
      small_spec(), 2, 2);
  CHECK(grid.channels == 4);  // 2 features x 2 slabs
  // lower slab: (1*f1 + 3*f2) / 4 = 4; upper slab holds f1
  CHECK(grid.at(5, 5, 0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(grid.at(5, 5, 1) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(grid.at(5, 5, 2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(grid.at(5, 5, 3) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rasterize_bev: random cells match a brute-force scatter average") {
  Rng rng(61);
  GridSpec spec = small_spec();
  const int D = 3, slabs = 2;
  std::vector<RegionCell> cells;
  for (int i = 0; i < 500; ++i)
    cells.push_back(cell_at(
        Vec3(rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(-2.5, 2.5)),
        Eigen::VectorXd::NullaryExpr(D, [&](Eigen::Index) { return rng.uniform(-1, 1); }),
        1.0 + rng.bounded(4)));
  auto grid = rasterize_bev(cells, spec, D, slabs);

  std::map<std::tuple<int, int, int>, std::pair<Eigen::VectorXd, double>> oracle;
  const double slab_h = (spec.z_max - spec.z_min) / slabs;
  for (const RegionCell& c : cells) {
    double x = c.ego_position[0], y = c.ego_position[1], z = c.ego_position[2];
    if (x < spec.x_min || x >= spec.x_max || y < spec.y_min || y >= spec.y_max ||
        z < spec.z_min || z >= spec.z_max)
      continue;
    int col = static_cast<int>(std::floor((x - spec.x_min) / spec.resolution));
    int row = static_cast<int>(std::floor((y - spec.y_min) / spec.resolution));
    int slab = std::min(slabs - 1, static_cast<int>(std::floor((z - spec.z_min) / slab_h)));
    auto key = std::make_tuple(row, col, slab);
    auto it = oracle.find(key);
    if (it == oracle.end())
      oracle[key] = {c.feature * c.weight, c.weight};
    else {
      it->second.first += c.feature * c.weight;
      it->second.second += c.weight;
    }
  }
  for (int r = 0; r < spec.rows(); ++r)
    for (int c = 0; c < spec.cols(); ++c)
      for (int slab = 0; slab < slabs; ++slab) {
        auto it = oracle.find(std::make_tuple(r, c, slab));
        for (int d = 0; d < D; ++d) {
          double expect = it == oracle.end() ? 0.0 : it->second.first[d] / it->second.second;
          CHECK(grid.at(r, c, slab * D + d) == doctest::Approx(expect).epsilon(1e-9));
        }
      }
}

TEST_CASE("rasterize_bev: unit-weight cells conserve total scatter mass") {
  Rng rng(62);
  GridSpec spec = small_spec();
  std::vector<RegionCell> cells;
  const int n = 400;
  for (int i = 0; i < n; ++i)
    cells.push_back(cell_at(Vec3(rng.uniform(-4.9, 4.9), rng.uniform(-4.9, 4.9), rng.uniform(-1.9, 1.9)),
                            Eigen::VectorXd::Constant(2, 1.0)));
  auto grid = rasterize_bev(cells, spec, 2, 4);
  double mass = 0.0;
  for (double w : grid.weight) mass += w;
  CHECK(mass == doctest::Approx(static_cast<double>(n)).epsilon(1e-12));
}

TEST_CASE("rasterize_bev: shifting the ego by one resolution shifts the grid one bin") {
  Rng rng(63);
  GridSpec spec = small_spec();
  std::vector<RegionCell> cells;
  for (int i = 0; i < 200; ++i)
    cells.push_back(cell_at(Vec3(rng.uniform(-3.4, 3.4), rng.uniform(-3.4, 3.4), 0.0),
                            Eigen::VectorXd::Constant(1, rng.next_double())));
  auto base = rasterize_bev(cells, spec, 1, 1);

  std::vector<RegionCell> shifted = cells;
  for (RegionCell& c : shifted) c.ego_position[0] += spec.resolution;
  auto moved = rasterize_bev(shifted, spec, 1, 1);
  for (int r = 0; r < spec.rows(); ++r)
    for (int c = 0; c + 1 < spec.cols(); ++c)
      CHECK(moved.at(r, c + 1, 0) == doctest::Approx(base.at(r, c, 0)).epsilon(1e-12));
}

TEST_CASE("rasterize_3d: single cell and weighted mean without height stacking") {
  GridSpec spec = small_spec();
  Eigen::VectorXd f1 = Eigen::VectorXd::Constant(2, 2.0);
  Eigen::VectorXd f2 = Eigen::VectorXd::Constant(2, 6.0);
  auto grid = rasterize_3d({cell_at(Vec3(0.3, 0.3, 0.5), f1, 1.0),
                            cell_at(Vec3(0.1, 0.4, 0.5), f2, 1.0)},
                           spec, 2);
  CHECK(grid.channels == 2);
  CHECK(grid.at(2, 5, 5, 0) == doctest::Approx(4.0).epsilon(1e-12));  // layer floor((0.5+2)/1)=2
  // everything else zero
  double total = 0.0;
  for (double v : grid.data) total += std::abs(v);
  CHECK(total == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("fuse: identity head with a zero prior reproduces the online features") {
  Rng rng(64);
  GridSpec spec = small_spec();
  BEVFeatureGrid online = random_grid(spec, 4, rng);
  BEVFeatureGrid prior = random_grid(spec, 3, rng);
  for (double& v : prior.data) v = 0.0;

  FusionHead head(4, 3);
  BEVFeatureGrid out = fuse(online, prior, head);
  for (std::size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] == online.data[i]);
}

TEST_CASE("fuse: no accidental symmetry between online and prior inputs") {
  Rng rng(65);
  GridSpec spec = small_spec();
  BEVFeatureGrid a = random_grid(spec, 3, rng);
  BEVFeatureGrid b = random_grid(spec, 3, rng);
  FusionHead head(3, 3);
  // perturb the head so both paths carry signal
  for (double& w : head.conv1().w) w += rng.uniform(-0.2, 0.2);
  for (double& w : head.conv2().w) w += rng.uniform(-0.2, 0.2);
  BEVFeatureGrid ab = fuse(a, b, head);
  BEVFeatureGrid ba = fuse(b, a, head);
  double diff = 0.0;
  for (std::size_t i = 0; i < ab.data.size(); ++i) diff += std::abs(ab.data[i] - ba.data[i]);
  CHECK(diff > 1e-6);

  BEVFeatureGrid wrong = random_grid(spec, 2, rng);
  CHECK_THROWS_AS(fuse(a, wrong, head), DataError);
}

TEST_CASE("fuse: head and input gradients match finite differences") {
  Rng rng(66);
  GridSpec spec;
  spec.x_min = -2;
  spec.x_max = 2;
  spec.y_min = -2;
  spec.y_max = 2;
  spec.resolution = 1.0;
  BEVFeatureGrid online = random_grid(spec, 2, rng);
  BEVFeatureGrid prior = random_grid(spec, 2, rng);
  FusionHead head(2, 2);
  for (double& w : head.conv1().w) w += rng.uniform(-0.3, 0.3);
  for (double& w : head.conv2().w) w += rng.uniform(-0.3, 0.3);

  std::vector<double> d_out(static_cast<std::size_t>(spec.rows()) * spec.cols() * 2);
  for (double& v : d_out) v = rng.uniform(-1, 1);
  auto readout = [&]() {
    FusionHead::Workspace ws;
    BEVFeatureGrid o = head.forward(online, prior, ws);
    double s = 0.0;
    for (std::size_t i = 0; i < o.data.size(); ++i) s += o.data[i] * d_out[i];
    return s;
  };

  FusionHead::Workspace ws;
  head.forward(online, prior, ws);
  FusionHead::Grads g = head.make_grads();
  std::vector<double> d_online(online.data.size()), d_prior(prior.data.size());
  head.backward(ws, d_out.data(), g, d_online.data(), d_prior.data());

  const double h = 1e-6;
  auto fd_check = [&](double* slot, double analytic) {
    double saved = *slot;
    *slot = saved + h;
    double up = readout();
    *slot = saved - h;
    double down = readout();
    *slot = saved;
    double fd = (up - down) / (2 * h);
    CHECK(analytic == doctest::Approx(fd).epsilon(1e-4));
  };
  Rng pick(67);
  for (int probe = 0; probe < 10; ++probe) {
    std::size_t j1 = pick.bounded(head.conv1().w.size());
    fd_check(&head.conv1().w[j1], g.w1[j1]);
    std::size_t j2 = pick.bounded(head.conv2().w.size());
    fd_check(&head.conv2().w[j2], g.w2[j2]);
    std::size_t jo = pick.bounded(online.data.size());
    fd_check(&online.data[jo], d_online[jo]);
    std::size_t jp = pick.bounded(prior.data.size());
    fd_check(&prior.data[jp], d_prior[jp]);
  }
  std::size_t jb = pick.bounded(head.conv2().b.size());
  fd_check(&head.conv2().b[jb], g.b2[jb]);
}
