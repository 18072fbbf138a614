#include "cityprior/hashgrid.hpp"

#include <cmath>

#include "cityprior/errors.hpp"

namespace cityprior {

namespace {
constexpr uint32_t kPrimes[3] = {1u, 2654435761u, 805459861u};
}

HashGrid::HashGrid(const HashGridConfig& config, Rng& rng) : config_(config) {
  if (!config_.valid()) throw DataError("invalid hash-grid config");
  if (!config_.bounding_box.valid() || (config_.bounding_box.extent().array() <= 0.0).any())
    throw DataError("hash-grid bounding box is degenerate");

  const int L = config_.num_levels;
  double growth = 1.0;
  if (L > 1)
    growth = std::exp((std::log(static_cast<double>(config_.max_resolution)) -
                       std::log(static_cast<double>(config_.min_resolution))) /
                      (L - 1));
  for (int l = 0; l < L; ++l) {
    int res = static_cast<int>(std::floor(config_.min_resolution * std::pow(growth, l) + 0.5));
    res = std::max(res, 2);
    resolutions_.push_back(res);
    std::size_t dense_size = static_cast<std::size_t>(res + 1) * (res + 1) * (res + 1);
    bool dense = dense_size <= config_.table_capacity;
    dense_.push_back(dense ? 1 : 0);
    std::size_t size = dense ? dense_size : config_.table_capacity;
    std::vector<double> table(size * config_.features_per_level);
    for (double& v : table) v = rng.uniform(-1e-4, 1e-4);
    tables_.push_back(std::move(table));
  }
}

void HashGrid::corners(int level, const Vec3& x, CornerRef& ref) const {
  const int res = resolutions_[level];
  const Aabb& box = config_.bounding_box;

  uint32_t c0[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    double u = (x[a] - box.min[a]) / (box.max[a] - box.min[a]);
    u = std::clamp(u, 0.0, 1.0) * res;
    double cell = std::floor(u);
    if (cell > res - 1) cell = res - 1;  // x at the box max lands in the last cell
    c0[a] = static_cast<uint32_t>(cell);
    frac[a] = u - cell;
  }

  const bool dense = dense_[level];
  const std::size_t stride = static_cast<std::size_t>(res) + 1;
  const std::size_t mask = config_.table_capacity - 1;
  int idx = 0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx, ++idx) {
        uint32_t cx = c0[0] + dx, cy = c0[1] + dy, cz = c0[2] + dz;
        std::size_t slot;
        if (dense) {
          slot = cx + stride * (cy + stride * cz);
        } else {
          uint32_t h = cx * kPrimes[0] ^ cy * kPrimes[1] ^ cz * kPrimes[2];
          slot = h & mask;
        }
        ref.slot[idx] = slot;
        double wx = dx ? frac[0] : 1.0 - frac[0];
        double wy = dy ? frac[1] : 1.0 - frac[1];
        double wz = dz ? frac[2] : 1.0 - frac[2];
        ref.weight[idx] = wx * wy * wz;
      }
    }
  }
}

void HashGrid::encode(const Vec3* xs, int n, double* out) const {
  const int F = config_.features_per_level;
  const int D = output_dim();
  CornerRef ref;
  for (int i = 0; i < n; ++i) {
    double* oi = out + static_cast<std::size_t>(i) * D;
    for (int l = 0; l < config_.num_levels; ++l) {
      corners(l, xs[i], ref);
      const double* table = tables_[l].data();
      double* ol = oi + static_cast<std::size_t>(l) * F;
      for (int f = 0; f < F; ++f) ol[f] = 0.0;
      for (int c = 0; c < 8; ++c) {
        const double w = ref.weight[c];
        if (w == 0.0) continue;
        const double* entry = table + ref.slot[c] * F;
        for (int f = 0; f < F; ++f) ol[f] += w * entry[f];
      }
    }
  }
}

HashGrid::Grads HashGrid::make_grads() const {
  Grads g;
  for (const auto& t : tables_) g.emplace_back(t.size(), 0.0);
  return g;
}

void HashGrid::encode_backward(const Vec3* xs, int n, const double* d_out, Grads& g) const {
  const int F = config_.features_per_level;
  const int D = output_dim();
  CornerRef ref;
  for (int i = 0; i < n; ++i) {
    const double* di = d_out + static_cast<std::size_t>(i) * D;
    for (int l = 0; l < config_.num_levels; ++l) {
      const double* dl = di + static_cast<std::size_t>(l) * F;
      bool any = false;
      for (int f = 0; f < F; ++f) any |= dl[f] != 0.0;
      if (!any) continue;
      corners(l, xs[i], ref);
      double* gl = g[l].data();
      for (int c = 0; c < 8; ++c) {
        const double w = ref.weight[c];
        if (w == 0.0) continue;
        double* entry = gl + ref.slot[c] * F;
        for (int f = 0; f < F; ++f) entry[f] += w * dl[f];
      }
    }
  }
}

void HashGrid::collect_blocks(const std::string& prefix, std::vector<NamedBlock>& out) {
  for (std::size_t l = 0; l < tables_.size(); ++l)
    out.push_back({prefix + "/level" + std::to_string(l),
                   {level_table_size(static_cast<int>(l)),
                    static_cast<std::size_t>(config_.features_per_level)},
                   tables_[l].data(), tables_[l].size()});
}

void HashGrid::collect_grad_blocks(const std::string& prefix, Grads& g, const HashGrid& shape,
                                   std::vector<NamedBlock>& out) {
  for (std::size_t l = 0; l < g.size(); ++l)
    out.push_back({prefix + "/level" + std::to_string(l),
                   {shape.level_table_size(static_cast<int>(l)),
                    static_cast<std::size_t>(shape.config().features_per_level)},
                   g[l].data(), g[l].size()});
}

}  // namespace cityprior
