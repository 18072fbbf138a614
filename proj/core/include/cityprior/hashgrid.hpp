#pragma once

#include <cstdint>
#include <vector>

#include "cityprior/geometry.hpp"
#include "cityprior/params.hpp"
#include "cityprior/rng.hpp"

namespace cityprior {

struct HashGridConfig {
  int num_levels = 10;
  int min_resolution = 16;      // cells per axis at the coarsest level
  int max_resolution = 16384;   // cells per axis at the finest level
  int features_per_level = 4;
  std::size_t table_capacity = 1u << 20;  // entries per level, power of two
  Aabb bounding_box;

  bool valid() const {
    return num_levels >= 1 && min_resolution >= 2 && max_resolution >= min_resolution &&
           features_per_level >= 1 && table_capacity >= 8 &&
           (table_capacity & (table_capacity - 1)) == 0;
  }
};

// Multi-resolution feature grid. Levels are geometrically spaced between
// min_resolution and max_resolution; a level whose dense corner grid fits in
// table_capacity is stored densely (collision free), otherwise corners map
// to slots through the xor-of-primes spatial hash. Queries trilinearly
// interpolate the 8 cell corners per level and concatenate across levels.
class HashGrid {
 public:
  HashGrid() = default;
  HashGrid(const HashGridConfig& config, Rng& rng);

  const HashGridConfig& config() const { return config_; }
  int output_dim() const { return config_.num_levels * config_.features_per_level; }
  int level_resolution(int level) const { return resolutions_[level]; }
  bool level_is_dense(int level) const { return dense_[level]; }
  std::size_t level_table_size(int level) const { return tables_[level].size() / config_.features_per_level; }

  std::vector<std::vector<double>>& tables() { return tables_; }
  const std::vector<std::vector<double>>& tables() const { return tables_; }

  // out: n x output_dim. Positions outside the box are clamped to it.
  void encode(const Vec3* xs, int n, double* out) const;

  using Grads = std::vector<std::vector<double>>;  // per level, table-shaped
  Grads make_grads() const;

  // d_out: n x output_dim; scatters into per-level table gradients.
  void encode_backward(const Vec3* xs, int n, const double* d_out, Grads& g) const;

  void collect_blocks(const std::string& prefix, std::vector<NamedBlock>& out);
  static void collect_grad_blocks(const std::string& prefix, Grads& g, const HashGrid& shape,
                                  std::vector<NamedBlock>& out);

 private:
  struct CornerRef {
    std::size_t slot[8];
    double weight[8];
  };
  void corners(int level, const Vec3& x, CornerRef& ref) const;

  HashGridConfig config_;
  std::vector<int> resolutions_;
  std::vector<uint8_t> dense_;
  std::vector<std::vector<double>> tables_;  // per level, size x features_per_level
};

}  // namespace cityprior
