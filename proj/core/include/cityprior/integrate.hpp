#pragma once

#include <cstdint>
#include <vector>

#include "cityprior/extract.hpp"
#include "cityprior/geometry.hpp"
#include "cityprior/rng.hpp"

namespace cityprior {

// Ego-frame grid layout shared by the BEV and 3D rasterizers. x is forward,
// y left, z up; rows index y and columns index x.
struct GridSpec {
  double x_min = -50.0, x_max = 50.0;
  double y_min = -25.0, y_max = 25.0;
  double z_min = -5.0, z_max = 3.0;
  double resolution = 0.5;  // meters per cell

  int rows() const { return static_cast<int>(std::ceil((y_max - y_min) / resolution)); }
  int cols() const { return static_cast<int>(std::ceil((x_max - x_min) / resolution)); }
  int layers() const { return static_cast<int>(std::ceil((z_max - z_min) / resolution)); }
  bool valid() const {
    return resolution > 0 && x_max > x_min && y_max > y_min && z_max > z_min;
  }
};

struct BEVFeatureGrid {
  GridSpec spec;
  int channels = 0;
  std::vector<double> data;    // rows x cols x channels
  std::vector<double> weight;  // rows x cols accumulated scatter weight

  double& at(int row, int col, int c) {
    return data[(static_cast<std::size_t>(row) * spec.cols() + col) * channels + c];
  }
  double at(int row, int col, int c) const {
    return data[(static_cast<std::size_t>(row) * spec.cols() + col) * channels + c];
  }
};

struct VoxelFeatureGrid3D {
  GridSpec spec;
  int channels = 0;
  std::vector<double> data;    // layers x rows x cols x channels
  std::vector<double> weight;  // layers x rows x cols

  double& at(int layer, int row, int col, int c) {
    return data[((static_cast<std::size_t>(layer) * spec.rows() + row) * spec.cols() + col) *
                    channels +
                c];
  }
};

// Scatters queried prior cells into BEV bins; the vertical extent is split
// into num_height_bins slabs whose features are stacked along the channel
// axis (channels = D x num_height_bins). Per-bin features are weighted
// means; cells outside the ranges are dropped; empty bins stay zero.
BEVFeatureGrid rasterize_bev(const std::vector<RegionCell>& cells, const GridSpec& spec,
                             int feature_dim, int num_height_bins);

// As rasterize_bev without height stacking (channels = D).
VoxelFeatureGrid3D rasterize_3d(const std::vector<RegionCell>& cells, const GridSpec& spec,
                                int feature_dim);

// Two 3x3 convolutions with a ReLU between, applied after channel
// concatenation of (online, prior). Identity initialization reproduces the
// online grid exactly (the hidden layer carries +/- copies through the ReLU
// and the prior-path weights start at zero).
class FusionHead {
 public:
  struct Conv {
    int in_ch = 0, out_ch = 0;
    std::vector<double> w;  // out x in x 3 x 3
    std::vector<double> b;  // out
  };

  FusionHead() = default;
  FusionHead(int online_channels, int prior_channels);

  int online_channels() const { return online_channels_; }
  int prior_channels() const { return prior_channels_; }
  Conv& conv1() { return conv1_; }
  Conv& conv2() { return conv2_; }

  struct Grads {
    std::vector<double> w1, b1, w2, b2;
  };
  Grads make_grads() const;

  // Caches from the forward pass needed to replay gradients.
  struct Workspace {
    int rows = 0, cols = 0;
    std::vector<double> input;   // concatenated channels
    std::vector<double> hidden;  // post-ReLU
  };

  BEVFeatureGrid forward(const BEVFeatureGrid& online, const BEVFeatureGrid& prior,
                         Workspace& ws) const;
  // d_out: rows x cols x online_channels. Fills input gradients when non-null.
  void backward(const Workspace& ws, const double* d_out, Grads& g, double* d_online,
                double* d_prior) const;

 private:
  int online_channels_ = 0, prior_channels_ = 0, hidden_channels_ = 0;
  Conv conv1_, conv2_;
};

// Channel-concatenate and mix; output spatial shape and channel count match
// the online grid.
BEVFeatureGrid fuse(const BEVFeatureGrid& online, const BEVFeatureGrid& prior,
                    const FusionHead& head);

}  // namespace cityprior
