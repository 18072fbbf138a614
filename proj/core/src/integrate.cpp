#include "cityprior/integrate.hpp"

#include <cmath>
#include <cstring>

#include "cityprior/errors.hpp"

namespace cityprior {

BEVFeatureGrid rasterize_bev(const std::vector<RegionCell>& cells, const GridSpec& spec,
                             int feature_dim, int num_height_bins) {
  if (!spec.valid()) throw DataError("rasterize_bev: invalid grid spec");
  if (num_height_bins < 1) throw DataError("rasterize_bev: need at least one height bin");

  const int rows = spec.rows(), cols = spec.cols();
  const int C = feature_dim * num_height_bins;
  BEVFeatureGrid grid;
  grid.spec = spec;
  grid.channels = C;
  grid.data.assign(static_cast<std::size_t>(rows) * cols * C, 0.0);
  grid.weight.assign(static_cast<std::size_t>(rows) * cols, 0.0);

  // per-(bin, slab) weight accumulators for the running weighted mean
  std::vector<double> slab_weight(static_cast<std::size_t>(rows) * cols * num_height_bins, 0.0);
  const double slab_height = (spec.z_max - spec.z_min) / num_height_bins;

  for (const RegionCell& cell : cells) {
    if (static_cast<int>(cell.feature.size()) != feature_dim)
      throw DataError("rasterize_bev: feature dimension mismatch");
    const double x = cell.ego_position[0], y = cell.ego_position[1], z = cell.ego_position[2];
    if (x < spec.x_min || x >= spec.x_max || y < spec.y_min || y >= spec.y_max) continue;
    if (z < spec.z_min || z >= spec.z_max) continue;
    const int col = static_cast<int>(std::floor((x - spec.x_min) / spec.resolution));
    const int row = static_cast<int>(std::floor((y - spec.y_min) / spec.resolution));
    const int slab = std::min(static_cast<int>(std::floor((z - spec.z_min) / slab_height)),
                              num_height_bins - 1);
    if (row < 0 || row >= rows || col < 0 || col >= cols) continue;

    const std::size_t bin = static_cast<std::size_t>(row) * cols + col;
    double& wsum = slab_weight[bin * num_height_bins + slab];
    double* dst = grid.data.data() + bin * C + static_cast<std::size_t>(slab) * feature_dim;
    // weighted running mean per slab
    const double w_new = wsum + cell.weight;
    for (int d = 0; d < feature_dim; ++d)
      dst[d] = (dst[d] * wsum + cell.feature[d] * cell.weight) / w_new;
    wsum = w_new;
    grid.weight[bin] += cell.weight;
  }
  return grid;
}

VoxelFeatureGrid3D rasterize_3d(const std::vector<RegionCell>& cells, const GridSpec& spec,
                                int feature_dim) {
  if (!spec.valid()) throw DataError("rasterize_3d: invalid grid spec");
  const int rows = spec.rows(), cols = spec.cols(), layers = spec.layers();
  VoxelFeatureGrid3D grid;
  grid.spec = spec;
  grid.channels = feature_dim;
  grid.data.assign(static_cast<std::size_t>(layers) * rows * cols * feature_dim, 0.0);
  grid.weight.assign(static_cast<std::size_t>(layers) * rows * cols, 0.0);

  for (const RegionCell& cell : cells) {
    if (static_cast<int>(cell.feature.size()) != feature_dim)
      throw DataError("rasterize_3d: feature dimension mismatch");
    const double x = cell.ego_position[0], y = cell.ego_position[1], z = cell.ego_position[2];
    if (x < spec.x_min || x >= spec.x_max || y < spec.y_min || y >= spec.y_max ||
        z < spec.z_min || z >= spec.z_max)
      continue;
    const int col = static_cast<int>(std::floor((x - spec.x_min) / spec.resolution));
    const int row = static_cast<int>(std::floor((y - spec.y_min) / spec.resolution));
    const int layer = static_cast<int>(std::floor((z - spec.z_min) / spec.resolution));
    if (row < 0 || row >= rows || col < 0 || col >= cols || layer < 0 || layer >= layers) continue;

    const std::size_t vox = (static_cast<std::size_t>(layer) * rows + row) * cols + col;
    double& wsum = grid.weight[vox];
    double* dst = grid.data.data() + vox * feature_dim;
    const double w_new = wsum + cell.weight;
    for (int d = 0; d < feature_dim; ++d)
      dst[d] = (dst[d] * wsum + cell.feature[d] * cell.weight) / w_new;
    wsum = w_new;
  }
  return grid;
}

namespace {

// zero-padded 3x3 convolution, NHWC layout
void conv3x3_forward(const double* in, int rows, int cols, int in_ch, const double* w,
                     const double* b, double* out, int out_ch) {
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double* o = out + (static_cast<std::size_t>(r) * cols + c) * out_ch;
      for (int oc = 0; oc < out_ch; ++oc) o[oc] = b[oc];
      for (int dr = -1; dr <= 1; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= rows) continue;
        for (int dc = -1; dc <= 1; ++dc) {
          const int cc = c + dc;
          if (cc < 0 || cc >= cols) continue;
          const double* src = in + (static_cast<std::size_t>(rr) * cols + cc) * in_ch;
          const std::size_t tap = static_cast<std::size_t>((dr + 1) * 3 + (dc + 1));
          for (int oc = 0; oc < out_ch; ++oc) {
            const double* wo = w + ((static_cast<std::size_t>(oc) * in_ch) * 9) + tap;
            double s = 0.0;
            for (int ic = 0; ic < in_ch; ++ic) s += wo[static_cast<std::size_t>(ic) * 9] * src[ic];
            o[oc] += s;
          }
        }
      }
    }
  }
}

void conv3x3_backward(const double* in, int rows, int cols, int in_ch, const double* w,
                      const double* d_out, int out_ch, double* d_w, double* d_b, double* d_in) {
  if (d_in)
    std::memset(d_in, 0, sizeof(double) * static_cast<std::size_t>(rows) * cols * in_ch);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double* dout = d_out + (static_cast<std::size_t>(r) * cols + c) * out_ch;
      for (int oc = 0; oc < out_ch; ++oc) d_b[oc] += dout[oc];
      for (int dr = -1; dr <= 1; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= rows) continue;
        for (int dc = -1; dc <= 1; ++dc) {
          const int cc = c + dc;
          if (cc < 0 || cc >= cols) continue;
          const double* src = in + (static_cast<std::size_t>(rr) * cols + cc) * in_ch;
          double* din = d_in ? d_in + (static_cast<std::size_t>(rr) * cols + cc) * in_ch : nullptr;
          const std::size_t tap = static_cast<std::size_t>((dr + 1) * 3 + (dc + 1));
          for (int oc = 0; oc < out_ch; ++oc) {
            const double g = dout[oc];
            if (g == 0.0) continue;
            const double* wo = w + ((static_cast<std::size_t>(oc) * in_ch) * 9) + tap;
            double* dwo = d_w + ((static_cast<std::size_t>(oc) * in_ch) * 9) + tap;
            for (int ic = 0; ic < in_ch; ++ic) {
              dwo[static_cast<std::size_t>(ic) * 9] += g * src[ic];
              if (din) din[ic] += g * wo[static_cast<std::size_t>(ic) * 9];
            }
          }
        }
      }
    }
  }
}

}  // namespace

FusionHead::FusionHead(int online_channels, int prior_channels)
    : online_channels_(online_channels),
      prior_channels_(prior_channels),
      hidden_channels_(2 * online_channels) {
  if (online_channels < 1 || prior_channels < 1)
    throw DataError("fusion head needs positive channel counts");
  const int in_ch = online_channels + prior_channels;
  conv1_.in_ch = in_ch;
  conv1_.out_ch = hidden_channels_;
  conv1_.w.assign(static_cast<std::size_t>(hidden_channels_) * in_ch * 9, 0.0);
  conv1_.b.assign(hidden_channels_, 0.0);
  conv2_.in_ch = hidden_channels_;
  conv2_.out_ch = online_channels;
  conv2_.w.assign(static_cast<std::size_t>(online_channels) * hidden_channels_ * 9, 0.0);
  conv2_.b.assign(online_channels, 0.0);

  // identity start: hidden carries (+online, -online) through the ReLU and
  // the second conv reassembles online = relu(x) - relu(-x)
  auto tap1 = [&](int oc, int ic) -> double& {
    return conv1_.w[((static_cast<std::size_t>(oc) * in_ch) + ic) * 9 + 4];
  };
  auto tap2 = [&](int oc, int ic) -> double& {
    return conv2_.w[((static_cast<std::size_t>(oc) * hidden_channels_) + ic) * 9 + 4];
  };
  for (int c = 0; c < online_channels; ++c) {
    tap1(c, c) = 1.0;
    tap1(online_channels + c, c) = -1.0;
    tap2(c, c) = 1.0;
    tap2(c, online_channels + c) = -1.0;
  }
}

FusionHead::Grads FusionHead::make_grads() const {
  Grads g;
  g.w1.assign(conv1_.w.size(), 0.0);
  g.b1.assign(conv1_.b.size(), 0.0);
  g.w2.assign(conv2_.w.size(), 0.0);
  g.b2.assign(conv2_.b.size(), 0.0);
  return g;
}

BEVFeatureGrid FusionHead::forward(const BEVFeatureGrid& online, const BEVFeatureGrid& prior,
                                   Workspace& ws) const {
  if (online.channels != online_channels_ || prior.channels != prior_channels_)
    throw DataError("fuse: channel counts do not match the fusion head");
  if (online.spec.rows() != prior.spec.rows() || online.spec.cols() != prior.spec.cols())
    throw DataError("fuse: online and prior grids have different spatial shapes");

  const int rows = online.spec.rows(), cols = online.spec.cols();
  const int in_ch = online_channels_ + prior_channels_;
  ws.rows = rows;
  ws.cols = cols;
  ws.input.resize(static_cast<std::size_t>(rows) * cols * in_ch);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double* dst = ws.input.data() + (static_cast<std::size_t>(r) * cols + c) * in_ch;
      std::memcpy(dst, &online.data[(static_cast<std::size_t>(r) * cols + c) * online_channels_],
                  sizeof(double) * online_channels_);
      std::memcpy(dst + online_channels_,
                  &prior.data[(static_cast<std::size_t>(r) * cols + c) * prior_channels_],
                  sizeof(double) * prior_channels_);
    }

  ws.hidden.resize(static_cast<std::size_t>(rows) * cols * hidden_channels_);
  conv3x3_forward(ws.input.data(), rows, cols, in_ch, conv1_.w.data(), conv1_.b.data(),
                  ws.hidden.data(), hidden_channels_);
  for (double& v : ws.hidden) v = v > 0.0 ? v : 0.0;

  BEVFeatureGrid out;
  out.spec = online.spec;
  out.channels = online_channels_;
  out.data.assign(static_cast<std::size_t>(rows) * cols * online_channels_, 0.0);
  conv3x3_forward(ws.hidden.data(), rows, cols, hidden_channels_, conv2_.w.data(),
                  conv2_.b.data(), out.data.data(), online_channels_);
  return out;
}

void FusionHead::backward(const Workspace& ws, const double* d_out, Grads& g, double* d_online,
                          double* d_prior) const {
  const int rows = ws.rows, cols = ws.cols;
  const int in_ch = online_channels_ + prior_channels_;

  std::vector<double> d_hidden(ws.hidden.size());
  conv3x3_backward(ws.hidden.data(), rows, cols, hidden_channels_, conv2_.w.data(), d_out,
                   online_channels_, g.w2.data(), g.b2.data(), d_hidden.data());
  for (std::size_t i = 0; i < d_hidden.size(); ++i)
    if (ws.hidden[i] <= 0.0) d_hidden[i] = 0.0;

  std::vector<double> d_input;
  double* d_input_ptr = nullptr;
  if (d_online || d_prior) {
    d_input.resize(ws.input.size());
    d_input_ptr = d_input.data();
  }
  conv3x3_backward(ws.input.data(), rows, cols, in_ch, conv1_.w.data(), d_hidden.data(),
                   hidden_channels_, g.w1.data(), g.b1.data(), d_input_ptr);

  if (d_input_ptr) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const double* src = d_input.data() + (static_cast<std::size_t>(r) * cols + c) * in_ch;
        if (d_online)
          std::memcpy(d_online + (static_cast<std::size_t>(r) * cols + c) * online_channels_, src,
                      sizeof(double) * online_channels_);
        if (d_prior)
          std::memcpy(d_prior + (static_cast<std::size_t>(r) * cols + c) * prior_channels_,
                      src + online_channels_, sizeof(double) * prior_channels_);
      }
  }
}

BEVFeatureGrid fuse(const BEVFeatureGrid& online, const BEVFeatureGrid& prior,
                    const FusionHead& head) {
  FusionHead::Workspace ws;
  return head.forward(online, prior, ws);
}

}  // namespace cityprior
