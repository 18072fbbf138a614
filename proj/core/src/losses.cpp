#include "cityprior/losses.hpp"

#include <algorithm>
#include <cmath>

#include "cityprior/errors.hpp"

namespace cityprior {

double rgb_loss(const std::vector<Vec3>& pred, const std::vector<Vec3>& target) {
  if (pred.size() != target.size()) throw DataError("rgb_loss: batch size mismatch");
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - target[i]).squaredNorm();
  return sum / (3.0 * pred.size());
}

double feat_loss(const std::vector<Eigen::VectorXd>& pred,
                 const std::vector<Eigen::VectorXd>& target) {
  if (pred.size() != target.size()) throw DataError("feat_loss: batch size mismatch");
  if (pred.empty()) return 0.0;
  const auto dim = pred.front().size();
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != dim || target[i].size() != dim)
      throw DataError("feat_loss: feature dimension mismatch");
    sum += (pred[i] - target[i]).squaredNorm();
  }
  return sum / (static_cast<double>(dim) * pred.size());
}

double sky_loss(const std::vector<double>& opacity, const std::vector<uint8_t>& sky_mask) {
  if (opacity.size() != sky_mask.size()) throw DataError("sky_loss: batch size mismatch");
  if (opacity.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < opacity.size(); ++i) {
    double o = std::clamp(opacity[i], kSkyLossClamp, 1.0 - kSkyLossClamp);
    double y = sky_mask[i] ? 0.0 : 1.0;  // target occupancy
    sum += -(y * std::log(o) + (1.0 - y) * std::log(1.0 - o));
  }
  return sum / opacity.size();
}

double sky_loss_grad(double opacity, bool is_sky) {
  if (opacity <= kSkyLossClamp || opacity >= 1.0 - kSkyLossClamp) return 0.0;
  double y = is_sky ? 0.0 : 1.0;
  return -y / opacity + (1.0 - y) / (1.0 - opacity);
}

namespace {

// Sum of final-interval weights overlapping each proposal interval.
// Intervals of sample i are [depth_i, depth_{i+1}) with the last one closed
// by t_far; both lists are sorted, so a single forward scan suffices.
std::vector<double> overlap_bounds(const RaySampleBatch& fin, const RaySampleBatch& prop) {
  const int np = prop.size();
  const int nf = fin.size();
  std::vector<double> bound(np, 0.0);
  auto f_lo = [&](int j) { return fin.depths[j]; };
  auto f_hi = [&](int j) { return j + 1 < nf ? fin.depths[j + 1] : fin.t_far; };
  auto p_lo = [&](int i) { return prop.depths[i]; };
  auto p_hi = [&](int i) { return i + 1 < np ? prop.depths[i + 1] : prop.t_far; };

  int j0 = 0;
  for (int i = 0; i < np; ++i) {
    while (j0 < nf && f_hi(j0) <= p_lo(i)) ++j0;
    for (int j = j0; j < nf && f_lo(j) < p_hi(i); ++j) bound[i] += fin.weights[j];
  }
  return bound;
}

}  // namespace

double interlevel_loss(const RaySampleBatch& final_batch,
                       const std::vector<RaySampleBatch>& proposal_batches) {
  double loss = 0.0;
  for (const RaySampleBatch& prop : proposal_batches) {
    if (prop.size() == 0) continue;
    std::vector<double> bound = overlap_bounds(final_batch, prop);
    for (int i = 0; i < prop.size(); ++i) {
      double shortfall = std::max(0.0, bound[i] - prop.weights[i]);
      loss += shortfall * shortfall / (prop.weights[i] + kInterlevelEps);
    }
  }
  return loss;
}

void interlevel_loss_grad(const RaySampleBatch& final_batch, const RaySampleBatch& proposal_batch,
                          double scale, double* d_w) {
  if (proposal_batch.size() == 0) return;
  std::vector<double> bound = overlap_bounds(final_batch, proposal_batch);
  for (int i = 0; i < proposal_batch.size(); ++i) {
    double denom = proposal_batch.weights[i] + kInterlevelEps;
    double shortfall = std::max(0.0, bound[i] - proposal_batch.weights[i]);
    if (shortfall <= 0.0) continue;
    d_w[i] += scale * (-2.0 * shortfall / denom - shortfall * shortfall / (denom * denom));
  }
}

namespace {

struct NormalizedIntervals {
  std::vector<double> mid;    // normalized interval midpoints, ascending
  std::vector<double> width;  // normalized interval widths
};

NormalizedIntervals normalize_intervals(const RaySampleBatch& b) {
  NormalizedIntervals out;
  const int n = b.size();
  const double span = b.t_far - b.t_near;
  if (span <= 0.0 || n == 0) return out;
  out.mid.resize(n);
  out.width.resize(n);
  for (int i = 0; i < n; ++i) {
    double lo = b.depths[i];
    double hi = i + 1 < n ? b.depths[i + 1] : b.t_far;
    out.mid[i] = (0.5 * (lo + hi) - b.t_near) / span;
    out.width[i] = (hi - lo) / span;
  }
  return out;
}

}  // namespace

double distortion_loss(const RaySampleBatch& final_batch) {
  const int n = final_batch.size();
  if (n == 0) return 0.0;
  NormalizedIntervals ni = normalize_intervals(final_batch);
  if (ni.mid.empty()) return 0.0;
  const std::vector<double>& w = final_batch.weights;

  // sum_{i,j} w_i w_j |s_i - s_j| = 2 sum_i w_i (s_i A_{i-1} - B_{i-1})
  // with prefix sums A of w and B of w*s (midpoints ascending).
  double loss = 0.0, prefix_w = 0.0, prefix_ws = 0.0;
  for (int i = 0; i < n; ++i) {
    loss += 2.0 * w[i] * (ni.mid[i] * prefix_w - prefix_ws);
    loss += (1.0 / 3.0) * w[i] * w[i] * ni.width[i];
    prefix_w += w[i];
    prefix_ws += w[i] * ni.mid[i];
  }
  return loss;
}

void distortion_loss_grad(const RaySampleBatch& final_batch, double scale, double* d_w) {
  const int n = final_batch.size();
  if (n == 0) return;
  NormalizedIntervals ni = normalize_intervals(final_batch);
  if (ni.mid.empty()) return;
  const std::vector<double>& w = final_batch.weights;

  double total_w = 0.0, total_ws = 0.0;
  for (int i = 0; i < n; ++i) {
    total_w += w[i];
    total_ws += w[i] * ni.mid[i];
  }
  // dL/dw_k = 2 sum_j w_j |s_k - s_j| + (2/3) w_k width_k
  double prefix_w = 0.0, prefix_ws = 0.0;
  for (int k = 0; k < n; ++k) {
    double abs_sum = ni.mid[k] * prefix_w - prefix_ws + (total_ws - prefix_ws - w[k] * ni.mid[k]) -
                     ni.mid[k] * (total_w - prefix_w - w[k]);
    d_w[k] += scale * (2.0 * abs_sum + (2.0 / 3.0) * w[k] * ni.width[k]);
    prefix_w += w[k];
    prefix_ws += w[k] * ni.mid[k];
  }
}

double total_loss(const LossBreakdown& parts, const LossWeights& weights) {
  return parts.total(weights);
}

}  // namespace cityprior
