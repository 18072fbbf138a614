#include "cityprior/kmeans.hpp"

#include <limits>

#include "cityprior/errors.hpp"
#include "cityprior/rng.hpp"

namespace cityprior {

namespace {

int nearest_centroid(const std::vector<Vec3>& centroids, const Vec3& p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    double d = (p - centroids[j]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

std::vector<Vec3> kmeanspp_init(const std::vector<Vec3>& points, int k, Rng& rng) {
  std::vector<Vec3> centroids;
  centroids.reserve(k);
  centroids.push_back(points[rng.bounded(points.size())]);

  std::vector<double> d2(points.size());
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& cen : centroids) best = std::min(best, (points[i] - cen).squaredNorm());
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      // all remaining points coincide with chosen centroids
      centroids.push_back(points[rng.bounded(points.size())]);
      continue;
    }
    double u = rng.next_double() * total;
    std::size_t pick = 0;
    for (; pick + 1 < points.size(); ++pick) {
      u -= d2[pick];
      if (u <= 0.0) break;
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const std::vector<Vec3>& points, int k, uint64_t seed, int max_iterations) {
  if (k <= 0) throw DataError("kmeans: k must be positive");
  if (static_cast<std::size_t>(k) > points.size())
    throw DataError("kmeans: k (" + std::to_string(k) + ") exceeds point count (" +
                    std::to_string(points.size()) + ")");

  Rng rng(seed);
  KMeansResult res;
  res.centroids = kmeanspp_init(points, k, rng);
  res.labels.assign(points.size(), -1);

  for (int iter = 0; iter < max_iterations; ++iter) {
    res.iterations = iter + 1;
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      int j = nearest_centroid(res.centroids, points[i]);
      if (j != res.labels[i]) {
        res.labels[i] = j;
        changed = true;
      }
    }

    std::vector<Vec3> sums(k, Vec3::Zero());
    std::vector<int> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      sums[res.labels[i]] += points[i];
      ++counts[res.labels[i]];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[j] > 0) {
        res.centroids[j] = sums[j] / counts[j];
      } else {
        // reseed at the point farthest from this centroid
        std::size_t far_i = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          double d = (points[i] - res.centroids[j]).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        res.centroids[j] = points[far_i];
        changed = true;
      }
    }
    double wcss = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
      wcss += (points[i] - res.centroids[res.labels[i]]).squaredNorm();
    res.wcss_history.push_back(wcss);

    if (!changed) break;
  }

  // final labels consistent with the final centroids
  res.wcss = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    res.labels[i] = nearest_centroid(res.centroids, points[i]);
    res.wcss += (points[i] - res.centroids[res.labels[i]]).squaredNorm();
  }
  return res;
}

}  // namespace cityprior
