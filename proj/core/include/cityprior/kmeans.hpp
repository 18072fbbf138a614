#pragma once

#include <cstdint>
#include <vector>

#include "cityprior/geometry.hpp"

namespace cityprior {

struct KMeansResult {
  std::vector<Vec3> centroids;
  std::vector<int> labels;
  double wcss = 0.0;  // within-cluster sum of squares at convergence
  int iterations = 0;
  std::vector<double> wcss_history;  // one entry per Lloyd iteration, non-increasing
};

// Lloyd's algorithm with k-means++ seeding. Converges when no label changes
// or after max_iterations. Ties in the nearest-centroid argmin break toward
// the lowest index; an emptied cluster is reseeded at the point farthest
// from its current centroid.
KMeansResult kmeans(const std::vector<Vec3>& points, int k, uint64_t seed,
                    int max_iterations = 100);

}  // namespace cityprior
