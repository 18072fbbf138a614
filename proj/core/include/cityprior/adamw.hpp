#pragma once

#include <cstdint>
#include <vector>

#include "cityprior/params.hpp"

namespace cityprior {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;  // small; hash-table gradients are sparse and tiny
  double weight_decay = 1e-5;
};

// Adam with decoupled weight decay and bias correction. Moment buffers are
// laid out to match the parameter block collection of the first step.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<NamedBlock>& params, const std::vector<NamedBlock>& grads, double lr);

  int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  int64_t t_ = 0;
};

}  // namespace cityprior
