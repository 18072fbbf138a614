#include "cityprior/adamw.hpp"

#include <cmath>

#include "cityprior/errors.hpp"

namespace cityprior {

void AdamW::step(std::vector<NamedBlock>& params, const std::vector<NamedBlock>& grads, double lr) {
  const std::size_t n = total_size(params);
  if (m_.empty()) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
  if (m_.size() != n || total_size(grads) != n)
    throw DataError("optimizer state does not match parameter layout");

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  std::size_t off = 0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    double* p = params[b].data;
    const double* g = grads[b].data;
    double* m = m_.data() + off;
    double* v = v_.data() + off;
    const std::size_t size = params[b].size;
    for (std::size_t j = 0; j < size; ++j) {
      p[j] -= lr * cfg_.weight_decay * p[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
    off += size;
  }
}

}  // namespace cityprior
