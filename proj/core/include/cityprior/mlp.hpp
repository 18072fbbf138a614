#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cityprior/params.hpp"
#include "cityprior/rng.hpp"

namespace cityprior {

// Fully connected network with ReLU between layers and a raw (pre-activation)
// output; heads apply their own output nonlinearity. Weights are row-major
// (out x in). Forward runs over sample batches so the inner loops vectorize.
class Mlp {
 public:
  struct Layer {
    int in = 0, out = 0;
    std::vector<double> w;  // out x in
    std::vector<double> b;  // out
  };

  Mlp() = default;
  // widths = {in, hidden..., out}
  explicit Mlp(const std::vector<int>& widths);

  void init_kaiming(Rng& rng);  // weights U(+-sqrt(6/fan_in)), biases zero

  int input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  int output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  // Per-layer activations cached for the backward pass. acts[0] is the input
  // copy, acts.back() the raw output; n rows each.
  struct Workspace {
    int n = 0;
    std::vector<std::vector<double>> acts;
  };

  struct Grads {
    std::vector<std::vector<double>> w;
    std::vector<std::vector<double>> b;
  };
  Grads make_grads() const;

  // Returns a pointer to the n x output_dim raw outputs held by ws.
  const double* forward(const double* x, int n, Workspace& ws) const;

  // d_out is n x output_dim. Accumulates into g; writes the input gradient
  // (n x input_dim) into d_in when non-null.
  void backward(const Workspace& ws, const double* d_out, Grads& g, double* d_in = nullptr) const;

  void collect_blocks(const std::string& prefix, std::vector<NamedBlock>& out);
  static void collect_grad_blocks(const std::string& prefix, Grads& g, const Mlp& shape,
                                  std::vector<NamedBlock>& out);

 private:
  std::vector<Layer> layers_;
};

// Activation helpers shared by the field heads.
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double logistic(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace cityprior
