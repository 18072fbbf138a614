#include "cityprior/mlp.hpp"

#include <Eigen/Dense>

#include <cassert>
#include <cmath>

namespace cityprior {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

}  // namespace

Mlp::Mlp(const std::vector<int>& widths) {
  assert(widths.size() >= 2);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Layer l;
    l.in = widths[i];
    l.out = widths[i + 1];
    l.w.assign(static_cast<std::size_t>(l.in) * l.out, 0.0);
    l.b.assign(l.out, 0.0);
    layers_.push_back(std::move(l));
  }
}

void Mlp::init_kaiming(Rng& rng) {
  for (Layer& l : layers_) {
    double bound = std::sqrt(6.0 / l.in);
    for (double& v : l.w) v = rng.uniform(-bound, bound);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
}

Mlp::Grads Mlp::make_grads() const {
  Grads g;
  for (const Layer& l : layers_) {
    g.w.emplace_back(l.w.size(), 0.0);
    g.b.emplace_back(l.b.size(), 0.0);
  }
  return g;
}

const double* Mlp::forward(const double* x, int n, Workspace& ws) const {
  ws.n = n;
  ws.acts.resize(layers_.size() + 1);
  ws.acts[0].assign(x, x + static_cast<std::size_t>(n) * layers_.front().in);
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    auto& out = ws.acts[li + 1];
    out.resize(static_cast<std::size_t>(n) * l.out);

    CMapMat in_m(ws.acts[li].data(), n, l.in);
    CMapMat w_m(l.w.data(), l.out, l.in);
    MapMat out_m(out.data(), n, l.out);
    out_m.noalias() = in_m * w_m.transpose();
    out_m.rowwise() += CMapVec(l.b.data(), l.out).transpose();
    if (li + 1 < layers_.size()) out_m = out_m.cwiseMax(0.0);  // ReLU on hidden layers
  }
  return ws.acts.back().data();
}

void Mlp::backward(const Workspace& ws, const double* d_out, Grads& g, double* d_in) const {
  const int n = ws.n;
  RowMat delta = CMapMat(d_out, n, layers_.back().out);
  for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
    const Layer& l = layers_[li];
    CMapMat act_m(ws.acts[li].data(), n, l.in);
    CMapMat w_m(l.w.data(), l.out, l.in);
    MapMat dw_m(g.w[li].data(), l.out, l.in);
    MapVec db_m(g.b[li].data(), l.out);

    dw_m.noalias() += delta.transpose() * act_m;
    db_m.noalias() += delta.colwise().sum().transpose();

    if (li > 0) {
      RowMat d_act(n, l.in);
      d_act.noalias() = delta * w_m;
      // hidden activation of zero means the ReLU was off
      d_act = (act_m.array() > 0.0).select(d_act, 0.0);
      delta.swap(d_act);
    } else if (d_in) {
      MapMat(d_in, n, l.in).noalias() = delta * w_m;
    }
  }
}

void Mlp::collect_blocks(const std::string& prefix, std::vector<NamedBlock>& out) {
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    Layer& l = layers_[li];
    out.push_back({prefix + "/w" + std::to_string(li),
                   {static_cast<std::size_t>(l.out), static_cast<std::size_t>(l.in)},
                   l.w.data(), l.w.size()});
    out.push_back({prefix + "/b" + std::to_string(li), {static_cast<std::size_t>(l.out)},
                   l.b.data(), l.b.size()});
  }
}

void Mlp::collect_grad_blocks(const std::string& prefix, Grads& g, const Mlp& shape,
                              std::vector<NamedBlock>& out) {
  for (std::size_t li = 0; li < g.w.size(); ++li) {
    const Layer& l = shape.layers()[li];
    out.push_back({prefix + "/w" + std::to_string(li),
                   {static_cast<std::size_t>(l.out), static_cast<std::size_t>(l.in)},
                   g.w[li].data(), g.w[li].size()});
    out.push_back({prefix + "/b" + std::to_string(li), {static_cast<std::size_t>(l.out)},
                   g.b[li].data(), g.b[li].size()});
  }
}

}  // namespace cityprior
