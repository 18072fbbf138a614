#pragma once

#include <string>
#include <vector>

#include "cityprior/geometry.hpp"
#include "cityprior/hashgrid.hpp"
#include "cityprior/mlp.hpp"
#include "cityprior/params.hpp"
#include "cityprior/sh.hpp"

namespace cityprior {

// One point query: density (1/m), color in [0,1]^3, semantic feature.
struct FieldSample {
  double density = 0.0;
  Vec3 color = Vec3::Zero();
  Eigen::VectorXd feature;
};

struct TileFieldConfig {
  HashGridConfig main_grid;      // bounding box is set per tile on build
  HashGridConfig proposal_grid;
  int g_dim = 15;                // trunk geometry-feature width (trunk emits 1 + g_dim)
  int hidden_width = 64;
  int proposal_hidden_width = 64;
  int sh_degree = 4;
  int embedding_dim = 16;
  int feature_dim = 64;          // D, matches the dataset
  int num_proposal_stages = 2;
};

// Instant-NGP style sub-field: hash grid, trunk emitting (raw density, g),
// then a view/video conditioned color head and a direction-invariant
// feature head.
struct SubField {
  Vec3 centroid = Vec3::Zero();
  HashGrid hash_grid;
  Mlp trunk;         // hash_dim -> hidden -> hidden -> 1 + g_dim
  Mlp color_head;    // g_dim + sh_dim + emb_dim -> hidden -> hidden -> 3 (sigmoid outside)
  Mlp feature_head;  // g_dim -> hidden -> hidden -> D (linear)
};

// Density-only field used for importance sampling.
struct ProposalField {
  HashGrid hash_grid;
  Mlp trunk;  // hash_dim -> hidden -> hidden -> 1
};

struct TileField {
  TileFieldConfig config;
  Aabb bounding_box;
  std::vector<SubField> subfields;
  std::vector<ProposalField> proposals;
  Mlp sky;  // sh_dim + emb_dim -> hidden -> hidden -> 3 + D (sigmoid on rgb outside)
  std::vector<int> video_ids;          // sorted, unique
  std::vector<double> video_embeddings;  // num_videos x embedding_dim

  int sh_dim() const { return cityprior::sh_dim(config.sh_degree); }
  int embedding_index(int vid) const;  // throws DataError on unknown vid
  const double* embedding(int vid) const {
    return video_embeddings.data() + static_cast<std::size_t>(embedding_index(vid)) * config.embedding_dim;
  }
};

TileField make_tile_field(const TileFieldConfig& config, const std::vector<Vec3>& subfield_centroids,
                          const std::vector<int>& video_ids, const Aabb& bounding_box,
                          uint64_t seed);

// Gradient mirror of a TileField; block layout matches collect_param_blocks.
struct SubFieldGrads {
  HashGrid::Grads hash;
  Mlp::Grads trunk, color, feature;
};
struct ProposalGrads {
  HashGrid::Grads hash;
  Mlp::Grads trunk;
};
struct TileGrads {
  std::vector<SubFieldGrads> subfields;
  std::vector<ProposalGrads> proposals;
  Mlp::Grads sky;
  std::vector<double> video_embeddings;

  static TileGrads zeros_like(const TileField& tile);
};

std::vector<NamedBlock> collect_param_blocks(TileField& tile);
std::vector<NamedBlock> collect_grad_blocks(TileGrads& grads, const TileField& shape);

// Raw trunk output -> density. Softplus shifted so freshly initialized
// fields start near-transparent (sigma ~ 0.31).
inline double density_activation(double raw) { return softplus(raw - 1.0); }
inline double density_activation_grad(double raw) { return logistic(raw - 1.0); }

// Batched evaluation of one sub-field for samples that share a ray
// (one direction, one video). Keeps every intermediate needed for an exact
// backward pass.
class SubFieldEval {
 public:
  // sh: sh_dim values for the ray direction; vid must be registered.
  void forward(const SubField& sf, const TileField& tile, const Vec3* xs, int n,
               const double* sh, int vid);

  int count() const { return n_; }
  const std::vector<double>& density() const { return density_; }
  const std::vector<double>& color() const { return color_; }      // n x 3
  const std::vector<double>& feature() const { return feature_; }  // n x D

  // d_* may be null when a term contributes nothing. Accumulates parameter
  // gradients into g and the video-embedding gradient into d_emb.
  void backward(const SubField& sf, const TileField& tile, const double* d_density,
                const double* d_color, const double* d_feature, SubFieldGrads& g, double* d_emb);

 private:
  int n_ = 0;
  std::vector<Vec3> xs_;
  std::vector<double> hash_out_;
  Mlp::Workspace trunk_ws_, color_ws_, feature_ws_;
  std::vector<double> raw_density_;
  std::vector<double> density_, color_, feature_;
};

// Density-only evaluation of a proposal field.
class ProposalEval {
 public:
  void forward(const ProposalField& pf, const Vec3* xs, int n);
  const std::vector<double>& density() const { return density_; }
  void backward(const ProposalField& pf, const double* d_density, ProposalGrads& g);

 private:
  int n_ = 0;
  std::vector<Vec3> xs_;
  std::vector<double> hash_out_;
  Mlp::Workspace trunk_ws_;
  std::vector<double> raw_density_, density_;
};

// Direction + video conditioned sky appearance (one evaluation per ray).
class SkyEval {
 public:
  void forward(const TileField& tile, const double* sh, int vid);
  const Vec3& color() const { return color_; }
  const Eigen::VectorXd& feature() const { return feature_; }
  void backward(const TileField& tile, const Vec3& d_color, const Eigen::VectorXd& d_feature,
                Mlp::Grads& g, double* d_emb);

 private:
  Mlp::Workspace ws_;
  Vec3 color_;
  Eigen::VectorXd feature_;
};

// Spec-level single point queries.
FieldSample query_subfield(const TileField& tile, int subfield_index, const Vec3& x, const Vec3& d,
                           int vid);
std::pair<Vec3, Eigen::VectorXd> query_sky(const TileField& tile, const Vec3& d, int vid);

// Checkpoint round trip. The header holds the config, centroids, video ids
// and bounding box; tensors hold every learnable value.
void save_tile_field(const TileField& tile, const std::string& path);
TileField load_tile_field(const std::string& path);

}  // namespace cityprior
