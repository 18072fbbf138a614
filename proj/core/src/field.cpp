#include "cityprior/field.hpp"

#include <algorithm>
#include <cstring>

#include <nlohmann/json.hpp>

#include "cityprior/errors.hpp"

using json = nlohmann::json;

namespace cityprior {

int TileField::embedding_index(int vid) const {
  auto it = std::lower_bound(video_ids.begin(), video_ids.end(), vid);
  if (it == video_ids.end() || *it != vid)
    throw DataError("unknown video id: " + std::to_string(vid));
  return static_cast<int>(it - video_ids.begin());
}

TileField make_tile_field(const TileFieldConfig& config, const std::vector<Vec3>& subfield_centroids,
                          const std::vector<int>& video_ids, const Aabb& bounding_box,
                          uint64_t seed) {
  if (subfield_centroids.empty()) throw DataError("tile field needs at least one sub-field centroid");
  if (video_ids.empty()) throw DataError("tile field needs at least one video id");
  if (!bounding_box.valid()) throw DataError("tile bounding box is invalid");

  TileField tile;
  tile.config = config;
  tile.bounding_box = bounding_box;
  tile.config.main_grid.bounding_box = bounding_box;
  tile.config.proposal_grid.bounding_box = bounding_box;

  tile.video_ids = video_ids;
  std::sort(tile.video_ids.begin(), tile.video_ids.end());
  tile.video_ids.erase(std::unique(tile.video_ids.begin(), tile.video_ids.end()), tile.video_ids.end());

  Rng rng(seed);
  const int hash_dim = config.main_grid.num_levels * config.main_grid.features_per_level;
  const int prop_dim = config.proposal_grid.num_levels * config.proposal_grid.features_per_level;
  const int sh_d = sh_dim(config.sh_degree);
  const int h = config.hidden_width;
  const int ph = config.proposal_hidden_width;

  for (const Vec3& centroid : subfield_centroids) {
    SubField sf;
    sf.centroid = centroid;
    sf.hash_grid = HashGrid(tile.config.main_grid, rng);
    sf.trunk = Mlp({hash_dim, h, h, 1 + config.g_dim});
    sf.color_head = Mlp({config.g_dim + sh_d + config.embedding_dim, h, h, 3});
    sf.feature_head = Mlp({config.g_dim, h, h, config.feature_dim});
    sf.trunk.init_kaiming(rng);
    sf.color_head.init_kaiming(rng);
    sf.feature_head.init_kaiming(rng);
    tile.subfields.push_back(std::move(sf));
  }

  for (int p = 0; p < config.num_proposal_stages; ++p) {
    ProposalField pf;
    pf.hash_grid = HashGrid(tile.config.proposal_grid, rng);
    pf.trunk = Mlp({prop_dim, ph, ph, 1});
    pf.trunk.init_kaiming(rng);
    tile.proposals.push_back(std::move(pf));
  }

  tile.sky = Mlp({sh_d + config.embedding_dim, h, h, 3 + config.feature_dim});
  tile.sky.init_kaiming(rng);

  tile.video_embeddings.assign(tile.video_ids.size() * static_cast<std::size_t>(config.embedding_dim), 0.0);
  return tile;
}

TileGrads TileGrads::zeros_like(const TileField& tile) {
  TileGrads g;
  for (const SubField& sf : tile.subfields) {
    SubFieldGrads sg;
    sg.hash = sf.hash_grid.make_grads();
    sg.trunk = sf.trunk.make_grads();
    sg.color = sf.color_head.make_grads();
    sg.feature = sf.feature_head.make_grads();
    g.subfields.push_back(std::move(sg));
  }
  for (const ProposalField& pf : tile.proposals) {
    ProposalGrads pg;
    pg.hash = pf.hash_grid.make_grads();
    pg.trunk = pf.trunk.make_grads();
    g.proposals.push_back(std::move(pg));
  }
  g.sky = tile.sky.make_grads();
  g.video_embeddings.assign(tile.video_embeddings.size(), 0.0);
  return g;
}

std::vector<NamedBlock> collect_param_blocks(TileField& tile) {
  std::vector<NamedBlock> out;
  for (std::size_t s = 0; s < tile.subfields.size(); ++s) {
    SubField& sf = tile.subfields[s];
    const std::string p = "subfield" + std::to_string(s);
    sf.hash_grid.collect_blocks(p + "/hash", out);
    sf.trunk.collect_blocks(p + "/trunk", out);
    sf.color_head.collect_blocks(p + "/color", out);
    sf.feature_head.collect_blocks(p + "/feature", out);
  }
  for (std::size_t i = 0; i < tile.proposals.size(); ++i) {
    ProposalField& pf = tile.proposals[i];
    const std::string p = "proposal" + std::to_string(i);
    pf.hash_grid.collect_blocks(p + "/hash", out);
    pf.trunk.collect_blocks(p + "/trunk", out);
  }
  tile.sky.collect_blocks("sky", out);
  out.push_back({"video_embeddings",
                 {tile.video_ids.size(), static_cast<std::size_t>(tile.config.embedding_dim)},
                 tile.video_embeddings.data(), tile.video_embeddings.size()});
  return out;
}

std::vector<NamedBlock> collect_grad_blocks(TileGrads& grads, const TileField& shape) {
  std::vector<NamedBlock> out;
  for (std::size_t s = 0; s < grads.subfields.size(); ++s) {
    SubFieldGrads& sg = grads.subfields[s];
    const SubField& sf = shape.subfields[s];
    const std::string p = "subfield" + std::to_string(s);
    HashGrid::collect_grad_blocks(p + "/hash", sg.hash, sf.hash_grid, out);
    Mlp::collect_grad_blocks(p + "/trunk", sg.trunk, sf.trunk, out);
    Mlp::collect_grad_blocks(p + "/color", sg.color, sf.color_head, out);
    Mlp::collect_grad_blocks(p + "/feature", sg.feature, sf.feature_head, out);
  }
  for (std::size_t i = 0; i < grads.proposals.size(); ++i) {
    ProposalGrads& pg = grads.proposals[i];
    const ProposalField& pf = shape.proposals[i];
    const std::string p = "proposal" + std::to_string(i);
    HashGrid::collect_grad_blocks(p + "/hash", pg.hash, pf.hash_grid, out);
    Mlp::collect_grad_blocks(p + "/trunk", pg.trunk, pf.trunk, out);
  }
  Mlp::collect_grad_blocks("sky", grads.sky, shape.sky, out);
  out.push_back({"video_embeddings",
                 {shape.video_ids.size(), static_cast<std::size_t>(shape.config.embedding_dim)},
                 grads.video_embeddings.data(), grads.video_embeddings.size()});
  return out;
}

void SubFieldEval::forward(const SubField& sf, const TileField& tile, const Vec3* xs, int n,
                           const double* sh, int vid) {
  n_ = n;
  xs_.assign(xs, xs + n);
  const TileFieldConfig& cfg = tile.config;
  const int hash_dim = sf.hash_grid.output_dim();
  const int g_dim = cfg.g_dim;
  const int sh_d = tile.sh_dim();
  const int emb_d = cfg.embedding_dim;
  const int D = cfg.feature_dim;
  const double* emb = tile.embedding(vid);

  hash_out_.resize(static_cast<std::size_t>(n) * hash_dim);
  sf.hash_grid.encode(xs, n, hash_out_.data());

  const double* trunk_out = sf.trunk.forward(hash_out_.data(), n, trunk_ws_);
  raw_density_.resize(n);
  density_.resize(n);
  std::vector<double> g_feat(static_cast<std::size_t>(n) * g_dim);
  for (int i = 0; i < n; ++i) {
    const double* row = trunk_out + static_cast<std::size_t>(i) * (1 + g_dim);
    raw_density_[i] = row[0];
    density_[i] = density_activation(row[0]);
    std::memcpy(g_feat.data() + static_cast<std::size_t>(i) * g_dim, row + 1,
                sizeof(double) * g_dim);
  }

  // color head input: [g, sh(d), V(vid)] per sample
  const int cin = g_dim + sh_d + emb_d;
  std::vector<double> color_in(static_cast<std::size_t>(n) * cin);
  for (int i = 0; i < n; ++i) {
    double* row = color_in.data() + static_cast<std::size_t>(i) * cin;
    std::memcpy(row, g_feat.data() + static_cast<std::size_t>(i) * g_dim, sizeof(double) * g_dim);
    std::memcpy(row + g_dim, sh, sizeof(double) * sh_d);
    std::memcpy(row + g_dim + sh_d, emb, sizeof(double) * emb_d);
  }
  const double* color_raw = sf.color_head.forward(color_in.data(), n, color_ws_);
  color_.resize(static_cast<std::size_t>(n) * 3);
  for (std::size_t j = 0; j < color_.size(); ++j) color_[j] = logistic(color_raw[j]);

  const double* feat_out = sf.feature_head.forward(g_feat.data(), n, feature_ws_);
  feature_.assign(feat_out, feat_out + static_cast<std::size_t>(n) * D);
}

void SubFieldEval::backward(const SubField& sf, const TileField& tile, const double* d_density,
                            const double* d_color, const double* d_feature, SubFieldGrads& g,
                            double* d_emb) {
  const TileFieldConfig& cfg = tile.config;
  const int n = n_;
  const int g_dim = cfg.g_dim;
  const int sh_d = tile.sh_dim();
  const int emb_d = cfg.embedding_dim;
  const int D = cfg.feature_dim;

  std::vector<double> dg(static_cast<std::size_t>(n) * g_dim, 0.0);

  if (d_feature) {
    std::vector<double> d_in(static_cast<std::size_t>(n) * g_dim);
    sf.feature_head.backward(feature_ws_, d_feature, g.feature, d_in.data());
    for (std::size_t j = 0; j < dg.size(); ++j) dg[j] += d_in[j];
    (void)D;
  }

  if (d_color) {
    // through the sigmoid: d_raw = d_color * c (1 - c)
    std::vector<double> d_raw(static_cast<std::size_t>(n) * 3);
    for (std::size_t j = 0; j < d_raw.size(); ++j)
      d_raw[j] = d_color[j] * color_[j] * (1.0 - color_[j]);
    const int cin = g_dim + sh_d + emb_d;
    std::vector<double> d_in(static_cast<std::size_t>(n) * cin);
    sf.color_head.backward(color_ws_, d_raw.data(), g.color, d_in.data());
    for (int i = 0; i < n; ++i) {
      const double* row = d_in.data() + static_cast<std::size_t>(i) * cin;
      double* dgi = dg.data() + static_cast<std::size_t>(i) * g_dim;
      for (int k = 0; k < g_dim; ++k) dgi[k] += row[k];
      if (d_emb)
        for (int k = 0; k < emb_d; ++k) d_emb[k] += row[g_dim + sh_d + k];
    }
  }

  // trunk rows: [raw density, g]
  std::vector<double> d_trunk(static_cast<std::size_t>(n) * (1 + g_dim));
  for (int i = 0; i < n; ++i) {
    double* row = d_trunk.data() + static_cast<std::size_t>(i) * (1 + g_dim);
    row[0] = d_density ? d_density[i] * density_activation_grad(raw_density_[i]) : 0.0;
    std::memcpy(row + 1, dg.data() + static_cast<std::size_t>(i) * g_dim, sizeof(double) * g_dim);
  }
  std::vector<double> d_hash(hash_out_.size());
  sf.trunk.backward(trunk_ws_, d_trunk.data(), g.trunk, d_hash.data());
  sf.hash_grid.encode_backward(xs_.data(), n, d_hash.data(), g.hash);
}

void ProposalEval::forward(const ProposalField& pf, const Vec3* xs, int n) {
  n_ = n;
  xs_.assign(xs, xs + n);
  hash_out_.resize(static_cast<std::size_t>(n) * pf.hash_grid.output_dim());
  pf.hash_grid.encode(xs, n, hash_out_.data());
  const double* raw = pf.trunk.forward(hash_out_.data(), n, trunk_ws_);
  raw_density_.assign(raw, raw + n);
  density_.resize(n);
  for (int i = 0; i < n; ++i) density_[i] = density_activation(raw_density_[i]);
}

void ProposalEval::backward(const ProposalField& pf, const double* d_density, ProposalGrads& g) {
  std::vector<double> d_raw(n_);
  for (int i = 0; i < n_; ++i) d_raw[i] = d_density[i] * density_activation_grad(raw_density_[i]);
  std::vector<double> d_hash(hash_out_.size());
  pf.trunk.backward(trunk_ws_, d_raw.data(), g.trunk, d_hash.data());
  pf.hash_grid.encode_backward(xs_.data(), n_, d_hash.data(), g.hash);
}

void SkyEval::forward(const TileField& tile, const double* sh, int vid) {
  const int sh_d = tile.sh_dim();
  const int emb_d = tile.config.embedding_dim;
  const int D = tile.config.feature_dim;
  std::vector<double> in(sh_d + emb_d);
  std::memcpy(in.data(), sh, sizeof(double) * sh_d);
  std::memcpy(in.data() + sh_d, tile.embedding(vid), sizeof(double) * emb_d);
  const double* out = tile.sky.forward(in.data(), 1, ws_);
  for (int c = 0; c < 3; ++c) color_[c] = logistic(out[c]);
  feature_.resize(D);
  for (int k = 0; k < D; ++k) feature_[k] = out[3 + k];
}

void SkyEval::backward(const TileField& tile, const Vec3& d_color, const Eigen::VectorXd& d_feature,
                       Mlp::Grads& g, double* d_emb) {
  const int sh_d = tile.sh_dim();
  const int emb_d = tile.config.embedding_dim;
  const int D = tile.config.feature_dim;
  std::vector<double> d_out(3 + D);
  for (int c = 0; c < 3; ++c) d_out[c] = d_color[c] * color_[c] * (1.0 - color_[c]);
  for (int k = 0; k < D; ++k) d_out[3 + k] = d_feature.size() ? d_feature[k] : 0.0;
  std::vector<double> d_in(sh_d + emb_d);
  tile.sky.backward(ws_, d_out.data(), g, d_in.data());
  if (d_emb)
    for (int k = 0; k < emb_d; ++k) d_emb[k] += d_in[sh_d + k];
}

FieldSample query_subfield(const TileField& tile, int subfield_index, const Vec3& x, const Vec3& d,
                           int vid) {
  if (subfield_index < 0 || subfield_index >= static_cast<int>(tile.subfields.size()))
    throw DataError("sub-field index out of range");
  std::vector<double> sh(tile.sh_dim());
  sh_encode(d, tile.config.sh_degree, sh.data());
  SubFieldEval eval;
  eval.forward(tile.subfields[subfield_index], tile, &x, 1, sh.data(), vid);
  FieldSample s;
  s.density = eval.density()[0];
  for (int c = 0; c < 3; ++c) s.color[c] = eval.color()[c];
  s.feature = Eigen::Map<const Eigen::VectorXd>(eval.feature().data(), tile.config.feature_dim);
  return s;
}

std::pair<Vec3, Eigen::VectorXd> query_sky(const TileField& tile, const Vec3& d, int vid) {
  std::vector<double> sh(tile.sh_dim());
  sh_encode(d, tile.config.sh_degree, sh.data());
  SkyEval eval;
  eval.forward(tile, sh.data(), vid);
  return {eval.color(), eval.feature()};
}

namespace {

json grid_config_json(const HashGridConfig& g) {
  return json{{"num_levels", g.num_levels},
              {"min_resolution", g.min_resolution},
              {"max_resolution", g.max_resolution},
              {"features_per_level", g.features_per_level},
              {"table_capacity", g.table_capacity}};
}

HashGridConfig grid_config_from_json(const json& j) {
  HashGridConfig g;
  g.num_levels = j.at("num_levels").get<int>();
  g.min_resolution = j.at("min_resolution").get<int>();
  g.max_resolution = j.at("max_resolution").get<int>();
  g.features_per_level = j.at("features_per_level").get<int>();
  g.table_capacity = j.at("table_capacity").get<std::size_t>();
  return g;
}

}  // namespace

void save_tile_field(const TileField& tile, const std::string& path) {
  json header;
  header["format"] = "cityprior-tile";
  header["main_grid"] = grid_config_json(tile.config.main_grid);
  header["proposal_grid"] = grid_config_json(tile.config.proposal_grid);
  header["g_dim"] = tile.config.g_dim;
  header["hidden_width"] = tile.config.hidden_width;
  header["proposal_hidden_width"] = tile.config.proposal_hidden_width;
  header["sh_degree"] = tile.config.sh_degree;
  header["embedding_dim"] = tile.config.embedding_dim;
  header["feature_dim"] = tile.config.feature_dim;
  header["num_proposal_stages"] = tile.config.num_proposal_stages;
  header["bounding_box"] = {{"min", {tile.bounding_box.min[0], tile.bounding_box.min[1], tile.bounding_box.min[2]}},
                            {"max", {tile.bounding_box.max[0], tile.bounding_box.max[1], tile.bounding_box.max[2]}}};
  header["video_ids"] = tile.video_ids;
  header["centroids"] = json::array();
  for (const SubField& sf : tile.subfields)
    header["centroids"].push_back({sf.centroid[0], sf.centroid[1], sf.centroid[2]});

  // collect_param_blocks needs mutable access; serialization does not mutate
  auto blocks = collect_param_blocks(const_cast<TileField&>(tile));
  write_checkpoint(path, header.dump(), blocks);
}

TileField load_tile_field(const std::string& path) {
  Checkpoint ckpt = read_checkpoint(path);
  json header;
  try {
    header = json::parse(ckpt.header_json);
    if (header.value("format", "") != "cityprior-tile")
      throw DataError("not a tile checkpoint: " + path);

    TileFieldConfig cfg;
    cfg.main_grid = grid_config_from_json(header.at("main_grid"));
    cfg.proposal_grid = grid_config_from_json(header.at("proposal_grid"));
    cfg.g_dim = header.at("g_dim").get<int>();
    cfg.hidden_width = header.at("hidden_width").get<int>();
    cfg.proposal_hidden_width = header.at("proposal_hidden_width").get<int>();
    cfg.sh_degree = header.at("sh_degree").get<int>();
    cfg.embedding_dim = header.at("embedding_dim").get<int>();
    cfg.feature_dim = header.at("feature_dim").get<int>();
    cfg.num_proposal_stages = header.at("num_proposal_stages").get<int>();

    Aabb box;
    for (int a = 0; a < 3; ++a) {
      box.min[a] = header.at("bounding_box").at("min").at(a).get<double>();
      box.max[a] = header.at("bounding_box").at("max").at(a).get<double>();
    }
    std::vector<int> video_ids = header.at("video_ids").get<std::vector<int>>();
    std::vector<Vec3> centroids;
    for (const auto& c : header.at("centroids"))
      centroids.emplace_back(c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>());

    TileField tile = make_tile_field(cfg, centroids, video_ids, box, 0);
    auto blocks = collect_param_blocks(tile);
    load_into_blocks(ckpt, blocks);
    return tile;
  } catch (const json::exception& e) {
    throw DataError("tile checkpoint header error in " + path + ": " + e.what());
  }
}

}  // namespace cityprior
