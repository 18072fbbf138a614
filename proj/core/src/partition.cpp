#include "cityprior/partition.hpp"

#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "cityprior/errors.hpp"
#include "cityprior/kmeans.hpp"
#include "cityprior/rng.hpp"

using json = nlohmann::json;

namespace cityprior {

std::vector<std::size_t> TilePlan::frames_of_tile(int tile) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] == tile) out.push_back(i);
  return out;
}

TilePlan plan_tiles(const DatasetManifest& manifest, int num_tiles, int subfields_per_tile,
                    uint64_t seed) {
  if (num_tiles < 1) throw DataError("plan_tiles: num_tiles must be >= 1");
  if (subfields_per_tile < 1) throw DataError("plan_tiles: subfields_per_tile must be >= 1");
  if (manifest.frames.empty()) throw DataError("plan_tiles: manifest has no frames");

  std::vector<Vec3> positions;
  positions.reserve(manifest.frames.size());
  for (const CameraFrame& f : manifest.frames) positions.push_back(f.pose.translation);

  KMeansResult tiles = kmeans(positions, num_tiles, seed);

  TilePlan plan;
  plan.tile_centroids = tiles.centroids;
  plan.assignments.assign(positions.size(), 0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    // nearest final centroid, ties to the lowest index
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < num_tiles; ++j) {
      double d = (positions[i] - plan.tile_centroids[j]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    plan.assignments[i] = best;
  }

  plan.subfield_centroids.resize(num_tiles);
  for (int t = 0; t < num_tiles; ++t) {
    std::vector<Vec3> members;
    for (std::size_t i = 0; i < positions.size(); ++i)
      if (plan.assignments[i] == t) members.push_back(positions[i]);
    if (members.empty()) {
      plan.subfield_centroids[t] = {plan.tile_centroids[t]};
      continue;
    }
    int k = std::min<int>(subfields_per_tile, static_cast<int>(members.size()));
    KMeansResult sub = kmeans(members, k, Rng::mix(seed, t + 1));
    plan.subfield_centroids[t] = sub.centroids;
  }
  return plan;
}

void save_tile_plan(const TilePlan& plan, const std::string& path) {
  json doc;
  auto vec3 = [](const Vec3& v) { return json::array({v[0], v[1], v[2]}); };
  doc["tile_centroids"] = json::array();
  for (const Vec3& c : plan.tile_centroids) doc["tile_centroids"].push_back(vec3(c));
  doc["subfield_centroids"] = json::array();
  for (const auto& tile : plan.subfield_centroids) {
    json list = json::array();
    for (const Vec3& c : tile) list.push_back(vec3(c));
    doc["subfield_centroids"].push_back(std::move(list));
  }
  doc["assignments"] = plan.assignments;

  std::ofstream os(path);
  if (!os) throw DataError("cannot write tile plan: " + path);
  os << doc.dump(2) << "\n";
}

TilePlan load_tile_plan(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("tile plan not found: " + path);
  json doc;
  try {
    is >> doc;
  } catch (const json::exception& e) {
    throw DataError("tile plan parse error: " + std::string(e.what()));
  }

  TilePlan plan;
  try {
    auto vec3 = [](const json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); };
    for (const auto& c : doc.at("tile_centroids")) plan.tile_centroids.push_back(vec3(c));
    for (const auto& tile : doc.at("subfield_centroids")) {
      std::vector<Vec3> list;
      for (const auto& c : tile) list.push_back(vec3(c));
      plan.subfield_centroids.push_back(std::move(list));
    }
    plan.assignments = doc.at("assignments").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw DataError("tile plan field error: " + std::string(e.what()));
  }
  if (plan.tile_centroids.empty() || plan.subfield_centroids.size() != plan.tile_centroids.size())
    throw DataError("tile plan is inconsistent");
  for (const auto& list : plan.subfield_centroids)
    if (list.empty()) throw DataError("tile plan has a tile without sub-field centroids");
  for (int a : plan.assignments)
    if (a < 0 || a >= plan.num_tiles()) throw DataError("tile plan assignment out of range");
  return plan;
}

}  // namespace cityprior
