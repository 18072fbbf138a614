#include "cityprior/extract.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "cityprior/errors.hpp"
#include "cityprior/threading.hpp"

namespace cityprior {

namespace {

constexpr char kPriorMagic[4] = {'P', 'S', 'P', 'V'};
constexpr uint32_t kPriorVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  is.read(reinterpret_cast<char*>(b), sizeof(T));
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

void write_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_le<uint32_t>(os, bits);
}

float read_f32(std::istream& is) {
  uint32_t bits = read_le<uint32_t>(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

PriorVoxelGrid::CellKey PriorVoxelGrid::key_of(const Vec3& p) const {
  CellKey k;
  k.x = static_cast<int32_t>(std::floor((p[0] - origin[0]) / voxel_size));
  k.y = static_cast<int32_t>(std::floor((p[1] - origin[1]) / voxel_size));
  k.z = static_cast<int32_t>(std::floor((p[2] - origin[2]) / voxel_size));
  return k;
}

Vec3 PriorVoxelGrid::cell_center(const CellKey& k) const {
  return origin + voxel_size * Vec3(k.x + 0.5, k.y + 0.5, k.z + 0.5);
}

void PriorVoxelGrid::insert(const Vec3& p, const Eigen::VectorXd& feature) {
  Cell& cell = cells[key_of(p)];
  if (cell.weight == 0.0) {
    cell.feature_sum = feature;
    cell.weight = 1.0;
  } else {
    cell.feature_sum += feature;
    cell.weight += 1.0;
  }
}

std::optional<SurfacePoint> extract_surface(const TileField& tile, const Ray& ray,
                                            const ProposalConfig& cfg) {
  RayRenderer renderer(tile, cfg);
  // deterministic sampling: extraction is a pure function of the tile
  const RaySampleBatch& fb = renderer.render(ray, 0, false).final_batch;

  double cumulative = 0.0;
  for (int i = 0; i < fb.size(); ++i) {
    cumulative += fb.weights[i];
    if (cumulative > 0.5) {
      SurfacePoint sp;
      sp.position = ray.origin + fb.depths[i] * ray.direction;
      sp.feature = Eigen::Map<const Eigen::VectorXd>(
          fb.features.data() + static_cast<std::size_t>(i) * tile.config.feature_dim,
          tile.config.feature_dim);
      sp.video_id = ray.video_id;
      sp.pixel_row = ray.pixel_row;
      sp.pixel_col = ray.pixel_col;
      return sp;
    }
  }
  return std::nullopt;  // sky ray
}

std::vector<SurfacePoint> extract_tile(const TileField& tile,
                                       const std::vector<const CameraFrame*>& frames, int stride,
                                       const ProposalConfig& cfg, int threads) {
  if (stride < 1) throw DataError("extract_tile: stride must be >= 1");

  struct Work {
    const CameraFrame* frame;
    int row, col;
  };
  std::vector<Work> work;
  for (const CameraFrame* f : frames) {
    const int W = f->intrinsics.width;
    const std::size_t pixels = f->rgb.pixel_count();
    for (std::size_t p = 0; p < pixels; p += stride) {
      const int r = static_cast<int>(p / W), c = static_cast<int>(p % W);
      if (!f->is_dynamic(r, c)) work.push_back({f, r, c});
    }
  }

  const int workers = std::max(1, threads);
  std::vector<std::vector<SurfacePoint>> partial(workers);
  parallel_for(work.size(), workers, [&](int w, std::size_t begin, std::size_t end) {
    RayRenderer renderer(tile, cfg);
    for (std::size_t i = begin; i < end; ++i) {
      const Work& item = work[i];
      Ray ray = pixel_to_ray(*item.frame, item.row, item.col);
      const RaySampleBatch& fb = renderer.render(ray, 0, false).final_batch;
      double cumulative = 0.0;
      for (int s = 0; s < fb.size(); ++s) {
        cumulative += fb.weights[s];
        if (cumulative > 0.5) {
          SurfacePoint sp;
          sp.position = ray.origin + fb.depths[s] * ray.direction;
          sp.feature = Eigen::Map<const Eigen::VectorXd>(
              fb.features.data() + static_cast<std::size_t>(s) * tile.config.feature_dim,
              tile.config.feature_dim);
          sp.video_id = ray.video_id;
          sp.pixel_row = item.row;
          sp.pixel_col = item.col;
          partial[w].push_back(std::move(sp));
          break;
        }
      }
    }
  });

  std::vector<SurfacePoint> points;
  for (auto& part : partial)
    for (auto& sp : part) points.push_back(std::move(sp));
  return points;
}

PriorVoxelGrid voxel_downsample(const std::vector<SurfacePoint>& points, double voxel_size,
                                const Vec3& origin) {
  if (voxel_size <= 0.0) throw DataError("voxel_downsample: voxel_size must be positive");
  PriorVoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.origin = origin;
  grid.feature_dim = points.empty() ? 0 : static_cast<int>(points.front().feature.size());
  for (const SurfacePoint& sp : points) {
    if (static_cast<int>(sp.feature.size()) != grid.feature_dim)
      throw DataError("voxel_downsample: inconsistent feature dimensions");
    grid.insert(sp.position, sp.feature);
  }
  return grid;
}

PriorVoxelGrid merge_priors(const PriorVoxelGrid& a, const PriorVoxelGrid& b) {
  if (a.voxel_size != b.voxel_size || a.origin != b.origin)
    throw DataError("merge_priors: voxel size and origin must match");
  if (a.feature_dim != b.feature_dim && a.feature_dim != 0 && b.feature_dim != 0)
    throw DataError("merge_priors: feature dimensions must match");
  PriorVoxelGrid out = a;
  if (out.feature_dim == 0) out.feature_dim = b.feature_dim;
  for (const auto& [key, cell] : b.cells) {
    auto it = out.cells.find(key);
    if (it == out.cells.end()) {
      out.cells[key] = cell;
    } else {
      it->second.feature_sum += cell.feature_sum;
      it->second.weight += cell.weight;
    }
  }
  return out;
}

void save_prior(const PriorVoxelGrid& grid, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write prior file: " + path);
  os.write(kPriorMagic, 4);
  write_le<uint32_t>(os, kPriorVersion);
  write_f32(os, static_cast<float>(grid.voxel_size));
  for (int a = 0; a < 3; ++a) write_f32(os, static_cast<float>(grid.origin[a]));
  write_le<uint32_t>(os, static_cast<uint32_t>(grid.feature_dim));
  write_le<uint64_t>(os, grid.cells.size());
  for (const auto& [key, cell] : grid.cells) {
    write_le<uint32_t>(os, static_cast<uint32_t>(key.x));
    write_le<uint32_t>(os, static_cast<uint32_t>(key.y));
    write_le<uint32_t>(os, static_cast<uint32_t>(key.z));
    Eigen::VectorXd mean = cell.mean();
    for (int d = 0; d < grid.feature_dim; ++d) write_f32(os, static_cast<float>(mean[d]));
    write_f32(os, static_cast<float>(cell.weight));
  }
  if (!os) throw DataError("prior write failed: " + path);
}

PriorVoxelGrid load_prior(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("prior file not found: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kPriorMagic, 4) != 0)
    throw DataError("bad prior-file magic in " + path);
  uint32_t version = read_le<uint32_t>(is);
  if (version != kPriorVersion)
    throw DataError("unsupported prior-file version " + std::to_string(version) + " in " + path);

  PriorVoxelGrid grid;
  grid.voxel_size = read_f32(is);
  for (int a = 0; a < 3; ++a) grid.origin[a] = read_f32(is);
  grid.feature_dim = static_cast<int>(read_le<uint32_t>(is));
  uint64_t count = read_le<uint64_t>(is);
  if (!is) throw DataError("truncated prior header in " + path);

  for (uint64_t i = 0; i < count; ++i) {
    PriorVoxelGrid::CellKey key;
    key.x = static_cast<int32_t>(read_le<uint32_t>(is));
    key.y = static_cast<int32_t>(read_le<uint32_t>(is));
    key.z = static_cast<int32_t>(read_le<uint32_t>(is));
    PriorVoxelGrid::Cell cell;
    Eigen::VectorXd mean(grid.feature_dim);
    for (int d = 0; d < grid.feature_dim; ++d) mean[d] = read_f32(is);
    cell.weight = read_f32(is);
    // mean * integer count is exact in double, so a save/load/save round
    // trip reproduces the file bytes
    cell.feature_sum = mean * cell.weight;
    if (!is) throw DataError("truncated prior file: " + path);
    grid.cells[key] = std::move(cell);
  }
  return grid;
}

std::vector<RegionCell> query_region(const PriorVoxelGrid& grid, const Vec3& center,
                                     const Vec3& half_extents, double yaw) {
  if ((half_extents.array() <= 0.0).any())
    throw DataError("query_region: half extents must be positive");
  const double c = std::cos(yaw), s = std::sin(yaw);
  std::vector<RegionCell> out;
  for (const auto& [key, cell] : grid.cells) {
    Vec3 world = grid.cell_center(key);
    Vec3 rel = world - center;
    // rotate by -yaw about z into the ego frame
    Vec3 ego(c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]);
    if (std::abs(ego[0]) <= half_extents[0] && std::abs(ego[1]) <= half_extents[1] &&
        std::abs(ego[2]) <= half_extents[2]) {
      out.push_back({ego, cell.mean(), cell.weight});
    }
  }
  return out;
}

}  // namespace cityprior
