#include "neat/mesher.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "neat/serialize.hpp"

namespace neat::mesh {
namespace {

#include "mc_tables.inl"

constexpr int kCornerOffset[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};
constexpr int kEdgeCorner[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(std::size_t(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[std::size_t(a)] != a) {
      parent[std::size_t(a)] = parent[std::size_t(parent[std::size_t(a)])];
      a = parent[std::size_t(a)];
    }
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::size_t(std::max(a, b))] = std::min(a, b);
  }
};

}  // namespace

Vec3 ScalarGrid::spacing() const {
  return Vec3((bound_max[0] - bound_min[0]) / (nx - 1),
              (bound_max[1] - bound_min[1]) / (ny - 1),
              (bound_max[2] - bound_min[2]) / (nz - 1));
}

Vec3 ScalarGrid::lattice_point(int ix, int iy, int iz) const {
  const Vec3 h = spacing();
  return Vec3(bound_min[0] + ix * h[0], bound_min[1] + iy * h[1], bound_min[2] + iz * h[2]);
}

void ScalarGrid::validate() const {
  if (nx < 2 || ny < 2 || nz < 2)
    throw SchemaError("grid: resolution must be at least 2 per axis");
  for (int a = 0; a < 3; ++a)
    if (!(bound_max[a] > bound_min[a]))
      throw SchemaError("grid: bounds are degenerate along axis " + std::to_string(a));
  if (f.size() != size() || validity.size() != size())
    throw SchemaError("grid: sample count does not match the resolution");
}

void TriangleMesh::validate() const {
  const int n = int(vertices.size());
  for (const auto& t : triangles)
    for (int k = 0; k < 3; ++k)
      if (t[std::size_t(k)] < 0 || t[std::size_t(k)] >= n)
        throw SchemaError("mesh: triangle index out of range");
}

ScalarGrid evaluate_grid(const fields::FieldSet& fs, std::array<int, 3> resolution,
                         const Vec3& bound_min, const Vec3& bound_max, int threads) {
  if (threads < 1) throw SchemaError("evaluate_grid: threads must be positive");
  ScalarGrid g;
  g.nx = resolution[0];
  g.ny = resolution[1];
  g.nz = resolution[2];
  g.bound_min = bound_min;
  g.bound_max = bound_max;
  g.f = VecX::Zero(std::max<std::int64_t>(g.nx * std::int64_t(g.ny) * g.nz, 0));
  g.validity = g.f;
  g.validate();

  // One z-slab per work item; slabs touch disjoint ranges of f/validity, so
  // the result does not depend on the thread count.
  std::vector<std::int64_t> slab_warnings(std::size_t(g.nz), 0);
  std::atomic<int> next{0};
  auto worker = [&]() {
    const std::int64_t slab = std::int64_t(g.nx) * g.ny;
    Mat P(3, slab);
    for (;;) {
      const int iz = next.fetch_add(1);
      if (iz >= g.nz) return;
      for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix)
          P.col(ix + std::int64_t(g.nx) * iy) = g.lattice_point(ix, iy, iz);
      const VecX fv = fs.sdf(P);
      const VecX vv = fs.validity(P);
      const std::int64_t base = slab * iz;
      for (std::int64_t k = 0; k < slab; ++k) {
        Scalar fk = fv[k];
        Scalar vk = vv[k];
        if (!std::isfinite(fk) || !std::isfinite(vk)) {
          fk = std::numeric_limits<Scalar>::quiet_NaN();
          vk = 0.0;
          slab_warnings[std::size_t(iz)]++;
        }
        g.f[base + k] = fk;
        g.validity[base + k] = vk;
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const std::int64_t w : slab_warnings) g.nan_warnings += w;
  return g;
}

ScalarGrid analytic_grid(const fields::AnalyticScene& scene, std::array<int, 3> resolution,
                         const Vec3& bound_min, const Vec3& bound_max) {
  ScalarGrid g;
  g.nx = resolution[0];
  g.ny = resolution[1];
  g.nz = resolution[2];
  g.bound_min = bound_min;
  g.bound_max = bound_max;
  g.f = VecX::Zero(std::max<std::int64_t>(std::int64_t(g.nx) * g.ny * g.nz, 0));
  g.validity = g.f;
  g.validate();
  for (int iz = 0; iz < g.nz; ++iz)
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix) {
        const Vec3 p = g.lattice_point(ix, iy, iz);
        const std::int64_t i = g.index(ix, iy, iz);
        g.f[i] = scene.sdf(p);
        g.validity[i] = scene.valid(p) ? 1.0 : 0.0;
      }
  return g;
}

ScalarGrid mask_grid(ScalarGrid grid, Scalar threshold) {
  grid.validate();
  for (std::int64_t i = 0; i < grid.size(); ++i)
    if (grid.validity[i] < threshold) grid.f[i] = std::numeric_limits<Scalar>::quiet_NaN();
  return grid;
}

TriangleMesh marching_cubes(const ScalarGrid& g, Scalar isolevel) {
  g.validate();
  const std::int64_t sx = 1, sy = g.nx, sz = std::int64_t(g.nx) * g.ny;
  const std::int64_t corner_stride[3] = {sx, sy, sz};

  // Pass 1: walk cells in fixed z,y,x order and record triangles as triples
  // of global edge ids.  The id of the edge leaving lattice point p along
  // axis a is 3*index(p)+a, a function of the grid alone.
  std::vector<std::array<std::int64_t, 3>> tri_edges;
  for (int cz = 0; cz + 1 < g.nz; ++cz)
    for (int cy = 0; cy + 1 < g.ny; ++cy)
      for (int cx = 0; cx + 1 < g.nx; ++cx) {
        const std::int64_t base = g.index(cx, cy, cz);
        Scalar corner[8];
        bool skip = false;
        int case_index = 0;
        for (int i = 0; i < 8; ++i) {
          const std::int64_t idx = base + kCornerOffset[i][0] * sx +
                                   kCornerOffset[i][1] * sy + kCornerOffset[i][2] * sz;
          corner[i] = g.f[idx];
          if (!std::isfinite(corner[i])) {
            skip = true;  // masked cell: contributes no surface
            break;
          }
          if (corner[i] < isolevel) case_index |= 1 << i;
        }
        if (skip || kCaseEdges[case_index] == 0) continue;

        std::int64_t edge_id[12];
        for (int e = 0; e < 12; ++e) {
          if (!(kCaseEdges[case_index] & (1 << e))) continue;
          const int* a = kCornerOffset[kEdgeCorner[e][0]];
          const int* b = kCornerOffset[kEdgeCorner[e][1]];
          int axis = 0;
          while (a[axis] == b[axis]) ++axis;
          const std::int64_t lo = base + std::min(a[0], b[0]) * sx +
                                  std::min(a[1], b[1]) * sy + std::min(a[2], b[2]) * sz;
          edge_id[e] = 3 * lo + axis;
        }
        const std::int8_t* tris = kCaseTriangles[case_index];
        for (int k = 0; tris[k] >= 0; k += 3)
          tri_edges.push_back({edge_id[tris[k]], edge_id[tris[k + 1]], edge_id[tris[k + 2]]});
      }

  // Pass 2: number vertices by sorted global edge id and interpolate each
  // crossing once, from the lower lattice corner toward the upper.
  std::vector<std::int64_t> ids;
  ids.reserve(tri_edges.size() * 3);
  for (const auto& t : tri_edges) ids.insert(ids.end(), t.begin(), t.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  TriangleMesh out;
  out.vertices.reserve(ids.size());
  const Vec3 h = g.spacing();
  for (const std::int64_t id : ids) {
    const int axis = int(id % 3);
    const std::int64_t lo = id / 3;
    const Scalar flo = g.f[lo];
    const Scalar fhi = g.f[lo + corner_stride[axis]];
    Scalar t = 0.5;  // equal-value fallback; crossing edges always have flo != fhi
    if (fhi != flo) t = std::clamp((isolevel - flo) / (fhi - flo), 0.0, 1.0);
    const int ix = int(lo % g.nx);
    const int iy = int((lo / g.nx) % g.ny);
    const int iz = int(lo / (std::int64_t(g.nx) * g.ny));
    Vec3 p = g.lattice_point(ix, iy, iz);
    p[axis] += t * h[axis];
    out.vertices.push_back(p);
  }

  // Pass 3: resolve indices and drop degenerate (zero-area) triangles.
  for (const auto& te : tri_edges) {
    std::array<int, 3> tri;
    for (int k = 0; k < 3; ++k)
      tri[std::size_t(k)] =
          int(std::lower_bound(ids.begin(), ids.end(), te[std::size_t(k)]) - ids.begin());
    const Vec3& a = out.vertices[std::size_t(tri[0])];
    const Vec3& b = out.vertices[std::size_t(tri[1])];
    const Vec3& c = out.vertices[std::size_t(tri[2])];
    if (0.5 * (b - a).cross(c - a).norm() <= 1e-12) continue;
    out.triangles.push_back(tri);
  }

  // Pass 4: compact to referenced vertices (degenerate drops may orphan some).
  std::vector<int> remap(out.vertices.size(), -1);
  int kept = 0;
  for (const auto& t : out.triangles)
    for (const int v : t)
      if (remap[std::size_t(v)] < 0) remap[std::size_t(v)] = kept++;
  std::vector<Vec3> verts(static_cast<std::size_t>(kept));
  for (std::size_t v = 0; v < out.vertices.size(); ++v)
    if (remap[v] >= 0) verts[std::size_t(remap[v])] = out.vertices[v];
  for (auto& t : out.triangles)
    for (int& v : t) v = remap[std::size_t(v)];
  out.vertices = std::move(verts);
  return out;
}

MeshStats mesh_stats(const TriangleMesh& mesh) {
  mesh.validate();
  MeshStats s;
  s.triangle_count = std::int64_t(mesh.triangles.size());
  if (mesh.triangles.empty()) return s;

  std::vector<std::pair<int, int>> edges;
  edges.reserve(mesh.triangles.size() * 3);
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) {
      const int a = t[std::size_t(k)], b = t[std::size_t((k + 1) % 3)];
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  std::sort(edges.begin(), edges.end());

  const int nv = int(mesh.vertices.size());
  std::vector<char> referenced(std::size_t(nv), 0);
  for (const auto& t : mesh.triangles)
    for (const int v : t) referenced[std::size_t(v)] = 1;
  for (const char r : referenced) s.vertex_count += r;

  UnionFind surface(nv), boundary(nv);
  std::vector<char> on_boundary(std::size_t(nv), 0);
  for (std::size_t i = 0; i < edges.size();) {
    std::size_t j = i;
    while (j < edges.size() && edges[j] == edges[i]) ++j;
    s.edge_count++;
    surface.unite(edges[i].first, edges[i].second);
    if (j - i == 1) {  // used by exactly one triangle
      s.boundary_edge_count++;
      boundary.unite(edges[i].first, edges[i].second);
      on_boundary[std::size_t(edges[i].first)] = 1;
      on_boundary[std::size_t(edges[i].second)] = 1;
    }
    i = j;
  }

  std::vector<char> seen_surface(std::size_t(nv), 0), seen_boundary(std::size_t(nv), 0);
  for (int v = 0; v < nv; ++v) {
    if (referenced[std::size_t(v)]) {
      const int root = surface.find(v);
      if (!seen_surface[std::size_t(root)]) {
        seen_surface[std::size_t(root)] = 1;
        s.connected_components++;
      }
    }
    if (on_boundary[std::size_t(v)]) {
      const int root = boundary.find(v);
      if (!seen_boundary[std::size_t(root)]) {
        seen_boundary[std::size_t(root)] = 1;
        s.boundary_loop_count++;
      }
    }
  }
  s.euler_characteristic = s.vertex_count - s.edge_count + s.triangle_count;
  return s;
}

void export_obj(const TriangleMesh& mesh, const std::string& path) {
  mesh.validate();
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot open '" + path + "' for writing");
  char line[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", v[0], v[1], v[2]);
    out << line;
  }
  for (const auto& t : mesh.triangles) {
    std::snprintf(line, sizeof(line), "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out << line;
  }
  out.flush();
  if (!out) throw SchemaError("failed writing '" + path + "'");
}

TriangleMesh import_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  TriangleMesh mesh;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v[0] >> v[1] >> v[2])) throw SchemaError(where + ": malformed vertex line");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> t{};
      std::string tok;
      for (int k = 0; k < 3; ++k) {
        if (!(ss >> tok)) throw SchemaError(where + ": face needs three indices");
        const char* end = tok.data() + tok.size();
        auto [p, ec] = std::from_chars(tok.data(), end, t[std::size_t(k)]);
        if (ec != std::errc() || p != end)
          throw SchemaError(where + ": face index '" + tok + "' is not a plain integer");
        t[std::size_t(k)] -= 1;  // OBJ is 1-indexed
      }
      std::string extra;
      if (ss >> extra) throw SchemaError(where + ": only triangles are supported");
      mesh.triangles.push_back(t);
    } else {
      throw SchemaError(where + ": unsupported OBJ element '" + tag + "'");
    }
  }
  mesh.validate();
  return mesh;
}

namespace {

void write_f32(std::ofstream& out, const VecX& v) {
  for (std::int64_t i = 0; i < v.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(float(v[i]));
    const char bytes[4] = {char(u & 0xff), char((u >> 8) & 0xff), char((u >> 16) & 0xff),
                           char((u >> 24) & 0xff)};
    out.write(bytes, 4);
  }
}

VecX read_f32(std::ifstream& in, std::int64_t n, const std::string& path) {
  VecX v(n);
  unsigned char bytes[4];
  for (std::int64_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) throw SchemaError("volume file '" + path + "' is truncated");
    const std::uint32_t u = std::uint32_t(bytes[0]) | (std::uint32_t(bytes[1]) << 8) |
                            (std::uint32_t(bytes[2]) << 16) | (std::uint32_t(bytes[3]) << 24);
    v[i] = Scalar(std::bit_cast<float>(u));
  }
  return v;
}

}  // namespace

void write_grid(const ScalarGrid& grid, const std::string& path) {
  grid.validate();
  const std::filesystem::path manifest(path);
  const std::string stem = manifest.stem().string();
  const std::filesystem::path volume = manifest.parent_path() / (stem + ".f32");

  Json j;
  j["format"] = "neat-grid-1";
  j["resolution"] = {grid.nx, grid.ny, grid.nz};
  j["bound_min"] = {grid.bound_min[0], grid.bound_min[1], grid.bound_min[2]};
  j["bound_max"] = {grid.bound_max[0], grid.bound_max[1], grid.bound_max[2]};
  j["nan_warnings"] = grid.nan_warnings;
  j["data"] = volume.filename().string();
  save_json_file(path, j);

  std::ofstream out(volume, std::ios::binary);
  if (!out) throw SchemaError("cannot open '" + volume.string() + "' for writing");
  write_f32(out, grid.f);
  write_f32(out, grid.validity);
  out.flush();
  if (!out) throw SchemaError("failed writing '" + volume.string() + "'");
}

ScalarGrid read_grid(const std::string& path) {
  const Json j = load_json_file(path);
  require_keys(j, {"format", "resolution", "bound_min", "bound_max", "nan_warnings", "data"},
               "grid manifest");
  if (j.at("format") != "neat-grid-1")
    throw SchemaError("grid manifest: unsupported format '" +
                      j.at("format").get<std::string>() + "'");
  ScalarGrid g;
  try {
    g.nx = j.at("resolution").at(0).get<int>();
    g.ny = j.at("resolution").at(1).get<int>();
    g.nz = j.at("resolution").at(2).get<int>();
    for (int a = 0; a < 3; ++a) {
      g.bound_min[a] = j.at("bound_min").at(std::size_t(a)).get<Scalar>();
      g.bound_max[a] = j.at("bound_max").at(std::size_t(a)).get<Scalar>();
    }
    g.nan_warnings = j.at("nan_warnings").get<std::int64_t>();
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("grid manifest: ") + e.what());
  }
  const std::filesystem::path volume =
      std::filesystem::path(path).parent_path() / j.at("data").get<std::string>();
  std::ifstream in(volume, std::ios::binary);
  if (!in) throw SchemaError("cannot open '" + volume.string() + "'");
  g.f = read_f32(in, g.nx * std::int64_t(g.ny) * g.nz, volume.string());
  g.validity = read_f32(in, g.nx * std::int64_t(g.ny) * g.nz, volume.string());
  g.validate();
  return g;
}

}  // namespace neat::mesh
