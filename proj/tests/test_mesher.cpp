#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "neat/mesher.hpp"

#include <Eigen/Geometry>
#include "neat/serialize.hpp"

using namespace neat;
using mesh::ScalarGrid;
using mesh::TriangleMesh;
namespace stdfs = std::filesystem;

namespace {

constexpr Scalar kNaN = std::numeric_limits<Scalar>::quiet_NaN();

ScalarGrid lambda_grid(std::array<int, 3> res, const Vec3& bmin, const Vec3& bmax,
                       const std::function<Scalar(const Vec3&)>& f) {
  ScalarGrid g;
  g.nx = res[0];
  g.ny = res[1];
  g.nz = res[2];
  g.bound_min = bmin;
  g.bound_max = bmax;
  g.f = VecX::Zero(g.size());
  g.validity = VecX::Ones(g.size());
  for (int iz = 0; iz < g.nz; ++iz)
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix)
        g.f[g.index(ix, iy, iz)] = f(g.lattice_point(ix, iy, iz));
  return g;
}

// a vertex must sit on a lattice edge: two coordinates on the lattice, the
// third strictly inside one cell step
void check_on_lattice_edge(const ScalarGrid& g, const Vec3& v) {
  const Vec3 h = g.spacing();
  int off_lattice = 0;
  for (int a = 0; a < 3; ++a) {
    const Scalar u = (v[a] - g.bound_min[a]) / h[a];
    if (std::abs(u - std::round(u)) > 1e-9) ++off_lattice;
  }
  CHECK(off_lattice <= 1);
}

TriangleMesh two_triangle_quad() {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

}  // namespace

TEST_CASE("grid lattice covers the bounds") {
  const auto scene = fields::AnalyticScene::make(fields::SceneKind::Sphere);
  const ScalarGrid g = mesh::analytic_grid(scene, {2, 2, 2}, Vec3(-1, -2, 0), Vec3(1, 0, 3));
  CHECK(g.size() == 8);
  CHECK(g.lattice_point(0, 0, 0).isApprox(Vec3(-1, -2, 0)));
  CHECK(g.lattice_point(1, 1, 1).isApprox(Vec3(1, 0, 3)));
  CHECK(g.lattice_point(1, 0, 1).isApprox(Vec3(1, -2, 3)));
  // f holds the exact oracle distance at each corner
  CHECK(g.f[g.index(0, 0, 0)] == doctest::Approx(std::sqrt(5.0) - 0.5).epsilon(1e-12));

  SUBCASE("degenerate bounds rejected") {
    CHECK_THROWS_AS(mesh::analytic_grid(scene, {2, 2, 2}, Vec3(0, 0, 0), Vec3(1, 0, 1)),
                    SchemaError);
  }
  SUBCASE("resolution below 2 rejected") {
    CHECK_THROWS_AS(mesh::analytic_grid(scene, {1, 2, 2}, Vec3(-1, -1, -1), Vec3(1, 1, 1)),
                    SchemaError);
  }
}

TEST_CASE("neural grid evaluation") {
  fields::FieldSet fs(fields::FieldConfig::defaults());
  fields::geometric_init(fs, 0);

  SUBCASE("deterministic across thread counts, healthy validity unmasked") {
    const ScalarGrid g1 = mesh::evaluate_grid(fs, {17, 15, 13}, Vec3(-1, -1, -1), Vec3(1, 1, 1), 1);
    const ScalarGrid g3 = mesh::evaluate_grid(fs, {17, 15, 13}, Vec3(-1, -1, -1), Vec3(1, 1, 1), 3);
    CHECK((g1.f.array() == g3.f.array()).all());
    CHECK((g1.validity.array() == g3.validity.array()).all());
    CHECK(g1.nan_warnings == 0);
    // freshly initialized validity sits well above 0.5 everywhere: masking
    // is the identity
    const ScalarGrid masked = mesh::mask_grid(g1);
    CHECK((masked.f.array() == g1.f.array()).all());

    // the grid must transport field values untouched: re-evaluating a whole
    // slab directly reproduces the stored samples bit for bit
    const std::int64_t slab = 17 * 15;
    Mat P(3, slab);
    for (int iy = 0; iy < 15; ++iy)
      for (int ix = 0; ix < 17; ++ix) P.col(ix + 17 * iy) = g1.lattice_point(ix, iy, 6);
    const VecX direct = fs.sdf(P);
    CHECK((g1.f.segment(slab * 6, slab).array() == direct.array()).all());
  }
  SUBCASE("analytic signs are exact on the lattice") {
    const auto scene = fields::AnalyticScene::make(fields::SceneKind::Sphere);
    const ScalarGrid g = mesh::analytic_grid(scene, {32, 32, 32}, Vec3(-1, -1, -1), Vec3(1, 1, 1));
    int mismatches = 0;
    for (int iz = 0; iz < 32; ++iz)
      for (int iy = 0; iy < 32; ++iy)
        for (int ix = 0; ix < 32; ++ix)
          if (std::signbit(g.f[g.index(ix, iy, iz)]) !=
              std::signbit(scene.sdf(g.lattice_point(ix, iy, iz))))
            ++mismatches;
    CHECK(mismatches == 0);
  }
  SUBCASE("non-finite outputs become counted NaNs") {
    fs.params().values()[5] = kNaN;
    const ScalarGrid g = mesh::evaluate_grid(fs, {4, 4, 4}, Vec3(-1, -1, -1), Vec3(1, 1, 1), 2);
    CHECK(g.nan_warnings == 64);
    CHECK(g.f.array().isNaN().all());
  }
  SUBCASE("bad thread count") {
    CHECK_THROWS_AS(mesh::evaluate_grid(fs, {4, 4, 4}, Vec3(-1, -1, -1), Vec3(1, 1, 1), 0),
                    SchemaError);
  }
}

TEST_CASE("validity masking") {
  const auto scene = fields::AnalyticScene::make(fields::SceneKind::Sphere);
  ScalarGrid g = mesh::analytic_grid(scene, {8, 8, 8}, Vec3(-1, -1, -1), Vec3(1, 1, 1));

  SUBCASE("all-valid is identity") {
    const ScalarGrid m = mesh::mask_grid(g);
    CHECK((m.f.array() == g.f.array()).all());
  }
  SUBCASE("all-invalid erases everything") {
    g.validity.setZero();
    const ScalarGrid m = mesh::mask_grid(g);
    CHECK(m.f.array().isNaN().all());
  }
  SUBCASE("half-space mask lands exactly on the oracle region") {
    for (int iz = 0; iz < 8; ++iz)
      for (int iy = 0; iy < 8; ++iy)
        for (int ix = 0; ix < 8; ++ix)
          g.validity[g.index(ix, iy, iz)] = g.lattice_point(ix, iy, iz)[2] < 0.3 ? 1.0 : 0.0;
    const ScalarGrid m = mesh::mask_grid(g);
    for (int iz = 0; iz < 8; ++iz)
      for (int iy = 0; iy < 8; ++iy)
        for (int ix = 0; ix < 8; ++ix) {
          const bool erased = std::isnan(m.f[m.index(ix, iy, iz)]);
          CHECK(erased == (m.lattice_point(ix, iy, iz)[2] >= 0.3));
        }
  }
  SUBCASE("exactly-threshold points stay valid") {
    g.validity.setConstant(0.5);
    const ScalarGrid m = mesh::mask_grid(g);
    CHECK_FALSE(m.f.array().isNaN().any());
  }
}

TEST_CASE("marching cubes: closed sphere") {
  const auto scene = fields::AnalyticScene::make(fields::SceneKind::Sphere);
  const ScalarGrid g = mesh::analytic_grid(scene, {64, 64, 64}, Vec3(-1, -1, -1), Vec3(1, 1, 1));
  const TriangleMesh m = mesh::marching_cubes(g);
  REQUIRE(m.triangles.size() > 1000);

  const mesh::MeshStats s = mesh::mesh_stats(m);
  CHECK(s.boundary_edge_count == 0);
  CHECK(s.boundary_loop_count == 0);
  CHECK(s.euler_characteristic == 2);
  CHECK(s.connected_components == 1);
  CHECK(s.watertight());

  const Scalar cell_diag = g.spacing().norm();
  Scalar worst = 0.0;
  for (const Vec3& v : m.vertices) {
    worst = std::max(worst, std::abs(scene.sdf(v)));
    check_on_lattice_edge(g, v);
  }
  CHECK(worst <= cell_diag);
}

TEST_CASE("marching cubes: masked cut sphere is a disk") {
  const auto scene = fields::AnalyticScene::make(fields::SceneKind::CutSphere);
  const ScalarGrid g = mesh::mask_grid(
      mesh::analytic_grid(scene, {64, 64, 64}, Vec3(-1, -1, -1), Vec3(1, 1, 1)));
  const TriangleMesh m = mesh::marching_cubes(g);
  REQUIRE_FALSE(m.triangles.empty());

  const mesh::MeshStats s = mesh::mesh_stats(m);
  CHECK(s.boundary_edge_count > 0);
  CHECK(s.boundary_loop_count == 1);
  CHECK(s.euler_characteristic == 1);
  CHECK(s.connected_components == 1);
  CHECK_FALSE(s.watertight());

  // the kept part is the sphere below the cut plane (plus one masked cell of
  // slack); nothing above survives
  const Scalar ceiling = scene.cut_z + g.spacing()[2];
  for (const Vec3& v : m.vertices) CHECK(v[2] <= ceiling);
}

TEST_CASE("marching cubes: degenerate inputs") {
  SUBCASE("no crossing, no mesh") {
    const ScalarGrid g =
        lambda_grid({6, 6, 6}, Vec3(-1, -1, -1), Vec3(1, 1, 1), [](const Vec3&) { return 1.0; });
    const TriangleMesh m = mesh::marching_cubes(g);
    CHECK(m.vertices.empty());
    CHECK(m.triangles.empty());
  }
  SUBCASE("all-NaN grid yields an empty mesh, not an error") {
    const ScalarGrid g =
        lambda_grid({6, 6, 6}, Vec3(-1, -1, -1), Vec3(1, 1, 1), [](const Vec3&) { return kNaN; });
    const TriangleMesh m = mesh::marching_cubes(g);
    CHECK(m.triangles.empty());
  }
  SUBCASE("far-field NaN does not disturb the surface") {
    const auto scene = fields::AnalyticScene::make(fields::SceneKind::Sphere);
    const ScalarGrid clean =
        mesh::analytic_grid(scene, {32, 32, 32}, Vec3(-1, -1, -1), Vec3(1, 1, 1));
    ScalarGrid poked = clean;
    poked.f[poked.index(0, 0, 0)] = kNaN;  // corner cell, far from |p| = 0.5
    const TriangleMesh a = mesh::marching_cubes(clean);
    const TriangleMesh b = mesh::marching_cubes(poked);
    REQUIRE(a.vertices.size() == b.vertices.size());
    CHECK(a.triangles == b.triangles);
  }
  SUBCASE("surface-adjacent NaN opens a hole") {
    const auto scene = fields::AnalyticScene::make(fields::SceneKind::Sphere);
    ScalarGrid g = mesh::analytic_grid(scene, {32, 32, 32}, Vec3(-1, -1, -1), Vec3(1, 1, 1));
    int best = 0;
    for (std::int64_t i = 1; i < g.size(); ++i)
      if (std::abs(g.f[i]) < std::abs(g.f[best])) best = int(i);
    g.f[best] = kNaN;
    const mesh::MeshStats s = mesh::mesh_stats(mesh::marching_cubes(g));
    CHECK(s.boundary_edge_count > 0);
    CHECK(s.boundary_loop_count >= 1);
  }
}

TEST_CASE("marching cubes: all 256 sign patterns produce sane local geometry") {
  for (int pattern = 0; pattern < 256; ++pattern) {
    ScalarGrid g;
    g.nx = g.ny = g.nz = 2;
    g.bound_min = Vec3(0, 0, 0);
    g.bound_max = Vec3(1, 1, 1);
    g.f = VecX::Zero(8);
    g.validity = VecX::Ones(8);
    // corner k of the table maps to lattice offsets; bit set -> inside
    const int offs[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                            {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
    for (int k = 0; k < 8; ++k)
      g.f[g.index(offs[k][0], offs[k][1], offs[k][2])] = (pattern >> k) & 1 ? -1.0 : 1.0;
    const TriangleMesh m = mesh::marching_cubes(g);
    if (pattern == 0 || pattern == 255) {
      CHECK(m.triangles.empty());
      continue;
    }
    REQUIRE_FALSE(m.triangles.empty());
    for (const Vec3& v : m.vertices) {
      // equal-magnitude corners put every vertex at an edge midpoint
      int halves = 0, ends = 0;
      for (int a = 0; a < 3; ++a) {
        if (v[a] == 0.5) ++halves;
        if (v[a] == 0.0 || v[a] == 1.0) ++ends;
      }
      CHECK(halves == 1);
      CHECK(ends == 2);
    }
    for (const auto& t : m.triangles) {
      const Vec3& a = m.vertices[std::size_t(t[0])];
      const Vec3& b = m.vertices[std::size_t(t[1])];
      const Vec3& c = m.vertices[std::size_t(t[2])];
      CHECK(0.5 * (b - a).cross(c - a).norm() > 1e-12);
    }
  }
}

TEST_CASE("marching cubes: translation by whole cells shifts the mesh rigidly") {
  const Vec3 center_a(0.05, -0.1, 0.15);
  const auto sphere = [&](const Vec3& p) { return (p - center_a).norm() - 0.45; };
  const ScalarGrid ga = lambda_grid({33, 33, 33}, Vec3(-1, -1, -1), Vec3(1, 1, 1), sphere);

  const Vec3 shift = 3.0 * ga.spacing();  // integer number of cells per axis
  const auto shifted = [&](const Vec3& p) { return sphere(p - shift); };
  const ScalarGrid gb =
      lambda_grid({33, 33, 33}, Vec3(-1, -1, -1) + shift, Vec3(1, 1, 1) + shift, shifted);

  const TriangleMesh ma = mesh::marching_cubes(ga);
  const TriangleMesh mb = mesh::marching_cubes(gb);
  REQUIRE(ma.vertices.size() == mb.vertices.size());
  REQUIRE(ma.triangles == mb.triangles);
  for (std::size_t i = 0; i < ma.vertices.size(); ++i)
    CHECK((mb.vertices[i] - ma.vertices[i] - shift).norm() < 1e-9);
}

TEST_CASE("topology statistics on hand-built meshes") {
  SUBCASE("empty mesh") {
    const mesh::MeshStats s = mesh::mesh_stats(TriangleMesh{});
    CHECK(s.vertex_count == 0);
    CHECK(s.euler_characteristic == 0);
    CHECK_FALSE(s.watertight());
  }
  SUBCASE("single triangle") {
    TriangleMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    m.triangles = {{0, 1, 2}};
    const mesh::MeshStats s = mesh::mesh_stats(m);
    CHECK(s.vertex_count == 3);
    CHECK(s.edge_count == 3);
    CHECK(s.boundary_edge_count == 3);
    CHECK(s.boundary_loop_count == 1);
    CHECK(s.euler_characteristic == 1);
    CHECK(s.connected_components == 1);
  }
  SUBCASE("quad from two triangles") {
    const mesh::MeshStats s = mesh::mesh_stats(two_triangle_quad());
    CHECK(s.edge_count == 5);
    CHECK(s.boundary_edge_count == 4);
    CHECK(s.boundary_loop_count == 1);
    CHECK(s.euler_characteristic == 1);
  }
  SUBCASE("tetrahedron is watertight with genus 0") {
    TriangleMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
    m.triangles = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {0, 3, 2}};
    const mesh::MeshStats s = mesh::mesh_stats(m);
    CHECK(s.edge_count == 6);
    CHECK(s.boundary_edge_count == 0);
    CHECK(s.boundary_loop_count == 0);
    CHECK(s.euler_characteristic == 2);
    CHECK(s.watertight());
  }
  SUBCASE("two components, orphan vertex ignored") {
    TriangleMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0),
                  Vec3(5, 5, 5),  // orphan
                  Vec3(3, 0, 0), Vec3(4, 0, 0), Vec3(3, 1, 0)};
    m.triangles = {{0, 1, 2}, {4, 5, 6}};
    const mesh::MeshStats s = mesh::mesh_stats(m);
    CHECK(s.vertex_count == 6);
    CHECK(s.connected_components == 2);
    CHECK(s.boundary_loop_count == 2);
    CHECK(s.euler_characteristic == 2);
  }
  SUBCASE("index out of range rejected") {
    TriangleMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    m.triangles = {{0, 1, 3}};
    CHECK_THROWS_AS(mesh::mesh_stats(m), SchemaError);
  }
}

TEST_CASE("OBJ round trip") {
  const stdfs::path dir = stdfs::temp_directory_path() / "neat_test_mesher";
  stdfs::create_directories(dir);

  SUBCASE("empty mesh writes an empty file") {
    const std::string path = (dir / "empty.obj").string();
    mesh::export_obj(TriangleMesh{}, path);
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.empty());
    const TriangleMesh back = mesh::import_obj(path);
    CHECK(back.vertices.empty());
  }
  SUBCASE("single triangle format") {
    TriangleMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    m.triangles = {{0, 1, 2}};
    const std::string path = (dir / "tri.obj").string();
    mesh::export_obj(m, path);
    std::ifstream in(path);
    std::string l1, l2, l3, l4;
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    std::getline(in, l4);
    CHECK(l1 == "v 0 0 0");
    CHECK(l2 == "v 1 0 0");
    CHECK(l3 == "v 0 1 0");
    CHECK(l4 == "f 1 2 3");
  }
  SUBCASE("extraction output survives a round trip bit-for-bit as printed") {
    const auto scene = fields::AnalyticScene::make(fields::SceneKind::Sphere);
    const TriangleMesh m = mesh::marching_cubes(
        mesh::analytic_grid(scene, {24, 24, 24}, Vec3(-1, -1, -1), Vec3(1, 1, 1)));
    REQUIRE_FALSE(m.triangles.empty());
    const std::string p1 = (dir / "a.obj").string();
    const std::string p2 = (dir / "b.obj").string();
    mesh::export_obj(m, p1);
    const TriangleMesh back = mesh::import_obj(p1);
    REQUIRE(back.vertices.size() == m.vertices.size());
    REQUIRE(back.triangles == m.triangles);
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
      CHECK((back.vertices[i] - m.vertices[i]).norm() < 1e-8);
    mesh::export_obj(back, p2);
    std::ifstream f1(p1), f2(p2);
    const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
  }
  SUBCASE("import rejects malformed files") {
    auto write = [&](const std::string& name, const std::string& text) {
      const std::string p = (dir / name).string();
      std::ofstream(p) << text;
      return p;
    };
    CHECK_THROWS_AS(mesh::import_obj((dir / "missing.obj").string()), SchemaError);
    CHECK_THROWS_AS(mesh::import_obj(write("short.obj", "f 1 2\n")), SchemaError);
    CHECK_THROWS_AS(mesh::import_obj(write("slash.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2 3\n")),
                    SchemaError);
    CHECK_THROWS_AS(mesh::import_obj(write("quad.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3 1\n")),
                    SchemaError);
    CHECK_THROWS_AS(mesh::import_obj(write("normals.obj", "vn 0 0 1\n")), SchemaError);
    CHECK_THROWS_AS(mesh::import_obj(write("range.obj", "v 0 0 0\nf 1 2 3\n")), SchemaError);
    CHECK_THROWS_AS(mesh::import_obj(write("badnum.obj", "v 0 0 zero\n")), SchemaError);
  }
  SUBCASE("unwritable path") {
    CHECK_THROWS_AS(mesh::export_obj(TriangleMesh{}, (dir / "no_dir" / "x.obj").string()),
                    SchemaError);
  }
  stdfs::remove_all(dir);
}

TEST_CASE("raw volume dump preserves NaNs and survives a round trip") {
  const stdfs::path dir = stdfs::temp_directory_path() / "neat_test_grid_dump";
  stdfs::create_directories(dir);
  const auto scene = fields::AnalyticScene::make(fields::SceneKind::CutSphere);
  ScalarGrid g =
      mesh::mask_grid(mesh::analytic_grid(scene, {9, 9, 9}, Vec3(-1, -1, -1), Vec3(1, 1, 1)));
  g.nan_warnings = 7;

  const std::string path = (dir / "vol.json").string();
  mesh::write_grid(g, path);
  const ScalarGrid back = mesh::read_grid(path);
  CHECK(back.nx == 9);
  CHECK(back.nan_warnings == 7);
  CHECK(back.bound_min.isApprox(g.bound_min));
  REQUIRE(back.f.size() == g.f.size());
  int nan_count = 0;
  for (std::int64_t i = 0; i < g.f.size(); ++i) {
    if (std::isnan(g.f[i])) {
      CHECK(std::isnan(back.f[i]));
      ++nan_count;
    } else {
      CHECK(float(back.f[i]) == float(g.f[i]));  // exact at f32 precision
    }
    CHECK(float(back.validity[i]) == float(g.validity[i]));
  }
  CHECK(nan_count > 0);

  SUBCASE("manifest tampering is rejected") {
    Json j = load_json_file(path);
    j["format"] = "neat-grid-2";
    save_json_file(path, j);
    CHECK_THROWS_AS(mesh::read_grid(path), SchemaError);
  }
  SUBCASE("truncated volume file is rejected") {
    stdfs::resize_file(dir / "vol.f32", 100);
    CHECK_THROWS_AS(mesh::read_grid(path), SchemaError);
  }
  SUBCASE("missing manifest") {
    CHECK_THROWS_AS(mesh::read_grid((dir / "nope.json").string()), SchemaError);
  }
  stdfs::remove_all(dir);
}
