#pragma once

// Field-to-mesh conversion: dense lattice evaluation of the signed-distance
// and validity fields, validity masking to NaN, a NaN-aware marching-cubes
// triangulator, topology statistics, and OBJ / raw-volume serialization.
//
// The masking rule is the heart of open-surface extraction: lattice points
// whose validity falls below threshold get f := NaN, and any cell touching a
// NaN corner emits no triangles.  The zero level set is therefore cut off
// cleanly along the validity boundary instead of being wrapped in a closed
// double layer.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "neat/fields.hpp"
#include "neat/types.hpp"

namespace neat::mesh {

// Dense lattice of field samples over an axis-aligned box.  Layout is
// x-fastest: index(ix,iy,iz) = ix + nx*(iy + ny*iz); the lattice includes
// both bound faces, so spacing along x is (max-min)/(nx-1).
struct ScalarGrid {
  int nx = 0, ny = 0, nz = 0;
  Vec3 bound_min = Vec3::Zero();
  Vec3 bound_max = Vec3::Zero();
  VecX f;         // signed distance samples; NaN where masked or non-finite
  VecX validity;  // validity probability samples in [0,1]
  std::int64_t nan_warnings = 0;  // lattice points whose field output was non-finite

  std::int64_t size() const { return std::int64_t(nx) * ny * nz; }
  std::int64_t index(int ix, int iy, int iz) const {
    return ix + std::int64_t(nx) * (iy + std::int64_t(ny) * iz);
  }
  Vec3 spacing() const;
  Vec3 lattice_point(int ix, int iy, int iz) const;
  // Throws SchemaError unless resolution >= 2 per axis, bounds are
  // non-degenerate, and both sample arrays hold exactly nx*ny*nz values.
  void validate() const;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;  // indices into vertices

  void validate() const;  // index range check
};

// Derived topology numbers.  Edges are undirected vertex pairs; a boundary
// edge belongs to exactly one triangle; boundary loops are the connected
// components of the boundary-edge subgraph; the Euler characteristic is
// V - E + F over referenced vertices.
struct MeshStats {
  std::int64_t vertex_count = 0;
  std::int64_t triangle_count = 0;
  std::int64_t edge_count = 0;
  std::int64_t boundary_edge_count = 0;
  std::int64_t boundary_loop_count = 0;
  std::int64_t connected_components = 0;
  std::int64_t euler_characteristic = 0;

  bool watertight() const { return boundary_edge_count == 0 && triangle_count > 0; }
};

MeshStats mesh_stats(const TriangleMesh& mesh);

// Evaluates both fields at every lattice point of a resolution[0] x
// resolution[1] x resolution[2] grid spanning [bound_min, bound_max].
// Non-finite outputs are recorded as NaN and counted in nan_warnings.
// Work is split over z-slabs across `threads` workers; slabs write disjoint
// ranges, so the result is identical for any thread count.
ScalarGrid evaluate_grid(const fields::FieldSet& fs, std::array<int, 3> resolution,
                         const Vec3& bound_min, const Vec3& bound_max, int threads = 1);

// Samples an analytic scene on the same lattice: f is the exact signed
// distance, validity is 1 inside the scene's valid region and 0 outside.
ScalarGrid analytic_grid(const fields::AnalyticScene& scene, std::array<int, 3> resolution,
                         const Vec3& bound_min, const Vec3& bound_max);

// f := NaN wherever validity < threshold.  Points at exactly the threshold
// stay valid.  Returns the masked copy.
ScalarGrid mask_grid(ScalarGrid grid, Scalar threshold = 0.5);

// Classic 256-case marching cubes with linear edge interpolation.  Cells with
// any NaN corner emit nothing.  Vertices on shared cell edges are welded and
// numbered by global edge id (not discovery order), so the output is a pure
// function of the grid.  Triangles with area <= 1e-12 are dropped; an
// all-NaN or crossing-free grid yields an empty mesh.
TriangleMesh marching_cubes(const ScalarGrid& grid, Scalar isolevel = 0.0);

// ASCII OBJ: "v x y z" lines (9 significant digits) then 1-indexed "f a b c"
// lines.  Re-importing reproduces coordinates exactly as printed.
void export_obj(const TriangleMesh& mesh, const std::string& path);
TriangleMesh import_obj(const std::string& path);

// Raw volume dump: JSON manifest at `path` plus a little-endian float32
// sidecar holding f then validity (NaNs preserved, values rounded to f32).
void write_grid(const ScalarGrid& grid, const std::string& path);
ScalarGrid read_grid(const std::string& path);

}  // namespace neat::mesh
