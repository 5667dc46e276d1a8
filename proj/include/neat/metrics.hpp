#pragma once

// Quantitative evaluation of reconstructed surfaces against analytic ground
// truth: symmetric chamfer distance, F-score at a distance threshold, and
// validity classification accuracy over the closed-completion surface.

#include <cstdint>
#include <vector>

#include "neat/fields.hpp"
#include "neat/mesher.hpp"
#include "neat/serialize.hpp"
#include "neat/types.hpp"

namespace neat::metrics {

// Area-uniform point cloud drawn from a surface; the common currency for
// geometric comparison.
struct PointSample {
  std::vector<Vec3> points;

  int count() const { return int(points.size()); }
  void validate() const;  // non-empty and all coordinates finite
};

// Area-weighted triangle pick with uniform barycentric placement.
PointSample sample_mesh(const mesh::TriangleMesh& mesh, int count, std::uint64_t seed);
// Uniform sample of the scene's valid surface region.
PointSample sample_scene(const fields::AnalyticScene& scene, int count, std::uint64_t seed);

// Exact nearest-neighbor distance from every point of `from` to the set
// `to`, via a uniform spatial grid with ring-expansion search.
VecX nearest_distances(const PointSample& from, const PointSample& to);

// 0.5 * mean_a min_b |a-b|  +  0.5 * mean_b min_a |a-b|   (unsquared).
Scalar chamfer(const PointSample& a, const PointSample& b);

// Harmonic mean of precision (fraction of `a` within tau of `b`) and recall
// (fraction of `b` within tau of `a`); 0 when both vanish.
Scalar f_score(const PointSample& a, const PointSample& b, Scalar tau);

// Fraction of completion-surface points where the learned classification
// [V(p) >= 0.5] matches the scene's validity region.  Points are split
// between the kept and excised regions in exact proportion to their areas,
// so the estimate is unbiased by construction.
Scalar validity_accuracy(const fields::FieldSet& fs, const fields::AnalyticScene& scene,
                         int n_points, std::uint64_t seed = 0);

// Exact area fraction of the completion surface that carries real surface
// (the quota used by the stratified sampler above).
Scalar valid_area_fraction(const fields::AnalyticScene& scene);

// Mean binary self-entropy -V ln V - (1-V) ln(1-V) of the validity field over
// uniform completion-surface samples (0 and 1 contribute zero).  Low entropy
// means the gate has committed near the surface.
Scalar validity_self_entropy(const fields::FieldSet& fs, const fields::AnalyticScene& scene,
                             int n_points, std::uint64_t seed = 0);

// Mean validity over the excised part of the completion surface; NaN when the
// scene has no excised region.
Scalar mean_excised_validity(const fields::FieldSet& fs, const fields::AnalyticScene& scene,
                             int n_points, std::uint64_t seed = 0);

struct MetricReport {
  Scalar chamfer = 0.0;
  Scalar f_score = 0.0;
  Scalar validity_accuracy = 0.0;
  int n_points = 0;
  Scalar tau = 0.0;
};

// Samples `n_points` from the mesh and from the scene's valid surface and
// fills the full report.  tau <= 0 selects the default 0.01 * scene radius.
MetricReport evaluate_surface(const mesh::TriangleMesh& mesh, const fields::FieldSet& fs,
                              const fields::AnalyticScene& scene, int n_points,
                              Scalar tau = 0.0, std::uint64_t seed = 0);

// Mesh-only variant (no learned fields): same sampling streams, but
// validity_accuracy is NaN (serialized as null).
MetricReport evaluate_surface(const mesh::TriangleMesh& mesh,
                              const fields::AnalyticScene& scene, int n_points,
                              Scalar tau = 0.0, std::uint64_t seed = 0);

Json metric_report_to_json(const MetricReport& r);

}  // namespace neat::metrics
