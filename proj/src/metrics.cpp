#include "neat/metrics.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace neat::metrics {
namespace {

// Uniform grid over the target cloud.  nearest() expands Chebyshev rings of
// cells around the query until no unvisited cell can beat the best distance:
// every point in a cell at ring k >= r+1 lies at least r*h away.
class GridIndex {
 public:
  explicit GridIndex(const std::vector<Vec3>& points) : pts_(points) {
    Vec3 lo = pts_[0], hi = pts_[0];
    for (const Vec3& p : pts_) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    origin_ = lo;
    const Scalar extent = (hi - lo).maxCoeff();
    h_ = std::max(extent / std::cbrt(Scalar(pts_.size())), 1e-12);
    for (int a = 0; a < 3; ++a)
      n_[a] = std::max(1, int((hi[a] - lo[a]) / h_) + 1);

    // counting sort of point indices by cell
    cell_start_.assign(std::size_t(n_[0]) * n_[1] * n_[2] + 1, 0);
    for (const Vec3& p : pts_) cell_start_[std::size_t(cell_of(p)) + 1]++;
    for (std::size_t c = 1; c < cell_start_.size(); ++c) cell_start_[c] += cell_start_[c - 1];
    order_.resize(pts_.size());
    std::vector<std::int64_t> cursor(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t i = 0; i < pts_.size(); ++i)
      order_[std::size_t(cursor[std::size_t(cell_of(pts_[i]))]++)] = int(i);
  }

  Scalar nearest(const Vec3& q) const {
    int cq[3];
    for (int a = 0; a < 3; ++a)
      cq[a] = std::clamp(int(std::floor((q[a] - origin_[a]) / h_)), 0, n_[a] - 1);
    const int max_ring = std::max({std::max(cq[0], n_[0] - 1 - cq[0]),
                                   std::max(cq[1], n_[1] - 1 - cq[1]),
                                   std::max(cq[2], n_[2] - 1 - cq[2])});
    Scalar best = std::numeric_limits<Scalar>::infinity();
    for (int r = 0; r <= max_ring; ++r) {
      scan_ring(q, cq, r, best);
      if (best <= Scalar(r) * h_) break;
    }
    return best;
  }

 private:
  std::int64_t cell_of(const Vec3& p) const {
    std::int64_t c[3];
    for (int a = 0; a < 3; ++a)
      c[a] = std::clamp(std::int64_t((p[a] - origin_[a]) / h_), std::int64_t(0),
                        std::int64_t(n_[a] - 1));
    return c[0] + std::int64_t(n_[0]) * (c[1] + std::int64_t(n_[1]) * c[2]);
  }

  void scan_cell(const Vec3& q, int ix, int iy, int iz, Scalar& best) const {
    const std::int64_t c = ix + std::int64_t(n_[0]) * (iy + std::int64_t(n_[1]) * iz);
    for (std::int64_t k = cell_start_[std::size_t(c)]; k < cell_start_[std::size_t(c) + 1]; ++k)
      best = std::min(best, (pts_[std::size_t(order_[std::size_t(k)])] - q).norm());
  }

  void scan_ring(const Vec3& q, const int cq[3], int r, Scalar& best) const {
    const int x0 = std::max(cq[0] - r, 0), x1 = std::min(cq[0] + r, n_[0] - 1);
    const int y0 = std::max(cq[1] - r, 0), y1 = std::min(cq[1] + r, n_[1] - 1);
    const int z0 = std::max(cq[2] - r, 0), z1 = std::min(cq[2] + r, n_[2] - 1);
    for (int iz = z0; iz <= z1; ++iz)
      for (int iy = y0; iy <= y1; ++iy)
        for (int ix = x0; ix <= x1; ++ix) {
          const int cheb = std::max({std::abs(ix - cq[0]), std::abs(iy - cq[1]),
                                     std::abs(iz - cq[2])});
          if (cheb == r) scan_cell(q, ix, iy, iz, best);
        }
  }

  const std::vector<Vec3>& pts_;
  Vec3 origin_;
  Scalar h_ = 1.0;
  int n_[3] = {1, 1, 1};
  std::vector<std::int64_t> cell_start_;
  std::vector<int> order_;
};

}  // namespace

void PointSample::validate() const {
  if (points.empty()) throw SchemaError("point sample is empty");
  for (const Vec3& p : points)
    if (!p.allFinite()) throw SchemaError("point sample contains a non-finite coordinate");
}

PointSample sample_mesh(const mesh::TriangleMesh& m, int count, std::uint64_t seed) {
  if (count <= 0) throw SchemaError("sample_mesh: count must be positive");
  m.validate();
  std::vector<Scalar> cum;
  cum.reserve(m.triangles.size());
  Scalar total = 0.0;
  for (const auto& t : m.triangles) {
    const Vec3& a = m.vertices[std::size_t(t[0])];
    const Vec3& b = m.vertices[std::size_t(t[1])];
    const Vec3& c = m.vertices[std::size_t(t[2])];
    total += 0.5 * (b - a).cross(c - a).norm();
    cum.push_back(total);
  }
  if (cum.empty() || total <= 0.0) throw SchemaError("sample_mesh: mesh has no area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Scalar> U(0.0, 1.0);
  PointSample out;
  out.points.reserve(std::size_t(count));
  for (int k = 0; k < count; ++k) {
    const auto it = std::upper_bound(cum.begin(), cum.end(), U(rng) * total);
    const std::size_t ti = std::min(std::size_t(it - cum.begin()), cum.size() - 1);
    const auto& t = m.triangles[ti];
    Scalar u = U(rng), v = U(rng);
    if (u + v > 1.0) {  // fold into the triangle
      u = 1.0 - u;
      v = 1.0 - v;
    }
    out.points.push_back(m.vertices[std::size_t(t[0])] +
                         u * (m.vertices[std::size_t(t[1])] - m.vertices[std::size_t(t[0])]) +
                         v * (m.vertices[std::size_t(t[2])] - m.vertices[std::size_t(t[0])]));
  }
  return out;
}

PointSample sample_scene(const fields::AnalyticScene& scene, int count, std::uint64_t seed) {
  if (count <= 0) throw SchemaError("sample_scene: count must be positive");
  scene.validate();
  std::mt19937_64 rng(seed);
  PointSample out;
  out.points.reserve(std::size_t(count));
  for (int k = 0; k < count; ++k) out.points.push_back(scene.sample_surface(rng));
  return out;
}

VecX nearest_distances(const PointSample& from, const PointSample& to) {
  from.validate();
  to.validate();
  const GridIndex index(to.points);
  VecX d(from.count());
  for (int i = 0; i < from.count(); ++i) d[i] = index.nearest(from.points[std::size_t(i)]);
  return d;
}

Scalar chamfer(const PointSample& a, const PointSample& b) {
  return 0.5 * nearest_distances(a, b).mean() + 0.5 * nearest_distances(b, a).mean();
}

Scalar f_score(const PointSample& a, const PointSample& b, Scalar tau) {
  if (!(tau > 0.0)) throw SchemaError("f_score: tau must be positive");
  const Scalar precision =
      (nearest_distances(a, b).array() <= tau).cast<Scalar>().mean();
  const Scalar recall = (nearest_distances(b, a).array() <= tau).cast<Scalar>().mean();
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

Scalar valid_area_fraction(const fields::AnalyticScene& scene) {
  scene.validate();
  switch (scene.kind) {
    case fields::SceneKind::Sphere:
      return 1.0;
    case fields::SceneKind::CutSphere:
      // spherical cap above cut_z has area 2*pi*r*(r - cut_z) of 4*pi*r^2
      return (scene.radius + scene.cut_z) / (2.0 * scene.radius);
    case fields::SceneKind::Disk:
      // valid disk of `radius` inside the completion disk of scene_radius
      return (scene.radius * scene.radius) / (scene.scene_radius * scene.scene_radius);
    case fields::SceneKind::Cylinder: {
      const Scalar zmax =
          std::sqrt(scene.scene_radius * scene.scene_radius - scene.radius * scene.radius);
      return std::min(1.0, scene.half_height / zmax);
    }
    case fields::SceneKind::Sheet:
      return (4.0 * scene.half_a * scene.half_b) /
             (kPi * scene.scene_radius * scene.scene_radius);
  }
  return 1.0;
}

Scalar validity_accuracy(const fields::FieldSet& fs, const fields::AnalyticScene& scene,
                         int n_points, std::uint64_t seed) {
  if (n_points <= 0) throw SchemaError("validity_accuracy: n_points must be positive");
  const Scalar kept_fraction = valid_area_fraction(scene);
  const int n_kept = int(std::llround(kept_fraction * n_points));
  const int n_excised = n_points - n_kept;

  // rejection-sample each stratum from the completion surface
  std::mt19937_64 rng(hash_combine(seed, 0x7Au));
  Mat P(3, n_points);
  std::vector<char> truth(static_cast<std::size_t>(n_points));
  int got_kept = 0, got_excised = 0;
  std::int64_t guard = 0;
  while (got_kept < n_kept || got_excised < n_excised) {
    if (++guard > std::int64_t(n_points) * 10000)
      throw NumericError("validity_accuracy: stratified sampling failed to fill quotas");
    const Vec3 p = scene.sample_completion(rng);
    const bool v = scene.valid(p);
    if (v && got_kept < n_kept) {
      P.col(got_kept + got_excised) = p;
      truth[std::size_t(got_kept + got_excised)] = 1;
      ++got_kept;
    } else if (!v && got_excised < n_excised) {
      P.col(got_kept + got_excised) = p;
      truth[std::size_t(got_kept + got_excised)] = 0;
      ++got_excised;
    }
  }

  const VecX V = fs.validity(P);
  std::int64_t correct = 0;
  for (int i = 0; i < n_points; ++i)
    if ((V[i] >= 0.5) == bool(truth[std::size_t(i)])) ++correct;
  return Scalar(correct) / Scalar(n_points);
}

Scalar validity_self_entropy(const fields::FieldSet& fs, const fields::AnalyticScene& scene,
                             int n_points, std::uint64_t seed) {
  if (n_points <= 0) throw SchemaError("validity_self_entropy: n_points must be positive");
  std::mt19937_64 rng(hash_combine(seed, 0x5Eu));
  Mat P(3, n_points);
  for (int i = 0; i < n_points; ++i) P.col(i) = scene.sample_completion(rng);
  const VecX V = fs.validity(P);
  const auto xlogx = [](Scalar x) { return x > 0.0 ? x * std::log(x) : 0.0; };
  Scalar sum = 0.0;
  for (int i = 0; i < n_points; ++i) sum += -xlogx(V[i]) - xlogx(1.0 - V[i]);
  return sum / Scalar(n_points);
}

Scalar mean_excised_validity(const fields::FieldSet& fs, const fields::AnalyticScene& scene,
                             int n_points, std::uint64_t seed) {
  if (n_points <= 0) throw SchemaError("mean_excised_validity: n_points must be positive");
  if (valid_area_fraction(scene) >= 1.0) return std::numeric_limits<Scalar>::quiet_NaN();
  std::mt19937_64 rng(hash_combine(seed, 0xE5u));
  Mat P(3, n_points);
  int got = 0;
  std::int64_t guard = 0;
  while (got < n_points) {
    if (++guard > std::int64_t(n_points) * 10000)
      throw NumericError("mean_excised_validity: rejection sampling failed");
    const Vec3 p = scene.sample_completion(rng);
    if (!scene.valid(p)) P.col(got++) = p;
  }
  return fs.validity(P).mean();
}

MetricReport evaluate_surface(const mesh::TriangleMesh& mesh,
                              const fields::AnalyticScene& scene, int n_points, Scalar tau,
                              std::uint64_t seed) {
  MetricReport r;
  r.n_points = n_points;
  r.tau = tau > 0.0 ? tau : 0.01 * scene.scene_radius;
  const PointSample pred = sample_mesh(mesh, n_points, hash_combine(seed, 0x3Du));
  const PointSample gt = sample_scene(scene, n_points, hash_combine(seed, 0x9Cu));
  r.chamfer = chamfer(pred, gt);
  r.f_score = f_score(pred, gt, r.tau);
  r.validity_accuracy = std::numeric_limits<Scalar>::quiet_NaN();
  return r;
}

MetricReport evaluate_surface(const mesh::TriangleMesh& mesh, const fields::FieldSet& fs,
                              const fields::AnalyticScene& scene, int n_points, Scalar tau,
                              std::uint64_t seed) {
  MetricReport r = evaluate_surface(mesh, scene, n_points, tau, seed);
  r.validity_accuracy = validity_accuracy(fs, scene, n_points, seed);
  return r;
}

Json metric_report_to_json(const MetricReport& r) {
  return Json{{"chamfer", r.chamfer},
              {"f_score", r.f_score},
              {"validity_accuracy",
               std::isfinite(r.validity_accuracy) ? Json(r.validity_accuracy) : Json(nullptr)},
              {"n_points", r.n_points},
              {"tau", r.tau}};
}

}  // namespace neat::metrics
