#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "neat/autodiff.hpp"
#include "neat/types.hpp"

// The scene representation: three small networks (signed distance, validity
// probability, color) sharing one flat parameter vector together with the
// log-sharpness scalar, plus analytic reference shapes used for synthesis and
// as ground-truth oracles in tests.
namespace neat::fields {

struct FieldConfig {
  ad::MlpSpec sdf;
  ad::MlpSpec validity;
  ad::MlpSpec color;
  Scalar scene_radius = 1.0;
  Scalar s_log_init = 0.0;  // filled by defaults(); s = exp(s_log)

  static FieldConfig defaults();
  void validate() const;  // throws SchemaError
};

// Per-point field evaluation. n is the raw (unnormalized) spatial gradient of
// the signed distance, from central differences.
struct PointEval {
  Vec3 p = Vec3::Zero();
  Scalar f = 0.0;
  Scalar validity = 0.0;
  Vec3 color = Vec3::Zero();
  Vec3 n = Vec3::Zero();
};

class FieldSet {
 public:
  FieldSet() = default;
  explicit FieldSet(FieldConfig cfg);  // parameters start at zero except s_log

  const FieldConfig& config() const { return cfg_; }
  const ad::ParamVector& params() const { return params_; }
  ad::ParamVector& params() { return params_; }

  Scalar sharpness() const;  // exp(s_log), always > 0
  Scalar s_log() const { return params_.segment("s_log")(0, 0); }
  // Step for spatial derivatives of the SDF: 1e-3 x scene radius.
  Scalar fd_step() const { return 1e-3 * cfg_.scene_radius; }

  // Batched evaluation; points are columns of p. Optional tape records the
  // pass for the reverse sweep.
  VecX sdf(const Mat& p, ad::Tape* tape = nullptr) const;
  VecX validity(const Mat& p, ad::Tape* tape = nullptr) const;
  Mat color(const Mat& p, ad::Tape* tape = nullptr) const;
  // Central-difference spatial gradient of the SDF, 3 x N (six extra forward
  // evaluations, step fd_step()).
  Mat sdf_gradient(const Mat& p) const;

 private:
  FieldConfig cfg_;
  ad::ParamVector params_;
};

// Full per-point readout (single point; tests and debugging).
PointEval evaluate(const FieldSet& fs, const Vec3& p);

// Initializes the parameter vector in place: the SDF approximates a sphere of
// the configured scene radius scaled by `radius_fraction` (f(p) ~ |p| - r,
// outward normals), validity starts near 1 everywhere, color near mid-gray.
void geometric_init(FieldSet& fs, std::uint64_t seed, Scalar radius_fraction = 0.5);

// --------------------------------------------------------------------------
// Analytic reference scenes. Open surfaces are modeled as a closed-completion
// signed distance plus a binary validity region; the excised part is exactly
// where validity is 0.

enum class SceneKind { Sphere, CutSphere, Disk, Cylinder, Sheet };

SceneKind scene_kind_from_string(const std::string& s);
std::string to_string(SceneKind k);

struct AnalyticScene {
  SceneKind kind = SceneKind::Sphere;
  Scalar radius = 0.5;       // sphere/cut-sphere/disk/cylinder radius
  Scalar cut_z = 0.3;        // cut-sphere: excised where z > cut_z
  Scalar half_height = 0.3;  // cylinder: valid where |z| <= half_height
  Scalar half_a = 0.6;       // sheet: valid where |x| <= half_a
  Scalar half_b = 0.4;       // sheet: valid where |y| <= half_b
  Scalar scene_radius = 1.0;

  static AnalyticScene make(SceneKind kind);
  void validate() const;  // throws SchemaError

  // Exact signed distance of the closed completion (positive outside).
  Scalar sdf(const Vec3& p) const;
  // Normalized analytic surface normal (gradient direction) at p.
  Vec3 normal(const Vec3& p) const;
  // Binary ground-truth validity region (1 = real surface, 0 = excised).
  bool valid(const Vec3& p) const;
  // Position palette shaded by a fixed three-light Lambertian rig; two-sided
  // (|n.l|) so back faces are lit. Pure function of p (and n(p)), hence
  // representable by a position-only color field.
  Vec3 color(const Vec3& p) const;

  // Uniform sample on the valid part of the surface (ground truth for
  // chamfer / coverage metrics).
  Vec3 sample_surface(std::mt19937_64& rng) const;
  // Uniform sample on the closed completion restricted to the scene bounding
  // sphere; covers both valid and excised regions (validity-accuracy oracle).
  Vec3 sample_completion(std::mt19937_64& rng) const;
};

// scene.json round-trip (throws SchemaError on malformed input).
std::string scene_to_json(const AnalyticScene& scene);
AnalyticScene scene_from_json(const std::string& text);

// --------------------------------------------------------------------------
// Checkpoints: JSON manifest (network shapes, segment layout, iteration) plus
// a sidecar .bin of little-endian 64-bit parameter values in manifest order.

void save_checkpoint(const std::string& json_path, const FieldSet& fs, std::int64_t iteration);
// Returns the stored iteration count and reconstructs the field set.
std::int64_t load_checkpoint(const std::string& json_path, FieldSet& fs);

}  // namespace neat::fields
