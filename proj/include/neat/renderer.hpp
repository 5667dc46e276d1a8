#pragma once

#include <random>
#include <vector>

#include "neat/camera.hpp"
#include "neat/fields.hpp"
#include "neat/types.hpp"

// Volume renderer over the neural fields: stratified + importance sampling
// along rays, sign-adjusted discrete opacity from the signed distance,
// validity gating, and front-to-back compositing of color and mask.
namespace neat::render {

struct Ray {
  Vec3 o = Vec3::Zero();
  Vec3 v = Vec3::UnitZ();  // unit direction
  Scalar t_near = 0.0;
  Scalar t_far = 0.0;
  bool hits_bounds = true;  // false: skips the scene bounding sphere entirely
  int pixel_index = -1;     // flat iy * width + ix when generated from a camera

  void validate() const;  // throws SchemaError / NumericError
};

struct RenderConfig {
  int n_stratified = 48;
  int importance_rounds = 1;
  int importance_samples = 16;  // added per round
  Vec3 background = Vec3::Zero();
  bool perturb = false;  // jitter stratified samples within their bins

  int total_samples() const { return n_stratified + importance_rounds * importance_samples; }
  void validate() const;
};

// Everything the renderer computed along one ray. All per-sample vectors
// share the same length; the last sample has no successor so its opacity is
// defined as zero.
struct RaySampleBatch {
  VecX t;        // strictly increasing sample depths
  Mat p;         // 3 x n sample positions
  VecX f;        // signed distance per sample
  VecX validity; // validity probability per sample
  Mat color;     // 3 x n
  Mat n_grad;    // 3 x n central-difference SDF gradient
  VecX sign;     // +-1, sign of v . n (zero dot counts as +1)
  VecX alpha;    // sign-adjusted discrete opacity, clamped to [0,1]
  VecX beta;     // alpha gated by validity
  VecX w;        // compositing weights
  Vec3 I_pred = Vec3::Zero();
  Scalar M_pred = 0.0;
  bool background_only = false;  // ray missed the bounding sphere
};

// Stratified depths: n uniform bins over [t_near, t_far], bin midpoints when
// perturb is off, one uniform draw per bin otherwise.
VecX sample_ray(const Ray& ray, int n, bool perturb, std::mt19937_64& rng);

// Draws m extra depths from the discrete distribution given by w over the
// cells around each existing t, merges, and returns a strictly increasing
// set. Falls back to uniform draws when the weights carry no mass.
VecX importance_resample(const Ray& ray, const VecX& t, const VecX& w, int m,
                         std::mt19937_64& rng);

// sign(v . n) with the zero case declared +1. Piecewise constant: carries no
// gradient.
Scalar sign_of_crossing(const Vec3& v, const Vec3& n);

// Discrete opacity for one sample interval: clamp((P(-sg f_i) - P(-sg f_j)) /
// P(-sg f_i), 0, 1) with P the sigmoid sharpened by s, evaluated in log space
// so large s cannot underflow the ratio.
Scalar discrete_alpha(Scalar f_i, Scalar f_j, Scalar sign_i, Scalar s);

// discrete_alpha plus its partials; the clamp zeroes all partials when it
// binds.
struct AlphaGrad {
  Scalar alpha = 0.0;
  Scalar d_fi = 0.0;   // d alpha / d f_i
  Scalar d_fj = 0.0;   // d alpha / d f_{i+1}
  Scalar d_s = 0.0;    // d alpha / d s
};
AlphaGrad discrete_alpha_grad(Scalar f_i, Scalar f_j, Scalar sign_i, Scalar s);

// Front-to-back compositing: w_i = beta_i prod_{j<i}(1-beta_j), mask is the
// exact sum of weights, color gets the background under the leftover mass.
void composite(const VecX& beta, const Mat& colors, const Vec3& background, VecX& w,
               Vec3& I_pred, Scalar& M_pred);

// Reverse pass of composite for dL/dI (gI) and dL/dM (gM). Uses the reverse
// recurrence R_i = beta_{i+1} gw_{i+1} + (1-beta_{i+1}) R_{i+1} so no division
// by (1-beta) appears; g_beta and g_colors are overwritten.
void composite_backward(const VecX& beta, const Mat& colors, const Vec3& background,
                        const Vec3& gI, Scalar gM, VecX& g_beta, Mat& g_colors);

// Full per-ray evaluation against the fields: sampling (with importance
// rounds driven by provisional weights), per-sample field readouts, opacity,
// gating, compositing. Pure given the rng state.
RaySampleBatch render_ray(const fields::FieldSet& fs, const Ray& ray, const RenderConfig& cfg,
                          std::mt19937_64& rng);

// Ray through one pixel center; (t_near, t_far) from the scene bounding
// sphere, clamped to >= 0; rays that miss are flagged hits_bounds = false.
Ray pixel_ray(const Camera& cam, int ix, int iy, Scalar scene_radius);

// All pixel rays of a camera in row-major pixel order.
std::vector<Ray> generate_rays(const Camera& cam, Scalar scene_radius);

}  // namespace neat::render
