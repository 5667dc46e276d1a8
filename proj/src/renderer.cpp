#include "neat/renderer.hpp"

#include <algorithm>
#include <cmath>

namespace neat::render {

void Ray::validate() const {
  if (!o.allFinite() || !v.allFinite() || !std::isfinite(t_near) || !std::isfinite(t_far))
    throw NumericError("ray: non-finite fields");
  if (std::abs(v.norm() - 1.0) > 1e-9) throw SchemaError("ray: direction must be unit length");
  if (hits_bounds && !(t_near >= 0.0 && t_near < t_far))
    throw SchemaError("ray: need 0 <= t_near < t_far");
}

void RenderConfig::validate() const {
  if (n_stratified < 2) throw SchemaError("render: need at least 2 stratified samples");
  if (importance_rounds < 0 || importance_samples < 0)
    throw SchemaError("render: importance counts must be non-negative");
  if (importance_rounds > 0 && importance_samples == 0)
    throw SchemaError("render: importance rounds configured with zero samples");
  if (!background.allFinite() || background.minCoeff() < 0.0 || background.maxCoeff() > 1.0)
    throw SchemaError("render: background must be an RGB color in [0,1]");
}

VecX sample_ray(const Ray& ray, int n, bool perturb, std::mt19937_64& rng) {
  ray.validate();
  if (n < 2) throw SchemaError("sample_ray: need n >= 2");
  if (!ray.hits_bounds) throw SchemaError("sample_ray: ray misses the scene bounds");
  const Scalar dt = (ray.t_far - ray.t_near) / n;
  VecX t(n);
  if (perturb) {
    std::uniform_real_distribution<Scalar> U(0.0, 1.0);
    for (int i = 0; i < n; ++i) t[i] = ray.t_near + (i + U(rng)) * dt;
  } else {
    for (int i = 0; i < n; ++i) t[i] = ray.t_near + (i + 0.5) * dt;
  }
  return t;
}

VecX importance_resample(const Ray& ray, const VecX& t, const VecX& w, int m,
                         std::mt19937_64& rng) {
  const Eigen::Index n = t.size();
  if (n < 2 || w.size() != n) throw SchemaError("importance_resample: bad value sizes");
  std::uniform_real_distribution<Scalar> U(0.0, 1.0);

  VecX fresh(m);
  const Scalar total = w.sum();
  if (!(total > 1e-12)) {
    for (int k = 0; k < m; ++k) fresh[k] = ray.t_near + (ray.t_far - ray.t_near) * U(rng);
  } else {
    VecX cdf(n);
    Scalar acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += w[i];
      cdf[i] = acc;
    }
    for (int k = 0; k < m; ++k) {
      const Scalar u = U(rng) * total;
      const Eigen::Index i =
          std::lower_bound(cdf.data(), cdf.data() + n, u) - cdf.data();
      const Eigen::Index j = std::min(i, n - 1);
      const Scalar lo = (j == 0) ? ray.t_near : 0.5 * (t[j - 1] + t[j]);
      const Scalar hi = (j == n - 1) ? ray.t_far : 0.5 * (t[j] + t[j + 1]);
      fresh[k] = lo + (hi - lo) * U(rng);
    }
  }

  std::vector<Scalar> merged(t.data(), t.data() + n);
  merged.insert(merged.end(), fresh.data(), fresh.data() + m);
  std::sort(merged.begin(), merged.end());
  VecX out(Eigen::Index(merged.size()));
  Eigen::Index count = 0;
  for (Scalar v : merged)
    if (count == 0 || v > out[count - 1] + 1e-12) out[count++] = v;
  return out.head(count);
}

Scalar sign_of_crossing(const Vec3& v, const Vec3& n) {
  return v.dot(n) < 0.0 ? -1.0 : 1.0;
}

namespace {

// log sigmoid(z) = -softplus(-z), safe over the whole double range
inline Scalar log_sigmoid(Scalar z) {
  if (z > 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

inline Scalar sigmoid(Scalar z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Scalar discrete_alpha(Scalar f_i, Scalar f_j, Scalar sign_i, Scalar s) {
  // ratio of sharpened sigmoids in log space: P(z_j)/P(z_i) = exp(D)
  const Scalar z_i = -sign_i * s * f_i;
  const Scalar z_j = -sign_i * s * f_j;
  const Scalar D = log_sigmoid(z_j) - log_sigmoid(z_i);
  const Scalar alpha = 1.0 - std::exp(D);
  return std::clamp(alpha, 0.0, 1.0);
}

AlphaGrad discrete_alpha_grad(Scalar f_i, Scalar f_j, Scalar sign_i, Scalar s) {
  const Scalar z_i = -sign_i * s * f_i;
  const Scalar z_j = -sign_i * s * f_j;
  const Scalar D = log_sigmoid(z_j) - log_sigmoid(z_i);
  const Scalar expD = std::exp(D);
  const Scalar raw = 1.0 - expD;

  AlphaGrad g;
  g.alpha = std::clamp(raw, 0.0, 1.0);
  if (raw <= 0.0 || raw >= 1.0) return g;  // clamp binds: flat

  // d logP(z)/dz = sigmoid(-z); chain through z = -sign s f
  const Scalar si = sigmoid(-z_i);
  const Scalar sj = sigmoid(-z_j);
  g.d_fi = -expD * si * sign_i * s;
  g.d_fj = expD * sj * sign_i * s;
  g.d_s = expD * sign_i * (sj * f_j - si * f_i);
  return g;
}

void composite(const VecX& beta, const Mat& colors, const Vec3& background, VecX& w,
               Vec3& I_pred, Scalar& M_pred) {
  const Eigen::Index n = beta.size();
  if (colors.cols() != n || colors.rows() != 3)
    throw SchemaError("composite: colors must be 3 x n");
  w.resize(n);
  Scalar T = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    w[i] = T * beta[i];
    T *= (1.0 - beta[i]);
  }
  M_pred = w.sum();
  I_pred = colors * w + (1.0 - M_pred) * background;
}

void composite_backward(const VecX& beta, const Mat& colors, const Vec3& background,
                        const Vec3& gI, Scalar gM, VecX& g_beta, Mat& g_colors) {
  const Eigen::Index n = beta.size();
  if (colors.cols() != n || colors.rows() != 3)
    throw SchemaError("composite_backward: colors must be 3 x n");
  g_beta.resize(n);
  g_colors.resize(3, n);

  // forward transmittances and weights (cheap to recompute)
  VecX w(n), T(n);
  Scalar acc = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    T[i] = acc;
    w[i] = acc * beta[i];
    acc *= (1.0 - beta[i]);
  }

  // dL/dw_i and color gradient
  VecX gw(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    gw[i] = gI.dot(colors.col(i) - background) + gM;
    g_colors.col(i) = w[i] * gI;
  }

  // g_beta_i = T_i (gw_i - R_i), R_i = beta_{i+1} gw_{i+1} + (1-beta_{i+1}) R_{i+1}
  Scalar R = 0.0;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    g_beta[i] = T[i] * (gw[i] - R);
    R = beta[i] * gw[i] + (1.0 - beta[i]) * R;
  }
}

RaySampleBatch render_ray(const fields::FieldSet& fs, const Ray& ray, const RenderConfig& cfg,
                          std::mt19937_64& rng) {
  cfg.validate();
  RaySampleBatch out;
  if (!ray.hits_bounds) {
    out.background_only = true;
    out.I_pred = cfg.background;
    out.M_pred = 0.0;
    return out;
  }
  ray.validate();

  VecX t = sample_ray(ray, cfg.n_stratified, cfg.perturb, rng);

  // Importance rounds: provisional weights from f and V only; the crossing
  // sign comes from a directional difference along the ray (two extra field
  // evaluations, batched), which matches sign(v . grad f) where it matters.
  const Scalar h = fs.fd_step();
  const Scalar s = fs.sharpness();
  for (int round = 0; round < cfg.importance_rounds; ++round) {
    const Eigen::Index n = t.size();
    Mat probe(3, 3 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 p = ray.o + t[i] * ray.v;
      probe.col(i) = p;
      probe.col(n + i) = p + h * ray.v;
      probe.col(2 * n + i) = p - h * ray.v;
    }
    const VecX fall = fs.sdf(probe);
    const VecX vall = fs.validity(probe.leftCols(n));
    VecX beta(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar sg = (fall[n + i] - fall[2 * n + i]) < 0.0 ? -1.0 : 1.0;
      const Scalar a = (i + 1 < n) ? discrete_alpha(fall[i], fall[i + 1], sg, s) : 0.0;
      beta[i] = a * vall[i];
    }
    VecX w(n);
    Scalar T = 1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      w[i] = T * beta[i];
      T *= (1.0 - beta[i]);
    }
    t = importance_resample(ray, t, w, cfg.importance_samples, rng);
  }

  const Eigen::Index n = t.size();
  out.t = t;
  out.p.resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i) out.p.col(i) = ray.o + t[i] * ray.v;

  out.f = fs.sdf(out.p);
  out.validity = fs.validity(out.p);
  out.color = fs.color(out.p);
  out.n_grad = fs.sdf_gradient(out.p);
  if (!out.f.allFinite() || !out.validity.allFinite() || !out.color.allFinite() ||
      !out.n_grad.allFinite())
    throw NumericError("render_ray: non-finite field output on pixel " +
                       std::to_string(ray.pixel_index));

  out.sign.resize(n);
  out.alpha.resize(n);
  out.beta.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.sign[i] = sign_of_crossing(ray.v, out.n_grad.col(i));
    out.alpha[i] =
        (i + 1 < n) ? discrete_alpha(out.f[i], out.f[i + 1], out.sign[i], s) : 0.0;
    out.beta[i] = out.alpha[i] * out.validity[i];
  }
  composite(out.beta, out.color, cfg.background, out.w, out.I_pred, out.M_pred);
  return out;
}

Ray pixel_ray(const Camera& cam, int ix, int iy, Scalar scene_radius) {
  if (ix < 0 || iy < 0 || ix >= cam.width || iy >= cam.height)
    throw SchemaError("pixel_ray: pixel outside the image");
  if (!(scene_radius > 0.0)) throw SchemaError("pixel_ray: scene radius must be positive");
  Ray r;
  r.o = cam.center();
  r.v = cam.pixel_direction(ix + 0.5, iy + 0.5);
  r.pixel_index = iy * cam.width + ix;

  // |o + t v| = R: t^2 + 2 (o.v) t + |o|^2 - R^2 = 0
  const Scalar b = r.o.dot(r.v);
  const Scalar c = r.o.squaredNorm() - scene_radius * scene_radius;
  const Scalar disc = b * b - c;
  if (disc <= 0.0) {
    r.hits_bounds = false;
    return r;
  }
  const Scalar root = std::sqrt(disc);
  const Scalar t0 = std::max(0.0, -b - root);
  const Scalar t1 = -b + root;
  if (!(t1 > t0)) {
    r.hits_bounds = false;
    return r;
  }
  r.t_near = t0;
  r.t_far = t1;
  return r;
}

std::vector<Ray> generate_rays(const Camera& cam, Scalar scene_radius) {
  cam.validate();
  std::vector<Ray> rays;
  rays.reserve(size_t(cam.width) * size_t(cam.height));
  for (int iy = 0; iy < cam.height; ++iy)
    for (int ix = 0; ix < cam.width; ++ix) rays.push_back(pixel_ray(cam, ix, iy, scene_radius));
  return rays;
}

}  // namespace neat::render
