#include "neat/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <thread>

namespace neat::train {

namespace stdfs = std::filesystem;

void TrainConfig::validate() const {
  if (iterations < 0) throw SchemaError("train: iterations must be non-negative");
  if (rays_per_batch < 1) throw SchemaError("train: rays_per_batch must be positive");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr))
    throw SchemaError("train: base_lr must be positive");
  for (Scalar m : {lr.sdf, lr.validity, lr.color, lr.sharpness})
    if (!(m > 0.0) || !std::isfinite(m))
      throw SchemaError("train: learning-rate multipliers must be positive");
  if (!(warmup_fraction >= 0.0) || !(warmup_fraction < 1.0))
    throw SchemaError("train: warmup_fraction must lie in [0, 1)");
  if (!(validity_freeze_fraction >= 0.0) || !(validity_freeze_fraction < 1.0))
    throw SchemaError("train: validity_freeze_fraction must lie in [0, 1)");
  weights.validate();
  render.validate();
  if (eikonal_points < 0) throw SchemaError("train: eikonal_points must be non-negative");
  if (checkpoint_every < 0) throw SchemaError("train: checkpoint_every must be non-negative");
  if (log_every < 1) throw SchemaError("train: log_every must be positive");
  if (threads < 1) throw SchemaError("train: threads must be positive");
}

losses::LossWeights TrainConfig::effective_weights() const {
  losses::LossWeights w = weights;
  if (disable_bce) w.bce = 0.0;
  if (disable_sparse) w.sparse = 0.0;
  return w;
}

Json train_config_to_json(const TrainConfig& cfg) {
  return Json{
      {"iterations", cfg.iterations},
      {"rays_per_batch", cfg.rays_per_batch},
      {"base_lr", cfg.base_lr},
      {"warmup_fraction", cfg.warmup_fraction},
      {"validity_freeze_fraction", cfg.validity_freeze_fraction},
      {"seed", cfg.seed},
      {"eikonal_points", cfg.eikonal_points},
      {"disable_bce", cfg.disable_bce},
      {"disable_sparse", cfg.disable_sparse},
      {"freeze_validity", cfg.freeze_validity},
      {"checkpoint_every", cfg.checkpoint_every},
      {"log_every", cfg.log_every},
      {"threads", cfg.threads},
      {"weights",
       Json{{"mask", cfg.weights.mask},
            {"eikonal", cfg.weights.eikonal},
            {"bce", cfg.weights.bce},
            {"sparse", cfg.weights.sparse}}},
      {"render",
       Json{{"n_stratified", cfg.render.n_stratified},
            {"importance_rounds", cfg.render.importance_rounds},
            {"importance_samples", cfg.render.importance_samples},
            {"background",
             {cfg.render.background[0], cfg.render.background[1], cfg.render.background[2]}},
            {"perturb", cfg.render.perturb}}},
      {"lr",
       Json{{"sdf", cfg.lr.sdf},
            {"validity", cfg.lr.validity},
            {"color", cfg.lr.color},
            {"sharpness", cfg.lr.sharpness}}},
  };
}

namespace {

template <typename T>
void fetch(const Json& j, const char* key, T& into, const char* context) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw SchemaError(std::string(context) + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig cfg;  // defaults
  require_keys(j,
               {"iterations", "rays_per_batch", "base_lr", "warmup_fraction",
                "validity_freeze_fraction", "seed", "eikonal_points", "disable_bce",
                "disable_sparse", "freeze_validity", "checkpoint_every", "log_every", "threads",
                "weights", "render", "lr"},
               "train config");
  fetch(j, "iterations", cfg.iterations, "train config");
  fetch(j, "rays_per_batch", cfg.rays_per_batch, "train config");
  fetch(j, "base_lr", cfg.base_lr, "train config");
  fetch(j, "warmup_fraction", cfg.warmup_fraction, "train config");
  fetch(j, "validity_freeze_fraction", cfg.validity_freeze_fraction, "train config");
  fetch(j, "seed", cfg.seed, "train config");
  fetch(j, "eikonal_points", cfg.eikonal_points, "train config");
  fetch(j, "disable_bce", cfg.disable_bce, "train config");
  fetch(j, "disable_sparse", cfg.disable_sparse, "train config");
  fetch(j, "freeze_validity", cfg.freeze_validity, "train config");
  fetch(j, "checkpoint_every", cfg.checkpoint_every, "train config");
  fetch(j, "log_every", cfg.log_every, "train config");
  fetch(j, "threads", cfg.threads, "train config");
  if (j.contains("weights")) {
    const Json& w = j.at("weights");
    require_keys(w, {"mask", "eikonal", "bce", "sparse"}, "train config: weights");
    fetch(w, "mask", cfg.weights.mask, "train config: weights");
    fetch(w, "eikonal", cfg.weights.eikonal, "train config: weights");
    fetch(w, "bce", cfg.weights.bce, "train config: weights");
    fetch(w, "sparse", cfg.weights.sparse, "train config: weights");
  }
  if (j.contains("render")) {
    const Json& r = j.at("render");
    require_keys(r, {"n_stratified", "importance_rounds", "importance_samples", "background",
                     "perturb"},
                 "train config: render");
    fetch(r, "n_stratified", cfg.render.n_stratified, "train config: render");
    fetch(r, "importance_rounds", cfg.render.importance_rounds, "train config: render");
    fetch(r, "importance_samples", cfg.render.importance_samples, "train config: render");
    fetch(r, "perturb", cfg.render.perturb, "train config: render");
    if (r.contains("background")) {
      try {
        for (int a = 0; a < 3; ++a)
          cfg.render.background[a] = r.at("background").at(std::size_t(a)).get<Scalar>();
        if (r.at("background").size() != 3) throw SchemaError("");
      } catch (const std::exception&) {
        throw SchemaError("train config: render.background must be three numbers");
      }
    }
  }
  if (j.contains("lr")) {
    const Json& m = j.at("lr");
    require_keys(m, {"sdf", "validity", "color", "sharpness"}, "train config: lr");
    fetch(m, "sdf", cfg.lr.sdf, "train config: lr");
    fetch(m, "validity", cfg.lr.validity, "train config: lr");
    fetch(m, "color", cfg.lr.color, "train config: lr");
    fetch(m, "sharpness", cfg.lr.sharpness, "train config: lr");
  }
  cfg.validate();
  return cfg;
}

Scalar lr_schedule(std::int64_t iter, std::int64_t total, Scalar warmup_fraction) {
  if (total <= 0) return 1.0;
  const std::int64_t warm =
      std::max<std::int64_t>(1, std::llround(warmup_fraction * Scalar(total)));
  if (iter < warm) return Scalar(iter + 1) / Scalar(warm);
  const Scalar progress =
      std::min(1.0, Scalar(iter - warm) / Scalar(std::max<std::int64_t>(1, total - warm)));
  return 0.5 * (1.0 + std::cos(kPi * progress));
}

Scalar segment_multiplier(const std::string& segment, const LrMultipliers& lr) {
  if (segment == "s_log") return lr.sharpness;
  const std::string prefix = segment.substr(0, segment.find('.'));
  if (prefix == "sdf") return lr.sdf;
  if (prefix == "validity") return lr.validity;
  if (prefix == "color") return lr.color;
  throw SchemaError("train: no learning-rate multiplier for segment '" + segment + "'");
}

// ---------------------------------------------------------------------------
// batching

std::vector<RayRef> sample_batch(const synth::SceneDataset& ds, std::mt19937_64& rng,
                                 int size, bool with_replacement) {
  if (ds.cameras.empty()) throw SchemaError("batch: dataset has no views");
  if (size < 1) throw SchemaError("batch: size must be positive");
  std::vector<std::int64_t> prefix(ds.cameras.size() + 1, 0);
  for (std::size_t v = 0; v < ds.cameras.size(); ++v)
    prefix[v + 1] = prefix[v] + std::int64_t(ds.cameras[v].width) * ds.cameras[v].height;
  const std::int64_t total = prefix.back();
  const auto to_ref = [&](std::int64_t u) {
    const auto it = std::upper_bound(prefix.begin(), prefix.end(), u);
    const int view = int(it - prefix.begin()) - 1;
    return RayRef{view, int(u - prefix[std::size_t(view)])};
  };
  std::vector<RayRef> out;
  out.reserve(std::size_t(size));
  if (with_replacement) {
    std::uniform_int_distribution<std::int64_t> U(0, total - 1);
    for (int k = 0; k < size; ++k) out.push_back(to_ref(U(rng)));
  } else {
    if (size > total) throw SchemaError("batch: size exceeds the dataset pixel count");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(total));
    std::iota(idx.begin(), idx.end(), std::int64_t(0));
    for (int k = 0; k < size; ++k) {
      std::uniform_int_distribution<std::int64_t> U(k, total - 1);
      std::swap(idx[std::size_t(k)], idx[std::size_t(U(rng))]);
      out.push_back(to_ref(idx[std::size_t(k)]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// the fused forward/reverse pass

namespace {

constexpr std::uint64_t kStreamBatch = 0xB5;
constexpr std::uint64_t kStreamRay = 0x5A;
constexpr std::uint64_t kStreamEikonal = 0xE1;
constexpr int kChunkRays = 128;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t a,
                       std::uint64_t b = 0) {
  return std::mt19937_64(hash_combine(hash_combine(hash_combine(seed, purpose), a), b));
}

// element of losses::mask_loss / bce_validity_loss, with the same clamping
Scalar bce_value(Scalar p, Scalar y) {
  const Scalar pc = std::clamp(p, losses::kClampEps, 1.0 - losses::kClampEps);
  return -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
}
Scalar bce_deriv(Scalar p, Scalar y) {
  if (p <= losses::kClampEps || p >= 1.0 - losses::kClampEps) return 0.0;
  return -y / p + (1.0 - y) / (1.0 - p);
}
Scalar entropy_value(Scalar v) { return bce_value(v, std::clamp(v, 0.0, 1.0)); }
Scalar entropy_deriv(Scalar v) {
  if (v <= losses::kClampEps || v >= 1.0 - losses::kClampEps) return 0.0;
  return std::log((1.0 - v) / v);
}

struct BatchData {
  std::vector<render::Ray> rays;
  Mat rgb_gt;    // 3 x n
  VecX mask_gt;  // n, {0,1}
};

BatchData gather_batch(const synth::SceneDataset& ds, const std::vector<RayRef>& refs) {
  BatchData b;
  const int n = int(refs.size());
  b.rays.reserve(std::size_t(n));
  b.rgb_gt.resize(3, n);
  b.mask_gt.resize(n);
  for (int i = 0; i < n; ++i) {
    const RayRef& rf = refs[std::size_t(i)];
    if (rf.view < 0 || rf.view >= int(ds.cameras.size()))
      throw SchemaError("batch: view index out of range");
    const Camera& cam = ds.cameras[std::size_t(rf.view)];
    if (rf.pixel < 0 || rf.pixel >= cam.width * cam.height)
      throw SchemaError("batch: pixel index out of range");
    const int ix = rf.pixel % cam.width;
    const int iy = rf.pixel / cam.width;
    render::Ray ray = render::pixel_ray(cam, ix, iy, ds.scene_radius());
    b.rays.push_back(ray);
    for (int c = 0; c < 3; ++c)
      b.rgb_gt(c, i) = Scalar(ds.images[std::size_t(rf.view)].at(ix, iy, c)) / 255.0;
    b.mask_gt[i] = ds.masks[std::size_t(rf.view)].at(ix, iy) > 0 ? 1.0 : 0.0;
  }
  return b;
}

struct ChunkOut {
  Scalar rgb = 0, mask = 0, bce = 0, sparse = 0, eikonal = 0;  // raw sums
  ad::ParamVector grad;
  bool has_grad = false;
};

// One chunk of rays: sampling (with tapeless provisional evaluations for the
// importance rounds), a single taped forward per network over all chunk
// samples, per-ray compositing + losses, hand-assembled cotangents, and one
// reverse sweep per tape.
ChunkOut process_ray_chunk(const fields::FieldSet& fs, const BatchData& bd, int r0, int r1,
                           const TrainConfig& cfg, std::int64_t iter, bool want_grad,
                           bool train_validity, int n_rays_total, int n_validity_total) {
  ChunkOut out;
  if (want_grad) {
    out.grad = ad::ParamVector::zeros_like(fs.params());
    out.has_grad = true;
  }
  const losses::LossWeights w = cfg.effective_weights();
  const Scalar s = fs.sharpness();
  const Scalar h = fs.fd_step();
  const Vec3 bg = cfg.render.background;
  const int n_total = cfg.render.total_samples();

  std::vector<int> live;
  for (int r = r0; r < r1; ++r) {
    if (bd.rays[std::size_t(r)].hits_bounds) {
      live.push_back(r);
    } else {
      // no samples: the ray renders pure background with zero mask
      out.rgb += bd.mask_gt[r] * (bg - bd.rgb_gt.col(r)).cwiseAbs().sum();
      out.mask += bce_value(0.0, bd.mask_gt[r]);
    }
  }
  const int R = int(live.size());
  if (R == 0) return out;

  // -- sample depths; provisional passes batch the whole chunk --
  std::vector<VecX> ts(static_cast<std::size_t>(R));
  std::vector<std::mt19937_64> rngs;
  rngs.reserve(std::size_t(R));
  for (int k = 0; k < R; ++k) {
    rngs.push_back(stream(cfg.seed, kStreamRay, std::uint64_t(iter), std::uint64_t(live[std::size_t(k)])));
    ts[std::size_t(k)] = render::sample_ray(bd.rays[std::size_t(live[std::size_t(k)])],
                                            cfg.render.n_stratified, cfg.render.perturb,
                                            rngs[std::size_t(k)]);
  }
  for (int round = 0; round < cfg.render.importance_rounds; ++round) {
    const int cur = cfg.render.n_stratified + round * cfg.render.importance_samples;
    Mat probe(3, 3 * R * cur);  // [positions | +h v | -h v]
    for (int k = 0; k < R; ++k) {
      const render::Ray& ray = bd.rays[std::size_t(live[std::size_t(k)])];
      for (int i = 0; i < cur; ++i) {
        const Vec3 p = ray.o + ts[std::size_t(k)][i] * ray.v;
        probe.col(k * cur + i) = p;
        probe.col(R * cur + k * cur + i) = p + h * ray.v;
        probe.col(2 * R * cur + k * cur + i) = p - h * ray.v;
      }
    }
    const VecX f3 = fs.sdf(probe);
    const VecX V = fs.validity(probe.leftCols(R * cur));
    for (int k = 0; k < R; ++k) {
      const int off = k * cur;
      VecX beta(cur);
      for (int i = 0; i < cur; ++i) {
        Scalar a = 0.0;
        if (i + 1 < cur) {
          const Scalar sgn = f3[R * cur + off + i] >= f3[2 * R * cur + off + i] ? 1.0 : -1.0;
          a = render::discrete_alpha(f3[off + i], f3[off + i + 1], sgn, s);
        }
        beta[i] = a * V[off + i];
      }
      VecX wts;
      Vec3 dummy_I;
      Scalar dummy_M;
      render::composite(beta, Mat::Zero(3, cur), bg, wts, dummy_I, dummy_M);
      ts[std::size_t(k)] = render::importance_resample(bd.rays[std::size_t(live[std::size_t(k)])],
                                                       ts[std::size_t(k)], wts,
                                                       cfg.render.importance_samples,
                                                       rngs[std::size_t(k)]);
    }
  }

  // -- final pass: taped forward on the samples, tapeless sign probes --
  const int cols = R * n_total;
  Mat P(3, cols), Pside(3, 2 * cols);
  for (int k = 0; k < R; ++k) {
    const render::Ray& ray = bd.rays[std::size_t(live[std::size_t(k)])];
    for (int i = 0; i < n_total; ++i) {
      const Vec3 p = ray.o + ts[std::size_t(k)][i] * ray.v;
      P.col(k * n_total + i) = p;
      Pside.col(k * n_total + i) = p + h * ray.v;
      Pside.col(cols + k * n_total + i) = p - h * ray.v;
    }
  }
  ad::Tape tape_f, tape_v, tape_c;
  const VecX f = fs.sdf(P, want_grad ? &tape_f : nullptr);
  const VecX fside = fs.sdf(Pside);
  const VecX V = fs.validity(P, want_grad && train_validity ? &tape_v : nullptr);
  const Mat C = fs.color(P, want_grad ? &tape_c : nullptr);

  Mat cot_f, cot_v, cot_c;
  if (want_grad) {
    cot_f = Mat::Zero(1, cols);
    cot_v = Mat::Zero(1, cols);
    cot_c = Mat::Zero(3, cols);
  }
  Scalar gs_total = 0.0;

  VecX alpha(n_total), beta(n_total), wts;
  std::vector<render::AlphaGrad> ag(static_cast<std::size_t>(n_total));
  for (int k = 0; k < R; ++k) {
    const int r = live[std::size_t(k)];
    const int off = k * n_total;
    for (int i = 0; i < n_total; ++i) {
      if (i + 1 == n_total) {
        ag[std::size_t(i)] = render::AlphaGrad{};  // no successor: opacity 0
      } else {
        const Scalar sgn = fside[off + i] >= fside[cols + off + i] ? 1.0 : -1.0;
        ag[std::size_t(i)] = render::discrete_alpha_grad(f[off + i], f[off + i + 1], sgn, s);
      }
      alpha[i] = ag[std::size_t(i)].alpha;
      beta[i] = alpha[i] * V[off + i];
    }
    const Mat C_ray = C.middleCols(off, n_total);
    Vec3 I;
    Scalar M;
    render::composite(beta, C_ray, bg, wts, I, M);

    out.rgb += bd.mask_gt[r] * (I - bd.rgb_gt.col(r)).cwiseAbs().sum();
    out.mask += bce_value(M, bd.mask_gt[r]);
    for (int i = 0; i < n_total; ++i) {
      out.bce += entropy_value(V[off + i]);
      out.sparse += V[off + i];
    }

    if (!want_grad) continue;
    Vec3 gI;
    for (int c = 0; c < 3; ++c) {
      const Scalar d = I[c] - bd.rgb_gt(c, r);
      gI[c] = bd.mask_gt[r] / Scalar(n_rays_total) * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
    const Scalar gM = w.mask / Scalar(n_rays_total) * bce_deriv(M, bd.mask_gt[r]);
    VecX g_beta;
    Mat g_colors;
    render::composite_backward(beta, C_ray, bg, gI, gM, g_beta, g_colors);
    cot_c.middleCols(off, n_total) = g_colors;
    for (int i = 0; i < n_total; ++i) {
      const Scalar g_alpha = g_beta[i] * V[off + i];
      cot_f(0, off + i) += g_alpha * ag[std::size_t(i)].d_fi;
      if (i + 1 < n_total) cot_f(0, off + i + 1) += g_alpha * ag[std::size_t(i)].d_fj;
      gs_total += g_alpha * ag[std::size_t(i)].d_s;
      cot_v(0, off + i) += g_beta[i] * alpha[i];
      // validity regularizers ride the same tape
      cot_v(0, off + i) += w.bce / Scalar(n_validity_total) * entropy_deriv(V[off + i]);
      cot_v(0, off + i) += w.sparse / Scalar(n_validity_total);
    }
  }

  if (want_grad) {
    ad::backward(tape_f, cot_f, out.grad);
    if (train_validity) ad::backward(tape_v, cot_v, out.grad);
    ad::backward(tape_c, cot_c, out.grad);
    out.grad.segment("s_log")(0, 0) += gs_total * s;  // d s / d s_log = s
  }
  return out;
}

// Gradient-norm regularizer on its own point set: half the points sit on
// random batch rays (near the visual hull), half are uniform in the scene
// ball. Six probes per point reproduce the central differences of
// fields::sdf_gradient on one shared tape.
ChunkOut process_eikonal(const fields::FieldSet& fs, const BatchData& bd,
                         const TrainConfig& cfg, std::int64_t iter, bool want_grad) {
  ChunkOut out;
  const int E = cfg.eikonal_points;
  if (E == 0) return out;
  if (want_grad) {
    out.grad = ad::ParamVector::zeros_like(fs.params());
    out.has_grad = true;
  }
  auto rng = stream(cfg.seed, kStreamEikonal, std::uint64_t(iter));
  const Scalar radius = fs.config().scene_radius;
  std::normal_distribution<Scalar> N01;
  std::uniform_real_distribution<Scalar> U01(0.0, 1.0);
  Mat pts(3, E);
  const int E_ray = E / 2;
  for (int i = 0; i < E; ++i) {
    bool placed = false;
    if (i < E_ray && !bd.rays.empty()) {
      std::uniform_int_distribution<int> pick(0, int(bd.rays.size()) - 1);
      const render::Ray& ray = bd.rays[std::size_t(pick(rng))];
      const Scalar u = U01(rng);
      if (ray.hits_bounds) {
        pts.col(i) = ray.o + (ray.t_near + u * (ray.t_far - ray.t_near)) * ray.v;
        placed = true;
      }
    }
    if (!placed) {
      Vec3 d(N01(rng), N01(rng), N01(rng));
      const Scalar dn = d.norm();
      d = dn > 1e-12 ? Vec3(d / dn) : Vec3(1, 0, 0);
      pts.col(i) = radius * std::cbrt(U01(rng)) * d;
    }
  }
  const Scalar h = fs.fd_step();
  Mat probes(3, 6 * E);
  for (int i = 0; i < E; ++i)
    for (int a = 0; a < 3; ++a) {
      Vec3 hi = pts.col(i), lo = pts.col(i);
      hi[a] += h;
      lo[a] -= h;
      probes.col(6 * i + 2 * a) = hi;
      probes.col(6 * i + 2 * a + 1) = lo;
    }
  ad::Tape tape;
  const VecX fv = fs.sdf(probes, want_grad ? &tape : nullptr);
  Mat cot;
  if (want_grad) cot = Mat::Zero(1, 6 * E);
  const Scalar w_eik = cfg.effective_weights().eikonal / Scalar(E);
  for (int i = 0; i < E; ++i) {
    Vec3 g;
    for (int a = 0; a < 3; ++a) g[a] = (fv[6 * i + 2 * a] - fv[6 * i + 2 * a + 1]) / (2.0 * h);
    const Scalar nrm = g.norm();
    out.eikonal += (nrm - 1.0) * (nrm - 1.0);
    if (want_grad && nrm > 1e-12) {
      const Scalar c = w_eik * 2.0 * (nrm - 1.0) / nrm / (2.0 * h);
      for (int a = 0; a < 3; ++a) {
        cot(0, 6 * i + 2 * a) += c * g[a];
        cot(0, 6 * i + 2 * a + 1) -= c * g[a];
      }
    }
  }
  if (want_grad) ad::backward(tape, cot, out.grad);
  return out;
}

}  // namespace

losses::LossReport batch_gradient(const fields::FieldSet& fs, const synth::SceneDataset& ds,
                                  const std::vector<RayRef>& batch, const TrainConfig& cfg,
                                  std::int64_t iter, ad::ParamVector* grad) {
  if (batch.empty()) throw SchemaError("batch: no rays");
  const BatchData bd = gather_batch(ds, batch);
  const int n_rays = int(batch.size());
  int n_bounded = 0;
  for (const render::Ray& r : bd.rays) n_bounded += r.hits_bounds ? 1 : 0;
  const int n_validity = n_bounded * cfg.render.total_samples();
  const std::int64_t freeze_end =
      std::llround(cfg.validity_freeze_fraction * Scalar(cfg.iterations));
  const bool train_validity = !cfg.freeze_validity && iter >= freeze_end;
  const bool want_grad = grad != nullptr;
  if (want_grad) *grad = ad::ParamVector::zeros_like(fs.params());

  const int ray_chunks = (n_rays + kChunkRays - 1) / kChunkRays;
  const int n_chunks = ray_chunks + 1;  // the eikonal point set rides along
  std::vector<ChunkOut> results(static_cast<std::size_t>(n_chunks));
  std::atomic<int> next{0};
  const auto worker = [&] {
    for (int c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) {
      if (c < ray_chunks) {
        results[std::size_t(c)] = process_ray_chunk(
            fs, bd, c * kChunkRays, std::min(n_rays, (c + 1) * kChunkRays), cfg, iter,
            want_grad, train_validity, n_rays, n_validity);
      } else {
        results[std::size_t(c)] = process_eikonal(fs, bd, cfg, iter, want_grad);
      }
    }
  };
  const int n_threads = std::max(1, std::min(cfg.threads, n_chunks));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  // fixed-order reduction keeps results identical across thread counts
  losses::LossReport rep;
  for (const ChunkOut& c : results) {
    rep.rgb += c.rgb;
    rep.mask += c.mask;
    rep.bce += c.bce;
    rep.sparse += c.sparse;
    rep.eikonal += c.eikonal;
    if (want_grad && c.has_grad) grad->values() += c.grad.values();
  }
  rep.rgb /= Scalar(n_rays);
  rep.mask /= Scalar(n_rays);
  rep.bce = n_validity > 0 ? rep.bce / Scalar(n_validity) : 0.0;
  rep.sparse = n_validity > 0 ? rep.sparse / Scalar(n_validity) : 0.0;
  rep.eikonal = cfg.eikonal_points > 0 ? rep.eikonal / Scalar(cfg.eikonal_points) : 0.0;
  rep.n_rays = n_rays;
  rep.n_eikonal_points = cfg.eikonal_points;
  rep.n_validity_points = n_validity;
  return losses::total_loss(rep, cfg.effective_weights());
}

void adam_update(ad::ParamVector& params, const ad::ParamVector& grad, const TrainConfig& cfg,
                 std::int64_t iter, OptimizerState& state) {
  if (!params.same_layout(grad)) throw SchemaError("adam: gradient layout differs from params");
  if (state.m.size() != params.size()) state.reset(params.size());
  ++state.step_count;
  constexpr Scalar b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const VecX& g = grad.values();
  state.m = b1 * state.m + (1.0 - b1) * g;
  state.meansq = (b2 * state.meansq.array() + (1.0 - b2) * g.array().square()).matrix();
  const Scalar corr1 = 1.0 - std::pow(b1, Scalar(state.step_count));
  const Scalar corr2 = 1.0 - std::pow(b2, Scalar(state.step_count));
  const Scalar sched = lr_schedule(iter, cfg.iterations, cfg.warmup_fraction);
  VecX& theta = params.values();
  for (int i = 0; i < grad.segment_count(); ++i) {
    const ad::SegmentInfo& seg = grad.segment_info(i);
    const Scalar lr = cfg.base_lr * sched * segment_multiplier(seg.name, cfg.lr);
    const auto m_hat = state.m.segment(seg.offset, seg.size()).array() / corr1;
    const auto v_hat = state.meansq.segment(seg.offset, seg.size()).array() / corr2;
    theta.segment(seg.offset, seg.size()).array() -= lr * m_hat / (v_hat.sqrt() + eps);
  }
}

losses::LossReport step(fields::FieldSet& fs, const synth::SceneDataset& ds,
                        const std::vector<RayRef>& batch, const TrainConfig& cfg,
                        std::int64_t iter, OptimizerState& state) {
  ad::ParamVector grad = ad::ParamVector::zeros_like(fs.params());
  const losses::LossReport rep = batch_gradient(fs, ds, batch, cfg, iter, &grad);
  if (!std::isfinite(rep.total))
    throw NumericError("training loss is not finite at iteration " + std::to_string(iter) +
                       " (first ray: view " + std::to_string(batch.front().view) +
                       ", pixel " + std::to_string(batch.front().pixel) + ")");
  for (int i = 0; i < grad.segment_count(); ++i)
    if (!grad.segment(i).allFinite())
      throw NumericError("gradient for segment '" + grad.segment_info(i).name +
                         "' is not finite at iteration " + std::to_string(iter));
  adam_update(fs.params(), grad, cfg, iter, state);
  return rep;
}

TrainResult train(const synth::SceneDataset& ds, fields::FieldSet& fs, const TrainConfig& cfg,
                  const std::string& out_dir, std::int64_t start_iteration) {
  cfg.validate();
  ds.validate();
  if (start_iteration < 0 || start_iteration > cfg.iterations)
    throw SchemaError("train: start_iteration outside [0, iterations]");
  TrainResult res;
  OptimizerState state;
  state.reset(fs.params().size());
  std::ofstream csv;
  if (!out_dir.empty()) {
    stdfs::create_directories(out_dir);
    res.log_path = (stdfs::path(out_dir) / "loss.csv").string();
    csv.open(res.log_path, start_iteration > 0 ? std::ios::app : std::ios::out);
    if (!csv) throw SchemaError("cannot write '" + res.log_path + "'");
    csv << std::setprecision(10);
    if (start_iteration == 0)
      csv << "iteration,lr_factor,rgb,mask,eikonal,bce,sparse,total,sharpness\n";
  }
  bool first = true;
  for (std::int64_t iter = start_iteration; iter < cfg.iterations; ++iter) {
    auto rng = stream(cfg.seed, kStreamBatch, std::uint64_t(iter));
    const std::vector<RayRef> batch = sample_batch(ds, rng, cfg.rays_per_batch, true);
    const losses::LossReport rep = step(fs, ds, batch, cfg, iter, state);
    if (first) {
      res.first_loss = rep;
      first = false;
    }
    res.final_loss = rep;
    ++res.iterations_run;
    const bool last = iter + 1 == cfg.iterations;
    if (csv.is_open() && (iter % cfg.log_every == 0 || last)) {
      csv << iter << ',' << lr_schedule(iter, cfg.iterations, cfg.warmup_fraction) << ','
          << rep.rgb << ',' << rep.mask << ',' << rep.eikonal << ',' << rep.bce << ','
          << rep.sparse << ',' << rep.total << ',' << fs.sharpness() << '\n';
      csv.flush();  // long runs stay observable from outside
    }
    if (!out_dir.empty() && cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 &&
        !last) {
      char name[40];
      std::snprintf(name, sizeof name, "checkpoint_%06lld.json", (long long)(iter + 1));
      fields::save_checkpoint((stdfs::path(out_dir) / name).string(), fs, iter + 1);
    }
  }
  if (!out_dir.empty()) {
    res.checkpoint_path = (stdfs::path(out_dir) / "checkpoint_final.json").string();
    fields::save_checkpoint(res.checkpoint_path, fs, cfg.iterations);
  }
  return res;
}

}  // namespace neat::train
