#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "neat/trainer.hpp"

using namespace neat;
using namespace neat::train;
namespace stdfs = std::filesystem;

namespace {

// small nets so finite differences over every parameter stay cheap
fields::FieldConfig micro_config() {
  fields::FieldConfig cfg = fields::FieldConfig::defaults();
  cfg.sdf.hidden = {16, 16};
  cfg.sdf.encoding_frequencies = 2;
  cfg.validity.hidden = {16};
  cfg.validity.encoding_frequencies = 1;
  cfg.color.hidden = {16};
  cfg.color.encoding_frequencies = 1;
  return cfg;
}

fields::FieldSet micro_fields(std::uint64_t seed) {
  fields::FieldSet fs(micro_config());
  fields::geometric_init(fs, seed);
  return fs;
}

synth::SceneDataset tiny_dataset(fields::SceneKind kind, int views, int res) {
  return synth::make_dataset(fields::AnalyticScene::make(kind), views, 17, res, res);
}

TrainConfig micro_train_config() {
  TrainConfig cfg;
  cfg.iterations = 100;
  cfg.rays_per_batch = 4;
  cfg.render.n_stratified = 16;
  cfg.render.importance_rounds = 0;
  cfg.render.perturb = false;
  cfg.eikonal_points = 8;
  cfg.validity_freeze_fraction = 0.0;
  return cfg;
}

// refs whose rays hit the object (mask on) plus one background ray
std::vector<RayRef> picked_refs(const synth::SceneDataset& ds, int n_hit) {
  std::vector<RayRef> refs;
  const synth::Image8& mask = ds.masks[0];
  for (int p = 0; p < mask.width * mask.height && int(refs.size()) < n_hit; ++p)
    if (mask.pixels[std::size_t(p)] == 255) refs.push_back({0, p});
  REQUIRE(int(refs.size()) == n_hit);
  for (int p = 0; p < mask.width * mask.height; ++p)
    if (mask.pixels[std::size_t(p)] == 0) {
      refs.push_back({0, p});
      break;
    }
  return refs;
}

ad::ParamVector scalar_params(const std::vector<std::string>& names) {
  std::vector<ad::SegmentInfo> layout;
  for (const std::string& n : names) layout.push_back({n, 1, 1, 0});
  return ad::ParamVector(layout);
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  // warmup: 20 iterations of linear ramp on a 1000-iteration run
  CHECK(lr_schedule(0, 1000, 0.02) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(lr_schedule(9, 1000, 0.02) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(lr_schedule(19, 1000, 0.02) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lr_schedule(20, 1000, 0.02) == doctest::Approx(1.0).epsilon(1e-12));  // cosine start
  CHECK(lr_schedule(510, 1000, 0.02) == doctest::Approx(0.5).epsilon(1e-9));  // halfway decay

  Scalar prev = 1.0;
  for (std::int64_t it = 20; it < 1000; it += 7) {
    const Scalar v = lr_schedule(it, 1000, 0.02);
    CHECK(v > 0.0);
    CHECK(v <= prev + 1e-15);
    prev = v;
  }
}

TEST_CASE("per-segment multipliers") {
  LrMultipliers lr;
  lr.sdf = 0.5;
  lr.validity = 2.0;
  lr.color = 1.0;
  lr.sharpness = 4.0;
  CHECK(segment_multiplier("sdf.l0.W", lr) == 0.5);
  CHECK(segment_multiplier("sdf.l3.b", lr) == 0.5);
  CHECK(segment_multiplier("validity.l1.W", lr) == 2.0);
  CHECK(segment_multiplier("color.l0.b", lr) == 1.0);
  CHECK(segment_multiplier("s_log", lr) == 4.0);
  CHECK_THROWS_AS(segment_multiplier("latent.l0.W", lr), SchemaError);
}

TEST_CASE("batch sampling") {
  const auto ds = tiny_dataset(fields::SceneKind::Sphere, 2, 8);

  SUBCASE("exhaustive draw covers every pixel once") {
    std::mt19937_64 rng(4);
    const auto refs = sample_batch(ds, rng, 128, false);
    REQUIRE(refs.size() == 128);
    std::map<std::pair<int, int>, int> seen;
    for (const RayRef& r : refs) seen[{r.view, r.pixel}]++;
    CHECK(seen.size() == 128);
    for (const auto& [key, count] : seen) {
      CHECK(count == 1);
      CHECK(key.first >= 0);
      CHECK(key.first < 2);
      CHECK(key.second >= 0);
      CHECK(key.second < 64);
    }
  }
  SUBCASE("fixed seed reproduces the sequence") {
    std::mt19937_64 a(9), b(9);
    CHECK(sample_batch(ds, a, 64, true) == sample_batch(ds, b, 64, true));
  }
  SUBCASE("view frequencies uniform within 3 sigma") {
    const auto ds4 = tiny_dataset(fields::SceneKind::Sphere, 4, 16);
    std::mt19937_64 rng(12);
    std::vector<int> count(4, 0);
    const int n = 100000;
    for (int k = 0; k < n; k += 1000)
      for (const RayRef& r : sample_batch(ds4, rng, 1000, true)) count[std::size_t(r.view)]++;
    const Scalar expect = n / 4.0;
    const Scalar sigma = std::sqrt(n * 0.25 * 0.75);
    for (int v = 0; v < 4; ++v) CHECK(std::abs(count[std::size_t(v)] - expect) <= 3.0 * sigma);
  }
  SUBCASE("rejects bad sizes") {
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(sample_batch(ds, rng, 0, true), SchemaError);
    CHECK_THROWS_AS(sample_batch(ds, rng, 129, false), SchemaError);
  }
}

TEST_CASE("batch gradient matches finite differences over every parameter") {
  fields::FieldSet fs = micro_fields(3);
  const auto ds = tiny_dataset(fields::SceneKind::Sphere, 2, 16);
  const TrainConfig cfg = micro_train_config();
  const auto refs = picked_refs(ds, 4);

  ad::ParamVector grad = ad::ParamVector::zeros_like(fs.params());
  const losses::LossReport rep = batch_gradient(fs, ds, refs, cfg, 0, &grad);
  REQUIRE(std::isfinite(rep.total));
  CHECK(rep.total == doctest::Approx(rep.rgb + 0.1 * rep.mask + 0.1 * rep.eikonal +
                                     0.01 * rep.bce + 0.01 * rep.sparse)
                         .epsilon(1e-12));

  const Scalar h = 1e-6;
  Scalar worst = 0.0;
  VecX& theta = fs.params().values();
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const Scalar keep = theta[j];
    theta[j] = keep + h;
    const Scalar up = batch_gradient(fs, ds, refs, cfg, 0, nullptr).total;
    theta[j] = keep - h;
    const Scalar dn = batch_gradient(fs, ds, refs, cfg, 0, nullptr).total;
    theta[j] = keep;
    const Scalar fd = (up - dn) / (2.0 * h);
    const Scalar g = grad.values()[j];
    worst = std::max(worst, std::abs(g - fd) / std::max({0.1, std::abs(g), std::abs(fd)}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("validity freeze zeroes exactly the gate gradient") {
  fields::FieldSet fs = micro_fields(5);
  const auto ds = tiny_dataset(fields::SceneKind::Sphere, 2, 16);
  TrainConfig cfg = micro_train_config();
  cfg.validity_freeze_fraction = 0.5;  // frozen while iter < 50
  const auto refs = picked_refs(ds, 4);

  ad::ParamVector g_frozen = ad::ParamVector::zeros_like(fs.params());
  batch_gradient(fs, ds, refs, cfg, 10, &g_frozen);
  ad::ParamVector g_live = ad::ParamVector::zeros_like(fs.params());
  batch_gradient(fs, ds, refs, cfg, 60, &g_live);

  Scalar frozen_validity = 0, live_validity = 0, frozen_sdf = 0;
  for (int i = 0; i < g_frozen.segment_count(); ++i) {
    const std::string& name = g_frozen.segment_info(i).name;
    const Scalar a = g_frozen.segment(i).cwiseAbs().maxCoeff();
    const Scalar b = g_live.segment(i).cwiseAbs().maxCoeff();
    if (name.starts_with("validity.")) {
      frozen_validity = std::max(frozen_validity, a);
      live_validity = std::max(live_validity, b);
    }
    if (name.starts_with("sdf.")) frozen_sdf = std::max(frozen_sdf, a);
  }
  CHECK(frozen_validity == 0.0);
  CHECK(live_validity > 0.0);
  CHECK(frozen_sdf > 0.0);

  // the all-run freeze flag behaves the same at any iteration
  cfg.validity_freeze_fraction = 0.0;
  cfg.freeze_validity = true;
  ad::ParamVector g_flag = ad::ParamVector::zeros_like(fs.params());
  batch_gradient(fs, ds, refs, cfg, 60, &g_flag);
  for (int i = 0; i < g_flag.segment_count(); ++i)
    if (g_flag.segment_info(i).name.starts_with("validity."))
      CHECK(g_flag.segment(i).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ablation flags zero their loss weights") {
  TrainConfig cfg;
  cfg.disable_bce = true;
  CHECK(cfg.effective_weights().bce == 0.0);
  CHECK(cfg.effective_weights().sparse == cfg.weights.sparse);
  cfg.disable_sparse = true;
  CHECK(cfg.effective_weights().sparse == 0.0);
  CHECK(cfg.effective_weights().mask == cfg.weights.mask);
}

TEST_CASE("gradient is identical across thread counts") {
  fields::FieldSet fs = micro_fields(8);
  const auto ds = tiny_dataset(fields::SceneKind::CutSphere, 2, 24);
  TrainConfig cfg = micro_train_config();
  cfg.render.importance_rounds = 1;
  cfg.render.importance_samples = 8;
  cfg.render.perturb = true;
  cfg.eikonal_points = 64;

  auto rng = std::mt19937_64(77);
  const auto refs = sample_batch(ds, rng, 300, true);  // several chunks

  cfg.threads = 1;
  ad::ParamVector g1 = ad::ParamVector::zeros_like(fs.params());
  const losses::LossReport r1 = batch_gradient(fs, ds, refs, cfg, 5, &g1);
  cfg.threads = 3;
  ad::ParamVector g3 = ad::ParamVector::zeros_like(fs.params());
  const losses::LossReport r3 = batch_gradient(fs, ds, refs, cfg, 5, &g3);

  CHECK(r1.total == r3.total);  // bitwise
  CHECK(r1.rgb == r3.rgb);
  CHECK((g1.values().array() == g3.values().array()).all());
}

TEST_CASE("adam: zero gradient leaves parameters in place") {
  fields::FieldSet fs = micro_fields(2);
  const auto ds = tiny_dataset(fields::SceneKind::Sphere, 1, 16);
  TrainConfig cfg = micro_train_config();
  cfg.eikonal_points = 0;

  // corner pixels look past the bounding sphere: no samples, no parameters
  const Camera& cam = ds.cameras[0];
  const std::vector<RayRef> corners{
      {0, 0}, {0, cam.width - 1}, {0, (cam.height - 1) * cam.width}, {0, cam.width * cam.height - 1}};
  for (const RayRef& r : corners) {
    const auto ray = render::pixel_ray(cam, r.pixel % cam.width, r.pixel / cam.width, 1.0);
    REQUIRE_FALSE(ray.hits_bounds);
  }

  const VecX before = fs.params().values();
  OptimizerState state;
  state.reset(fs.params().size());
  step(fs, ds, corners, cfg, 0, state);
  CHECK((fs.params().values().array() == before.array()).all());
}

TEST_CASE("adam: single-parameter quadratic converges") {
  ad::ParamVector theta = scalar_params({"s_log"});
  theta.values()[0] = 0.0;
  ad::ParamVector grad = scalar_params({"s_log"});
  TrainConfig cfg;
  cfg.iterations = 500;
  cfg.base_lr = 0.05;
  cfg.warmup_fraction = 0.0;
  OptimizerState state;
  state.reset(1);
  for (std::int64_t it = 0; it < 500; ++it) {
    grad.values()[0] = theta.values()[0] - 3.0;  // d/dx of (x-3)^2/2
    adam_update(theta, grad, cfg, it, state);
  }
  CHECK(std::abs(theta.values()[0] - 3.0) < 0.05);
}

TEST_CASE("adam: displacement honors the per-segment multipliers") {
  ad::ParamVector theta = scalar_params({"sdf.w", "validity.w", "color.w"});
  ad::ParamVector grad = scalar_params({"sdf.w", "validity.w", "color.w"});
  grad.values().setConstant(1.0);  // equal gradients everywhere
  TrainConfig cfg;
  cfg.iterations = 100;
  OptimizerState state;
  state.reset(3);
  adam_update(theta, grad, cfg, 0, state);
  const Scalar d_sdf = -theta.values()[0];
  const Scalar d_val = -theta.values()[1];
  const Scalar d_col = -theta.values()[2];
  CHECK(d_val / d_sdf == doctest::Approx(4.0).epsilon(1e-9));  // 2.0 / 0.5
  CHECK(d_col / d_sdf == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(d_sdf > 0.0);

  ad::ParamVector other = scalar_params({"sdf.w"});
  CHECK_THROWS_AS(adam_update(theta, other, cfg, 0, state), SchemaError);
}

TEST_CASE("non-finite parameters abort with a diagnostic") {
  fields::FieldSet fs = micro_fields(4);
  const auto ds = tiny_dataset(fields::SceneKind::Sphere, 1, 16);
  const TrainConfig cfg = micro_train_config();
  const auto refs = picked_refs(ds, 4);
  fs.params().values()[10] = std::numeric_limits<Scalar>::quiet_NaN();
  OptimizerState state;
  state.reset(fs.params().size());
  CHECK_THROWS_AS(step(fs, ds, refs, cfg, 0, state), NumericError);
}

TEST_CASE("train loop: zero iterations change nothing") {
  fields::FieldSet fs = micro_fields(6);
  const auto ds = tiny_dataset(fields::SceneKind::Sphere, 1, 16);
  TrainConfig cfg = micro_train_config();
  cfg.iterations = 0;
  const VecX before = fs.params().values();
  const TrainResult res = train::train(ds, fs, cfg);
  CHECK(res.iterations_run == 0);
  CHECK((fs.params().values().array() == before.array()).all());
}

TEST_CASE("train loop: logs, checkpoints, determinism") {
  const auto ds = tiny_dataset(fields::SceneKind::Sphere, 2, 16);
  TrainConfig cfg = micro_train_config();
  cfg.iterations = 6;
  cfg.rays_per_batch = 32;
  cfg.log_every = 2;
  cfg.checkpoint_every = 2;
  cfg.seed = 3;

  const stdfs::path dir = stdfs::temp_directory_path() / "neat_test_train";
  stdfs::remove_all(dir);

  fields::FieldSet fs_a = micro_fields(1);
  const VecX init = fs_a.params().values();
  const TrainResult res = train::train(ds, fs_a, cfg, dir.string());
  CHECK(res.iterations_run == 6);
  CHECK(std::isfinite(res.first_loss.total));
  CHECK(std::isfinite(res.final_loss.total));
  CHECK_FALSE((fs_a.params().values().array() == init.array()).all());

  CHECK(stdfs::exists(dir / "checkpoint_000002.json"));
  CHECK(stdfs::exists(dir / "checkpoint_000004.json"));
  REQUIRE(stdfs::exists(res.checkpoint_path));
  fields::FieldSet loaded;
  CHECK(fields::load_checkpoint(res.checkpoint_path, loaded) == 6);
  CHECK((loaded.params().values().array() == fs_a.params().values().array()).all());

  std::ifstream csv(res.log_path);
  REQUIRE(csv.good());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "iteration,lr_factor,rgb,mask,eikonal,bce,sparse,total,sharpness");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 4);  // iterations 0, 2, 4, and the final 5

  // identical run reproduces the parameters bit for bit
  fields::FieldSet fs_b = micro_fields(1);
  train::train(ds, fs_b, cfg);
  CHECK((fs_b.params().values().array() == fs_a.params().values().array()).all());

  // a different seed diverges
  fields::FieldSet fs_c = micro_fields(1);
  TrainConfig cfg2 = cfg;
  cfg2.seed = 4;
  train::train(ds, fs_c, cfg2);
  CHECK_FALSE((fs_c.params().values().array() == fs_a.params().values().array()).all());

  // resuming from an intermediate point runs the remaining schedule
  fields::FieldSet fs_d = micro_fields(1);
  TrainConfig half = cfg;
  half.iterations = 3;
  train::train(ds, fs_d, half);
  const TrainResult rest = train::train(ds, fs_d, cfg, "", 3);
  CHECK(rest.iterations_run == 3);
  stdfs::remove_all(dir);
}

TEST_CASE("short training run reduces the image loss") {
  const auto ds = tiny_dataset(fields::SceneKind::Sphere, 4, 24);
  fields::FieldSet fs = micro_fields(7);
  TrainConfig cfg = micro_train_config();
  cfg.iterations = 150;
  cfg.rays_per_batch = 96;
  cfg.render.n_stratified = 24;
  cfg.render.importance_rounds = 1;
  cfg.render.importance_samples = 8;
  cfg.render.perturb = true;
  cfg.eikonal_points = 256;
  cfg.seed = 11;
  const TrainResult res = train::train(ds, fs, cfg);
  CHECK(std::isfinite(res.final_loss.total));
  CHECK(res.final_loss.rgb < res.first_loss.rgb);
  CHECK(res.final_loss.mask < res.first_loss.mask);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("negative iterations") {
    cfg.iterations = -1;
    CHECK_THROWS_AS(cfg.validate(), SchemaError);
  }
  SUBCASE("zero multiplier") {
    cfg.lr.validity = 0.0;
    CHECK_THROWS_AS(cfg.validate(), SchemaError);
  }
  SUBCASE("warmup out of range") {
    cfg.warmup_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), SchemaError);
  }
  SUBCASE("bad threads") {
    cfg.threads = 0;
    CHECK_THROWS_AS(cfg.validate(), SchemaError);
  }
}

TEST_CASE("config json round trip") {
  TrainConfig cfg;
  cfg.iterations = 777;
  cfg.rays_per_batch = 96;
  cfg.base_lr = 3e-4;
  cfg.lr.sdf = 0.25;
  cfg.warmup_fraction = 0.05;
  cfg.validity_freeze_fraction = 0.2;
  cfg.seed = 42;
  cfg.weights.mask = 0.3;
  cfg.render.n_stratified = 24;
  cfg.render.background = Vec3(0.1, 0.2, 0.3);
  cfg.render.perturb = true;
  cfg.eikonal_points = 64;
  cfg.disable_sparse = true;
  cfg.checkpoint_every = 123;
  cfg.threads = 2;

  const Json j = train::train_config_to_json(cfg);
  const TrainConfig back = train::train_config_from_json(j);
  CHECK(back.iterations == cfg.iterations);
  CHECK(back.rays_per_batch == cfg.rays_per_batch);
  CHECK(back.base_lr == cfg.base_lr);
  CHECK(back.lr.sdf == cfg.lr.sdf);
  CHECK(back.lr.validity == cfg.lr.validity);
  CHECK(back.warmup_fraction == cfg.warmup_fraction);
  CHECK(back.validity_freeze_fraction == cfg.validity_freeze_fraction);
  CHECK(back.seed == cfg.seed);
  CHECK(back.weights.mask == cfg.weights.mask);
  CHECK(back.render.n_stratified == cfg.render.n_stratified);
  CHECK(back.render.background == cfg.render.background);
  CHECK(back.render.perturb == cfg.render.perturb);
  CHECK(back.eikonal_points == cfg.eikonal_points);
  CHECK(back.disable_sparse == cfg.disable_sparse);
  CHECK(back.checkpoint_every == cfg.checkpoint_every);
  CHECK(back.threads == cfg.threads);
  // Full fixed point: serialize again and compare the JSON text.
  CHECK(train::train_config_to_json(back).dump() == j.dump());

  SUBCASE("partial override keeps defaults elsewhere") {
    const TrainConfig got = train::train_config_from_json(
        Json{{"iterations", 9}, {"lr", {{"color", 7.0}}}});
    CHECK(got.iterations == 9);
    CHECK(got.lr.color == 7.0);
    CHECK(got.lr.sdf == TrainConfig{}.lr.sdf);
    CHECK(got.rays_per_batch == TrainConfig{}.rays_per_batch);
  }
  SUBCASE("unknown top-level key") {
    CHECK_THROWS_AS(train::train_config_from_json(Json{{"bogus", 1}}), SchemaError);
  }
  SUBCASE("unknown nested key") {
    CHECK_THROWS_AS(train::train_config_from_json(Json{{"render", {{"bogus", 1}}}}),
                    SchemaError);
    CHECK_THROWS_AS(train::train_config_from_json(Json{{"weights", {{"rgb", 1.0}}}}),
                    SchemaError);
  }
  SUBCASE("bad background shape") {
    CHECK_THROWS_AS(
        train::train_config_from_json(Json{{"render", {{"background", {0.0, 1.0}}}}}),
        SchemaError);
  }
  SUBCASE("wrong value type") {
    CHECK_THROWS_AS(train::train_config_from_json(Json{{"iterations", "many"}}),
                    SchemaError);
  }
  SUBCASE("invalid after merge") {
    CHECK_THROWS_AS(train::train_config_from_json(Json{{"rays_per_batch", 0}}),
                    SchemaError);
  }
}
