// Command-line front end over the library: dataset synthesis, training,
// image rendering, mesh extraction, evaluation, and ablation suites.
//
// Exit codes: 0 success, 2 argument/schema error, 3 numerical failure.
// Every run writes a resolved-config snapshot next to its outputs
// (resolved_config.json in output directories, <file>.config.json beside
// single-file outputs).

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "neat/fields.hpp"
#include "neat/mesher.hpp"
#include "neat/metrics.hpp"
#include "neat/renderer.hpp"
#include "neat/serialize.hpp"
#include "neat/synth.hpp"
#include "neat/trainer.hpp"
#include "neat/types.hpp"

namespace stdfs = std::filesystem;

using neat::Json;
using neat::NumericError;
using neat::Scalar;
using neat::SchemaError;
using neat::Vec3;

namespace {

// --threads beats NEAT_THREADS; unset means "use the config / default".
std::optional<int> thread_override(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("NEAT_THREADS")) {
    int n = 0;
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw SchemaError(std::string("NEAT_THREADS is not an integer: '") + env + "'");
    }
    if (n <= 0) throw SchemaError("NEAT_THREADS must be positive");
    return n;
  }
  return std::nullopt;
}

// "a.b.c=value": walks/creates object nodes along the dotted path and stores
// the value, parsed as a JSON literal when it is one (so flags can say
// iterations=100, render.perturb=true, or render.background=[0,0,0]); other
// text stays a plain string.  Unknown keys are caught later by the config
// parser, not here.
void apply_override(Json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw SchemaError("override must look like key.path=value, got '" + kv + "'");
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;

  Json* node = &cfg;
  std::size_t start = 0;
  try {
    for (;;) {
      const auto dot = path.find('.', start);
      const std::string key =
          path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (key.empty()) throw SchemaError("override has an empty path segment: '" + kv + "'");
      if (dot == std::string::npos) {
        (*node)[key] = value;
        return;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  } catch (const Json::exception& e) {
    throw SchemaError("override '" + kv + "' does not fit the config structure: " + e.what());
  }
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Scene argument: a kind name (sphere, cut-sphere/cut_sphere, disk, cylinder,
// sheet) or a path to a scene JSON file.
neat::fields::AnalyticScene load_scene_arg(const std::string& arg) {
  if (stdfs::exists(arg)) return neat::fields::scene_from_json(slurp(arg));
  std::string name = arg;
  std::replace(name.begin(), name.end(), '-', '_');
  return neat::fields::AnalyticScene::make(neat::fields::scene_kind_from_string(name));
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  stdfs::create_directories(dir, ec);
  if (ec) throw SchemaError("cannot create directory '" + dir + "': " + ec.message());
}

// Fresh-output discipline: an existing non-empty directory needs --force,
// which replaces the whole directory so no stale files survive.
void prepare_out_dir(const std::string& dir, bool force) {
  if (stdfs::exists(dir)) {
    if (!stdfs::is_directory(dir))
      throw SchemaError("output path '" + dir + "' exists and is not a directory");
    if (stdfs::directory_iterator(dir) != stdfs::directory_iterator{}) {
      if (!force)
        throw SchemaError("output directory '" + dir +
                          "' is not empty; pass --force to overwrite");
      std::error_code ec;
      stdfs::remove_all(dir, ec);
      if (ec) throw SchemaError("cannot clear '" + dir + "': " + ec.message());
    }
  }
  ensure_dir(dir);
}

neat::fields::FieldSet load_fields(const std::string& ckpt) {
  neat::fields::FieldSet f;
  neat::fields::load_checkpoint(ckpt, f);
  return f;
}

// Builds a TrainConfig from an optional config file plus dotted overrides;
// unknown keys are rejected by the parser at every level.
neat::train::TrainConfig build_train_config(const std::string& config_path,
                                            const std::vector<std::string>& overrides,
                                            const std::optional<std::uint64_t>& seed,
                                            std::optional<int> threads, Json* resolved_json) {
  Json cj = config_path.empty() ? Json::object() : neat::load_json_file(config_path);
  for (const std::string& kv : overrides) apply_override(cj, kv);
  if (seed) cj["seed"] = *seed;
  neat::train::TrainConfig cfg = neat::train::train_config_from_json(cj);
  if (threads) cfg.threads = *threads;
  if (resolved_json) *resolved_json = neat::train::train_config_to_json(cfg);
  return cfg;
}

// Renders every pixel of one camera.  Per-pixel hashed RNG streams keep the
// image identical for any thread count.
void render_view(const neat::fields::FieldSet& f, const neat::Camera& cam,
                 const neat::render::RenderConfig& rc, Scalar scene_radius, std::uint64_t seed,
                 int threads, neat::synth::Image8& rgb, neat::synth::Image8& mask) {
  rgb = neat::synth::Image8(cam.width, cam.height, 3);
  mask = neat::synth::Image8(cam.width, cam.height, 1);
  std::atomic<int> next_row{0};
  const auto to_byte = [](Scalar v) {
    return std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  const auto worker = [&] {
    for (;;) {
      const int iy = next_row.fetch_add(1);
      if (iy >= cam.height) return;
      for (int ix = 0; ix < cam.width; ++ix) {
        const neat::render::Ray ray = neat::render::pixel_ray(cam, ix, iy, scene_radius);
        Vec3 I = rc.background;
        Scalar M = 0.0;
        if (ray.hits_bounds) {
          const std::uint64_t pixel = std::uint64_t(iy) * std::uint64_t(cam.width) + ix;
          std::mt19937_64 rng(neat::hash_combine(seed, neat::hash_combine(0xF1u, pixel)));
          const neat::render::RaySampleBatch out = neat::render::render_ray(f, ray, rc, rng);
          I = out.I_pred;
          M = out.M_pred;
        }
        for (int c = 0; c < 3; ++c) rgb.at(ix, iy, c) = to_byte(I[c]);
        mask.at(ix, iy) = to_byte(M);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
}

Json stats_to_json(const neat::mesh::MeshStats& st, std::int64_t nan_warnings) {
  return Json{{"vertices", st.vertex_count},
              {"triangles", st.triangle_count},
              {"edges", st.edge_count},
              {"boundary_edges", st.boundary_edge_count},
              {"boundary_loops", st.boundary_loop_count},
              {"components", st.connected_components},
              {"euler_characteristic", st.euler_characteristic},
              {"watertight", st.watertight()},
              {"nan_warnings", nan_warnings}};
}

Json finite_or_null(Scalar v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

// ---------------------------------------------------------------------------
// Subcommands.  Each throws SchemaError / NumericError; main maps exit codes.

struct SynthArgs {
  std::string scene, out;
  int views = 16, res = 64;
  std::uint64_t seed = 0;
  bool force = false;
};

void cmd_synth(const SynthArgs& a) {
  const neat::fields::AnalyticScene scene = load_scene_arg(a.scene);
  prepare_out_dir(a.out, a.force);
  const neat::synth::SceneDataset ds = neat::synth::make_dataset(scene, a.views, a.seed, a.res, a.res);
  neat::synth::write_dataset(ds, a.out);
  const Json snap{{"command", "synth"},
                  {"scene", Json::parse(neat::fields::scene_to_json(scene))},
                  {"views", a.views},
                  {"res", a.res},
                  {"seed", a.seed}};
  neat::save_json_file(a.out + "/resolved_config.json", snap);
  std::cout << Json{{"out", a.out}, {"views", a.views}, {"res", a.res}}.dump(2) << "\n";
}

struct TrainArgs {
  std::string data, out, config, resume;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

void cmd_train(const TrainArgs& a) {
  Json resolved;
  neat::train::TrainConfig cfg =
      build_train_config(a.config, a.overrides, a.seed, thread_override(a.threads), &resolved);
  const neat::synth::SceneDataset ds = neat::synth::read_dataset(a.data);

  neat::fields::FieldConfig fc = neat::fields::FieldConfig::defaults();
  fc.scene_radius = ds.scene.scene_radius;
  neat::fields::FieldSet f(fc);
  neat::fields::geometric_init(f, cfg.seed);
  std::int64_t start = 0;
  if (!a.resume.empty()) start = neat::fields::load_checkpoint(a.resume, f);

  ensure_dir(a.out);
  const Json snap{{"command", "train"},
                  {"data", a.data},
                  {"resume", a.resume.empty() ? Json(nullptr) : Json(a.resume)},
                  {"start_iteration", start},
                  {"config", resolved}};
  neat::save_json_file(a.out + "/resolved_config.json", snap);

  const neat::train::TrainResult res = neat::train::train(ds, f, cfg, a.out, start);
  std::cout << Json{{"iterations_run", res.iterations_run},
                    {"checkpoint", res.checkpoint_path},
                    {"log", res.log_path},
                    {"first_total", res.first_loss.total},
                    {"final_total", res.final_loss.total},
                    {"final_rgb", res.final_loss.rgb},
                    {"final_mask", res.final_loss.mask}}
                   .dump(2)
            << "\n";
}

struct RenderArgs {
  std::string ckpt, data, out, mask_out;
  int view = 0;
  int samples = 48, importance_rounds = 1, importance_samples = 16;
  std::uint64_t seed = 0;
  int threads = 0;
};

void cmd_render(const RenderArgs& a) {
  const neat::fields::FieldSet f = load_fields(a.ckpt);
  const neat::synth::SceneDataset ds = neat::synth::read_dataset(a.data);
  if (a.view < 0 || a.view >= ds.view_count())
    throw SchemaError("view index " + std::to_string(a.view) + " out of range [0, " +
                      std::to_string(ds.view_count()) + ")");
  neat::render::RenderConfig rc;
  rc.n_stratified = a.samples;
  rc.importance_rounds = a.importance_rounds;
  rc.importance_samples = a.importance_samples;
  rc.validate();

  neat::synth::Image8 rgb, mask;
  render_view(f, ds.cameras[std::size_t(a.view)], rc, ds.scene_radius(), a.seed,
              thread_override(a.threads).value_or(1), rgb, mask);
  neat::synth::write_png(a.out, rgb);
  if (!a.mask_out.empty()) neat::synth::write_png(a.mask_out, mask);

  const Json snap{{"command", "render"}, {"ckpt", a.ckpt},   {"data", a.data},
                  {"view", a.view},      {"seed", a.seed},   {"samples", a.samples},
                  {"importance_rounds", a.importance_rounds}, {"importance_samples", a.importance_samples}};
  neat::save_json_file(a.out + ".config.json", snap);
  std::cout << Json{{"out", a.out},
                    {"view", a.view},
                    {"width", rgb.width},
                    {"height", rgb.height}}
                   .dump(2)
            << "\n";
}

struct ExtractArgs {
  std::string ckpt, scene, out, grid_out;
  int res = 128;
  Scalar threshold = 0.5;
  Scalar bound = 0.0;  // 0: scene radius from the checkpoint / scene
  int threads = 0;
};

void cmd_extract(const ExtractArgs& a) {
  if (a.ckpt.empty() == a.scene.empty())
    throw SchemaError("extract needs exactly one of --ckpt and --scene");

  neat::mesh::ScalarGrid grid;
  if (!a.ckpt.empty()) {
    const neat::fields::FieldSet f = load_fields(a.ckpt);
    const Scalar R = a.bound > 0 ? a.bound : f.config().scene_radius;
    grid = neat::mesh::evaluate_grid(f, {a.res, a.res, a.res}, Vec3(-R, -R, -R), Vec3(R, R, R),
                                     thread_override(a.threads).value_or(1));
  } else {
    const neat::fields::AnalyticScene scene = load_scene_arg(a.scene);
    const Scalar R = a.bound > 0 ? a.bound : scene.scene_radius;
    grid = neat::mesh::analytic_grid(scene, {a.res, a.res, a.res}, Vec3(-R, -R, -R),
                                     Vec3(R, R, R));
  }
  if (!a.grid_out.empty()) neat::mesh::write_grid(grid, a.grid_out);

  const neat::mesh::ScalarGrid masked = neat::mesh::mask_grid(std::move(grid), a.threshold);
  const neat::mesh::TriangleMesh m = neat::mesh::marching_cubes(masked);
  neat::mesh::export_obj(m, a.out);
  const neat::mesh::MeshStats st = neat::mesh::mesh_stats(m);
  if (st.triangle_count == 0)
    std::cerr << "warning: extracted mesh is empty (no validity-masked zero crossing in "
                 "bounds)\n";

  const Json snap{{"command", "extract"},
                  {"ckpt", a.ckpt.empty() ? Json(nullptr) : Json(a.ckpt)},
                  {"scene", a.scene.empty() ? Json(nullptr) : Json(a.scene)},
                  {"res", a.res},
                  {"threshold", a.threshold},
                  {"bound", a.bound},
                  {"grid", a.grid_out.empty() ? Json(nullptr) : Json(a.grid_out)}};
  neat::save_json_file(a.out + ".config.json", snap);
  std::cout << stats_to_json(st, masked.nan_warnings).dump(2) << "\n";
}

struct EvalArgs {
  std::string mesh, scene, ckpt;
  int points = 50000;
  Scalar tau = 0.0;
  std::uint64_t seed = 0;
};

void cmd_eval(const EvalArgs& a) {
  const neat::mesh::TriangleMesh m = neat::mesh::import_obj(a.mesh);
  const neat::fields::AnalyticScene scene = neat::fields::scene_from_json(slurp(a.scene));
  neat::metrics::MetricReport r;
  if (a.ckpt.empty()) {
    r = neat::metrics::evaluate_surface(m, scene, a.points, a.tau, a.seed);
  } else {
    const neat::fields::FieldSet f = load_fields(a.ckpt);
    r = neat::metrics::evaluate_surface(m, f, scene, a.points, a.tau, a.seed);
  }
  std::cout << neat::metrics::metric_report_to_json(r).dump(2) << "\n";
}

struct AblateArgs {
  std::string suite, data, out, config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  int extract_res = 96;
  int points = 20000;
};

struct AblateRow {
  std::string name;
  int views = 0;  // views suite only
  neat::metrics::MetricReport report;
  std::int64_t boundary_edges = 0;
  std::int64_t triangles = 0;
  Scalar statistic = std::numeric_limits<Scalar>::quiet_NaN();
};

// One training + extraction + evaluation pass for an ablation configuration.
AblateRow run_ablation(const std::string& name, const neat::synth::SceneDataset& ds,
                       const neat::train::TrainConfig& cfg, const AblateArgs& a, int views,
                       const Json& resolved) {
  const std::string dir = a.out + "/" + name;
  ensure_dir(dir);
  Json snap{{"command", "ablate"}, {"suite", a.suite}, {"run", name},
            {"data", a.data},      {"config", resolved}};
  if (views > 0) snap["views"] = views;
  neat::save_json_file(dir + "/resolved_config.json", snap);

  neat::fields::FieldConfig fc = neat::fields::FieldConfig::defaults();
  fc.scene_radius = ds.scene.scene_radius;
  neat::fields::FieldSet f(fc);
  neat::fields::geometric_init(f, cfg.seed);
  neat::train::train(ds, f, cfg, dir);

  const Scalar R = ds.scene.scene_radius;
  const neat::mesh::ScalarGrid grid = neat::mesh::mask_grid(
      neat::mesh::evaluate_grid(f, {a.extract_res, a.extract_res, a.extract_res},
                                Vec3(-R, -R, -R), Vec3(R, R, R), cfg.threads),
      0.5);
  const neat::mesh::TriangleMesh m = neat::mesh::marching_cubes(grid);
  neat::mesh::export_obj(m, dir + "/mesh.obj");
  const neat::mesh::MeshStats st = neat::mesh::mesh_stats(m);

  AblateRow row;
  row.name = name;
  row.views = views;
  row.boundary_edges = st.boundary_edge_count;
  row.triangles = st.triangle_count;
  if (st.triangle_count > 0) {
    row.report = neat::metrics::evaluate_surface(m, f, ds.scene, a.points, 0.0, cfg.seed);
  } else {
    row.report.chamfer = std::numeric_limits<Scalar>::quiet_NaN();
    row.report.f_score = std::numeric_limits<Scalar>::quiet_NaN();
    row.report.validity_accuracy =
        neat::metrics::validity_accuracy(f, ds.scene, a.points, cfg.seed);
  }
  if (a.suite == "bce")
    row.statistic = neat::metrics::validity_self_entropy(f, ds.scene, 4096, cfg.seed);
  else if (a.suite == "sparse")
    row.statistic = neat::metrics::mean_excised_validity(f, ds.scene, 4096, cfg.seed);
  return row;
}

void cmd_ablate(const AblateArgs& a) {
  Json resolved;
  const neat::train::TrainConfig base =
      build_train_config(a.config, a.overrides, a.seed, thread_override(a.threads), &resolved);
  const neat::synth::SceneDataset ds = neat::synth::read_dataset(a.data);
  ensure_dir(a.out);

  std::vector<AblateRow> rows;
  if (a.suite == "bce" || a.suite == "sparse") {
    rows.push_back(run_ablation("default", ds, base, a, 0, resolved));
    neat::train::TrainConfig off = base;
    if (a.suite == "bce")
      off.disable_bce = true;
    else
      off.disable_sparse = true;
    Json off_json = neat::train::train_config_to_json(off);
    rows.push_back(
        run_ablation(a.suite == "bce" ? "no_bce" : "no_sparse", ds, off, a, 0, off_json));
  } else if (a.suite == "views") {
    const int w = ds.images.empty() ? 64 : ds.images[0].width;
    const int h = ds.images.empty() ? 64 : ds.images[0].height;
    for (const int v : {8, 16, 32, 64}) {
      const neat::synth::SceneDataset dv =
          neat::synth::make_dataset(ds.scene, v, base.seed, w, h);
      rows.push_back(run_ablation("views_" + std::to_string(v), dv, base, a, v, resolved));
    }
  } else {
    throw SchemaError("unknown ablation suite '" + a.suite + "' (bce, sparse, views)");
  }

  const char* stat_name =
      a.suite == "bce" ? "self_entropy" : (a.suite == "sparse" ? "excised_mean_validity" : "");
  Json jrows = Json::array();
  for (const AblateRow& r : rows) {
    Json jr{{"name", r.name},
            {"chamfer", finite_or_null(r.report.chamfer)},
            {"f_score", finite_or_null(r.report.f_score)},
            {"validity_accuracy", finite_or_null(r.report.validity_accuracy)},
            {"boundary_edges", r.boundary_edges},
            {"triangles", r.triangles}};
    if (r.views > 0) jr["views"] = r.views;
    if (*stat_name) jr[stat_name] = finite_or_null(r.statistic);
    jrows.push_back(jr);
  }
  const Json summary{{"suite", a.suite}, {"runs", jrows}};
  neat::save_json_file(a.out + "/summary.json", summary);

  // Aligned text table, also kept beside the JSON.
  std::ostringstream tbl;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %6s %12s %10s %14s %10s %14s\n", "run", "views",
                "chamfer", "f_score", "validity_acc", "boundary", *stat_name ? stat_name : "-");
  tbl << line;
  const auto num = [](Scalar v, char* buf, std::size_t n) {
    if (std::isfinite(v))
      std::snprintf(buf, n, "%.6f", v);
    else
      std::snprintf(buf, n, "null");
  };
  for (const AblateRow& r : rows) {
    char c1[32], c2[32], c3[32], c4[32];
    num(r.report.chamfer, c1, sizeof c1);
    num(r.report.f_score, c2, sizeof c2);
    num(r.report.validity_accuracy, c3, sizeof c3);
    num(r.statistic, c4, sizeof c4);
    std::snprintf(line, sizeof line, "%-12s %6s %12s %10s %14s %10lld %14s\n", r.name.c_str(),
                  r.views > 0 ? std::to_string(r.views).c_str() : "-", c1, c2, c3,
                  static_cast<long long>(r.boundary_edges), *stat_name ? c4 : "-");
    tbl << line;
  }
  std::ofstream(a.out + "/summary.txt") << tbl.str();
  std::cout << tbl.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural implicit-surface reconstruction pipeline"};
  app.require_subcommand(1);

  SynthArgs sa;
  CLI::App* synth = app.add_subcommand("synth", "Render a synthetic multi-view dataset");
  synth->add_option("--scene", sa.scene, "Scene kind or scene JSON file")->required();
  synth->add_option("--views", sa.views, "Number of viewpoints")->check(CLI::PositiveNumber);
  synth->add_option("--res", sa.res, "Image width and height")->check(CLI::PositiveNumber);
  synth->add_option("--out", sa.out, "Output dataset directory")->required();
  synth->add_option("--seed", sa.seed, "RNG seed");
  synth->add_flag("--force", sa.force, "Overwrite a non-empty output directory");

  TrainArgs ta;
  std::uint64_t ta_seed = 0;
  CLI::App* train = app.add_subcommand("train", "Optimize the fields against a dataset");
  train->add_option("--data", ta.data, "Dataset directory")->required();
  train->add_option("--out", ta.out, "Run output directory")->required();
  train->add_option("--config", ta.config, "Training config JSON")->check(CLI::ExistingFile);
  train->add_option("--set", ta.overrides, "Dotted config override key.path=value");
  train->add_option("--resume", ta.resume, "Checkpoint to continue from")
      ->check(CLI::ExistingFile);
  CLI::Option* ta_seed_opt = train->add_option("--seed", ta_seed, "Override the config seed");
  train->add_option("--threads", ta.threads, "Worker thread cap (env NEAT_THREADS)");

  RenderArgs ra;
  CLI::App* render = app.add_subcommand("render", "Render one dataset view from a checkpoint");
  render->add_option("--ckpt", ra.ckpt, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  render->add_option("--data", ra.data, "Dataset directory supplying the cameras")->required();
  render->add_option("--view", ra.view, "View index");
  render->add_option("--out", ra.out, "Output PNG path")->required();
  render->add_option("--mask", ra.mask_out, "Also write the predicted mask PNG here");
  render->add_option("--samples", ra.samples, "Stratified samples per ray");
  render->add_option("--importance-rounds", ra.importance_rounds, "Importance rounds");
  render->add_option("--importance-samples", ra.importance_samples, "Samples added per round");
  render->add_option("--seed", ra.seed, "RNG seed");
  render->add_option("--threads", ra.threads, "Worker thread cap (env NEAT_THREADS)");

  ExtractArgs xa;
  CLI::App* extract = app.add_subcommand("extract", "Marching-cubes mesh from a checkpoint");
  extract->add_option("--ckpt", xa.ckpt, "Checkpoint JSON")->check(CLI::ExistingFile);
  extract->add_option("--scene", xa.scene,
                      "Analytic scene (kind or JSON) instead of a checkpoint");
  extract->add_option("--res", xa.res, "Grid resolution per axis")->check(CLI::PositiveNumber);
  extract->add_option("--threshold", xa.threshold, "Validity mask threshold");
  extract->add_option("--bound", xa.bound, "Half-extent of the sampling cube");
  extract->add_option("--out", xa.out, "Output OBJ path")->required();
  extract->add_option("--grid", xa.grid_out, "Also dump the raw sampled grid here");
  extract->add_option("--threads", xa.threads, "Worker thread cap (env NEAT_THREADS)");

  EvalArgs ea;
  CLI::App* eval = app.add_subcommand("eval", "Compare a mesh against an analytic scene");
  eval->add_option("--mesh", ea.mesh, "OBJ mesh")->required()->check(CLI::ExistingFile);
  eval->add_option("--scene", ea.scene, "Scene JSON file")->required()->check(CLI::ExistingFile);
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint for validity accuracy")
      ->check(CLI::ExistingFile);
  eval->add_option("--points", ea.points, "Sample count per surface")
      ->check(CLI::PositiveNumber);
  eval->add_option("--tau", ea.tau, "F-score distance threshold (0: 1% of scene radius)");
  eval->add_option("--seed", ea.seed, "RNG seed");

  AblateArgs aa;
  std::uint64_t aa_seed = 0;
  CLI::App* ablate = app.add_subcommand("ablate", "Run an ablation suite");
  ablate->add_option("--suite", aa.suite, "bce | sparse | views")->required();
  ablate->add_option("--data", aa.data, "Dataset directory")->required();
  ablate->add_option("--out", aa.out, "Suite output directory")->required();
  ablate->add_option("--config", aa.config, "Training config JSON")->check(CLI::ExistingFile);
  ablate->add_option("--set", aa.overrides, "Dotted config override key.path=value");
  CLI::Option* aa_seed_opt = ablate->add_option("--seed", aa_seed, "Override the config seed");
  ablate->add_option("--threads", aa.threads, "Worker thread cap (env NEAT_THREADS)");
  ablate->add_option("--extract-res", aa.extract_res, "Mesh extraction resolution")
      ->check(CLI::PositiveNumber);
  ablate->add_option("--points", aa.points, "Metric sample count")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
    if (ta_seed_opt->count()) ta.seed = ta_seed;
    if (aa_seed_opt->count()) aa.seed = aa_seed;
    if (synth->parsed()) cmd_synth(sa);
    if (train->parsed()) cmd_train(ta);
    if (render->parsed()) cmd_render(ra);
    if (extract->parsed()) cmd_extract(xa);
    if (eval->parsed()) cmd_eval(ea);
    if (ablate->parsed()) cmd_ablate(aa);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // --help exits 0; real argument errors exit 2
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
