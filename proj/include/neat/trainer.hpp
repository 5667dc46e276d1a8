#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "neat/fields.hpp"
#include "neat/losses.hpp"
#include "neat/renderer.hpp"
#include "neat/serialize.hpp"
#include "neat/synth.hpp"

// The optimization loop: pixel batching, the fused forward/reverse pass of
// the full rendering objective, Adam updates with per-network learning
// rates, warmup + cosine schedule, checkpoints, and ablation toggles.
namespace neat::train {

struct LrMultipliers {
  Scalar sdf = 0.5;  // the geometry moves slower than the gate
  Scalar validity = 2.0;
  Scalar color = 1.0;
  // The surface-crossing bias of the rendered silhouette scales like 1/s, so s
  // must grow orders of magnitude within a run; a plain 1x step on log s is far
  // too slow to get there.
  Scalar sharpness = 10.0;
};

struct TrainConfig {
  std::int64_t iterations = 20000;
  int rays_per_batch = 512;
  Scalar base_lr = 5e-4;
  LrMultipliers lr;
  Scalar warmup_fraction = 0.02;          // linear ramp, then cosine decay
  Scalar validity_freeze_fraction = 0.20; // gate held fixed while the SDF forms
  std::uint64_t seed = 0;
  losses::LossWeights weights;
  render::RenderConfig render;
  int eikonal_points = 2048;  // per step; half near rays, half uniform in the ball
  bool disable_bce = false;    // ablation: drop the validity entropy term
  bool disable_sparse = false; // ablation: drop the validity sparsity term
  bool freeze_validity = false;  // gate fixed for the entire run
  std::int64_t checkpoint_every = 5000;  // 0 = only the final checkpoint
  std::int64_t log_every = 50;
  int threads = 1;

  void validate() const;  // throws SchemaError
  // Loss weights with the ablation toggles applied.
  losses::LossWeights effective_weights() const;
};

// JSON round trip for config files and resolved-run snapshots.  Parsing
// starts from the defaults, overrides the keys present, rejects unknown keys
// at every level, and validates the result.
Json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);

struct OptimizerState {
  VecX m, meansq;  // Adam moment estimates, parameter layout
  std::int64_t step_count = 0;

  void reset(Eigen::Index n) {
    m = VecX::Zero(n);
    meansq = VecX::Zero(n);
    step_count = 0;
  }
};

// Schedule factor in (0, 1]: linear ramp over the warmup window, then cosine
// decay toward zero across the remaining iterations.
Scalar lr_schedule(std::int64_t iter, std::int64_t total, Scalar warmup_fraction);

// Per-segment learning-rate multiplier by segment name prefix ("sdf.l0.W" ->
// sdf, "s_log" -> sharpness). Unknown prefixes are a layout error.
Scalar segment_multiplier(const std::string& segment, const LrMultipliers& lr);

struct RayRef {
  int view = 0;
  int pixel = 0;  // flat iy * width + ix
  bool operator==(const RayRef&) const = default;
};

// Uniform over (view, pixel). Without replacement, size must not exceed the
// pixel count and size == total yields every pixel exactly once.
std::vector<RayRef> sample_batch(const synth::SceneDataset& ds, std::mt19937_64& rng,
                                 int size, bool with_replacement = true);

// Loss of one batch under the full objective plus, when grad is non-null,
// its gradient in the layout of fs.params(). Deterministic in (cfg.seed,
// iter): sample jitter and eikonal draws come from hashed per-ray streams,
// so the result is independent of cfg.threads. Freezing the validity gate
// zeroes its parameter gradient (the gate still multiplies the forward pass).
losses::LossReport batch_gradient(const fields::FieldSet& fs, const synth::SceneDataset& ds,
                                  const std::vector<RayRef>& batch, const TrainConfig& cfg,
                                  std::int64_t iter, ad::ParamVector* grad);

// Adam update (beta1 0.9, beta2 0.999, eps 1e-8) with per-segment learning
// rate base_lr x multiplier x lr_schedule(iter). Layouts must match; the
// state re-initializes itself when its size disagrees.
void adam_update(ad::ParamVector& params, const ad::ParamVector& grad,
                 const TrainConfig& cfg, std::int64_t iter, OptimizerState& state);

// One optimization step: batch_gradient + adam_update. Throws NumericError
// naming the offending segment on a non-finite gradient, and naming the
// iteration and first ray of the batch on a non-finite loss.
losses::LossReport step(fields::FieldSet& fs, const synth::SceneDataset& ds,
                        const std::vector<RayRef>& batch, const TrainConfig& cfg,
                        std::int64_t iter, OptimizerState& state);

struct TrainResult {
  losses::LossReport first_loss;  // measured at iteration 0 before any update
  losses::LossReport final_loss;
  std::int64_t iterations_run = 0;
  std::string checkpoint_path;  // final checkpoint, empty when out_dir is
  std::string log_path;         // loss CSV, empty when out_dir is
};

// Runs the loop for cfg.iterations steps starting at start_iteration (so a
// loaded checkpoint continues its schedule; Adam moments restart). When
// out_dir is non-empty, writes loss.csv, periodic checkpoint_NNNNNN.json,
// and checkpoint_final.json there.
TrainResult train(const synth::SceneDataset& ds, fields::FieldSet& fs, const TrainConfig& cfg,
                  const std::string& out_dir = "", std::int64_t start_iteration = 0);

}  // namespace neat::train
