#pragma once

#include "neat/fields.hpp"
#include "neat/types.hpp"

// The five training losses and their weighted sum. All take batched inputs
// (one column / entry per ray or point) and return means over the batch.
namespace neat::losses {

// Every probability entering a logarithm is clamped to [eps, 1-eps].
inline constexpr Scalar kClampEps = 1e-7;

struct LossWeights {
  Scalar mask = 0.1;
  Scalar eikonal = 0.1;
  Scalar bce = 0.01;
  Scalar sparse = 0.01;
  void validate() const;  // finite, non-negative
};

struct LossReport {
  Scalar rgb = 0.0;
  Scalar mask = 0.0;
  Scalar eikonal = 0.0;
  Scalar bce = 0.0;
  Scalar sparse = 0.0;
  Scalar total = 0.0;
  Eigen::Index n_rays = 0;
  Eigen::Index n_eikonal_points = 0;
  Eigen::Index n_validity_points = 0;
};

// Masked color error: per ray the sum of absolute channel differences times
// the binary mask, averaged over all rays in the batch.
Scalar rgb_loss(const Mat& I_pred, const Mat& I_gt, const VecX& M_gt);

// Mean binary cross-entropy between predicted and ground-truth masks.
Scalar mask_loss(const VecX& M_pred, const VecX& M_gt);

// Mean squared deviation of the SDF spatial gradient norm from 1, gradients
// by central differences (step fs.fd_step()).
Scalar eikonal_loss(const fields::FieldSet& fs, const Mat& points);
// Same, over precomputed gradients (3 x N).
Scalar eikonal_from_gradients(const Mat& grads);

// Mean self-entropy -[V ln V + (1-V) ln(1-V)]; drives validity toward 0/1.
Scalar bce_validity_loss(const VecX& validities);

// Mean validity; penalizing it prefers carving when color/mask allow it.
Scalar sparse_loss(const VecX& validities);

// Fills in the weighted total; the per-term fields of `terms` must already
// hold unweighted values.
LossReport total_loss(LossReport terms, const LossWeights& weights);

}  // namespace neat::losses
