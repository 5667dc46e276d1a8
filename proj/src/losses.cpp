#include "neat/losses.hpp"

#include <cmath>

namespace neat::losses {

void LossWeights::validate() const {
  for (Scalar v : {mask, eikonal, bce, sparse})
    if (!std::isfinite(v) || v < 0.0)
      throw SchemaError("loss weights must be finite and non-negative");
}

namespace {

inline Scalar clamp_prob(Scalar p) {
  return std::clamp(p, kClampEps, 1.0 - kClampEps);
}

}  // namespace

Scalar rgb_loss(const Mat& I_pred, const Mat& I_gt, const VecX& M_gt) {
  const Eigen::Index n = I_pred.cols();
  if (I_pred.rows() != 3 || I_gt.rows() != 3 || I_gt.cols() != n || M_gt.size() != n)
    throw SchemaError("rgb_loss: mismatched batch shapes");
  if (n == 0) return 0.0;
  return ((I_pred - I_gt).cwiseAbs().colwise().sum().transpose().array() * M_gt.array()).mean();
}

Scalar mask_loss(const VecX& M_pred, const VecX& M_gt) {
  const Eigen::Index n = M_pred.size();
  if (M_gt.size() != n) throw SchemaError("mask_loss: mismatched batch shapes");
  if (n == 0) return 0.0;
  Scalar acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar p = clamp_prob(M_pred[i]);
    acc -= M_gt[i] * std::log(p) + (1.0 - M_gt[i]) * std::log(1.0 - p);
  }
  return acc / Scalar(n);
}

Scalar eikonal_from_gradients(const Mat& grads) {
  if (grads.rows() != 3) throw SchemaError("eikonal: gradients must be 3 x N");
  if (grads.cols() == 0) return 0.0;
  return (grads.colwise().norm().array() - 1.0).square().mean();
}

Scalar eikonal_loss(const fields::FieldSet& fs, const Mat& points) {
  return eikonal_from_gradients(fs.sdf_gradient(points));
}

Scalar bce_validity_loss(const VecX& validities) {
  const Eigen::Index n = validities.size();
  if (n == 0) return 0.0;
  Scalar acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar v = clamp_prob(validities[i]);
    acc -= v * std::log(v) + (1.0 - v) * std::log(1.0 - v);
  }
  return acc / Scalar(n);
}

Scalar sparse_loss(const VecX& validities) {
  if (validities.size() == 0) return 0.0;
  return validities.mean();
}

LossReport total_loss(LossReport terms, const LossWeights& weights) {
  weights.validate();
  terms.total = terms.rgb + weights.mask * terms.mask + weights.eikonal * terms.eikonal +
                weights.bce * terms.bce + weights.sparse * terms.sparse;
  return terms;
}

}  // namespace neat::losses
