#pragma once

#include <span>
#include <vector>

#include "xpl/autodiff.hpp"
#include "xpl/types.hpp"

namespace xpl {

inline constexpr double kDefaultLambdaU = 0.5;
inline constexpr double kDefaultTemperature = 0.07;

/// Mean over cells of -[p log q + (1 - p) log(1 - q)]. pred must lie strictly
/// inside (0, 1); targets are constants.
double bce_pixelwise(const Tensor& target, const Tensor& pred);
ad::Var bce_pixelwise(const Tensor& target, ad::Var pred);

/// Differentiable normalize_map: clamp((x + 1) / 2, eps, 1 - eps).
ad::Var normalize_map(ad::Var cosine_map);

/// Cross pseudo-labeling loss: batch mean of BCE between the OTHER model's
/// pseudo-labels and this model's normalized maps. Same tags are rejected.
ad::Var cross_loss(ModelTag pl_tag, std::span<const Tensor> pseudo_labels, ModelTag map_tag,
                   std::span<const ad::Var> maps);

/// Same kernel with the model's own labels (self-training ablation).
ad::Var self_training_loss(std::span<const Tensor> pseudo_labels, std::span<const ad::Var> maps);

/// Supervised BCE against binary ground-truth masks.
ad::Var sup_loss(std::span<const Tensor> gt_masks, std::span<const ad::Var> maps);

/// Global max pooling of (H*W) x d cell embeddings over cells.
ad::Var global_max_pool(ad::Var cells);

/// Symmetric in-batch InfoNCE over cosine similarities at temperature tau.
ad::Var infonce_loss(std::span<const ad::Var> audio_embs, std::span<const ad::Var> visual_embs, double tau);

struct ModelLosses {
  double cross = 0.0;
  double sup = 0.0;
  double unsup = 0.0;

  double total(double lambda_u) const { return cross + sup + lambda_u * unsup; }
};

struct LossBreakdown {
  double cross = 0.0;
  double sup = 0.0;
  double unsup = 0.0;
  double total = 0.0;
  ModelLosses model_a;
  ModelLosses model_b;
};

/// Sum over both models of cross + sup + lambda_u * unsup.
LossBreakdown total_loss(const ModelLosses& a, const ModelLosses& b, double lambda_u = kDefaultLambdaU);

/// Graph form of one model's objective: cross + sup + lambda_u * unsup. Any
/// term may be absent.
ad::Var model_objective(ad::Graph& g, const ad::Var* cross, const ad::Var* sup, const ad::Var* unsup,
                        double lambda_u);

}  // namespace xpl
