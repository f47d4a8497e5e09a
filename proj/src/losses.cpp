#include "xpl/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "xpl/pl_engine.hpp"

namespace xpl {

namespace {

void require_open_unit(std::span<const double> pred) {
  for (double q : pred) {
    if (!(q > 0.0 && q < 1.0)) throw std::domain_error("bce: prediction must lie strictly inside (0, 1)");
  }
}

ad::Var batch_mean(std::span<const ad::Var> terms) {
  if (terms.empty()) throw std::invalid_argument("loss: empty batch");
  ad::Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return ad::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

ad::Var bce_batch(std::span<const Tensor> targets, std::span<const ad::Var> maps) {
  if (targets.size() != maps.size()) throw std::invalid_argument("loss: targets/maps length mismatch");
  std::vector<ad::Var> terms;
  terms.reserve(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i) terms.push_back(bce_pixelwise(targets[i], normalize_map(maps[i])));
  return batch_mean(terms);
}

}  // namespace

double bce_pixelwise(const Tensor& target, const Tensor& pred) {
  if (target.size() != pred.size()) throw std::invalid_argument("bce: shape mismatch");
  require_open_unit(pred.values());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = target[i], q = pred[i];
    s -= p * std::log(q) + (1.0 - p) * std::log(1.0 - q);
  }
  return s / static_cast<double>(pred.size());
}

ad::Var bce_pixelwise(const Tensor& target, ad::Var pred) {
  if (target.size() != pred.value().size()) throw std::invalid_argument("bce: shape mismatch");
  require_open_unit(pred.value().values());
  auto& g = pred.graph();
  std::vector<double> comp(target.size());
  for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = 1.0 - target[i];
  const ad::Var p = g.constant(Tensor(pred.shape(), target.data()));
  const ad::Var one_minus_p = g.constant(Tensor(pred.shape(), std::move(comp)));
  const ad::Var log_q = ad::log(pred);
  const ad::Var log_1mq = ad::log(ad::add_scalar(ad::scale(pred, -1.0), 1.0));
  return ad::scale(ad::mean(ad::add(ad::mul(p, log_q), ad::mul(one_minus_p, log_1mq))), -1.0);
}

ad::Var normalize_map(ad::Var cosine_map) {
  return ad::clamp(ad::add_scalar(ad::scale(cosine_map, 0.5), 0.5), kMapEpsilon, 1.0 - kMapEpsilon);
}

ad::Var cross_loss(ModelTag pl_tag, std::span<const Tensor> pseudo_labels, ModelTag map_tag,
                   std::span<const ad::Var> maps) {
  if (pl_tag == map_tag) {
    throw std::invalid_argument(std::string("cross_loss: pseudo-labels of model ") + tag_char(pl_tag) +
                                " cannot supervise the same model");
  }
  return bce_batch(pseudo_labels, maps);
}

ad::Var self_training_loss(std::span<const Tensor> pseudo_labels, std::span<const ad::Var> maps) {
  return bce_batch(pseudo_labels, maps);
}

ad::Var sup_loss(std::span<const Tensor> gt_masks, std::span<const ad::Var> maps) {
  for (const auto& gt : gt_masks) {
    for (double v : gt.values()) {
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("sup_loss: ground truth must be binary");
    }
  }
  return bce_batch(gt_masks, maps);
}

ad::Var global_max_pool(ad::Var cells) { return ad::reduce_max(cells, ad::Axis::Rows); }

ad::Var infonce_loss(std::span<const ad::Var> audio_embs, std::span<const ad::Var> visual_embs, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("infonce_loss: temperature must be positive");
  if (audio_embs.empty() || audio_embs.size() != visual_embs.size()) {
    throw std::invalid_argument("infonce_loss: need n >= 1 aligned audio/visual embeddings");
  }
  const std::size_t n = audio_embs.size();
  const ad::Var visual = ad::stack_rows(visual_embs);
  // logits[i][j] = s(A_i, V_j) / tau
  std::vector<ad::Var> rows;
  rows.reserve(n);
  for (const auto& a : audio_embs) rows.push_back(ad::cosine_rows(visual, a));
  const ad::Var logits = ad::scale(ad::stack_rows(rows), 1.0 / tau);
  const ad::Var logits_t = ad::transpose(logits);
  std::vector<ad::Var> terms;
  terms.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ad::Var diag = ad::element(logits, i * n + i);
    const ad::Var a2v = ad::sub(ad::log_sum_exp(ad::row(logits, i)), diag);
    const ad::Var v2a = ad::sub(ad::log_sum_exp(ad::row(logits_t, i)), diag);
    terms.push_back(ad::add(a2v, v2a));
  }
  return batch_mean(terms);
}

LossBreakdown total_loss(const ModelLosses& a, const ModelLosses& b, double lambda_u) {
  LossBreakdown out;
  out.model_a = a;
  out.model_b = b;
  out.cross = a.cross + b.cross;
  out.sup = a.sup + b.sup;
  out.unsup = a.unsup + b.unsup;
  out.total = a.total(lambda_u) + b.total(lambda_u);
  return out;
}

ad::Var model_objective(ad::Graph& g, const ad::Var* cross, const ad::Var* sup, const ad::Var* unsup,
                        double lambda_u) {
  std::vector<ad::Var> parts;
  if (cross) parts.push_back(*cross);
  if (sup) parts.push_back(*sup);
  if (unsup) parts.push_back(ad::scale(*unsup, lambda_u));
  if (parts.empty()) return g.constant(Tensor::scalar(0.0));
  ad::Var acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = ad::add(acc, parts[i]);
  return acc;
}

}  // namespace xpl
