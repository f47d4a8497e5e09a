#include "xpl/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "xpl/pl_engine.hpp"

namespace xpl {

Tensor binarize(const Tensor& cosine_map) {
  std::vector<double> out(cosine_map.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = normalize_value(cosine_map[i]) >= 0.5 ? 1.0 : 0.0;
  return Tensor(cosine_map.shape(), std::move(out));
}

Tensor binarize(const PredictionMap& m) { return binarize(m.values); }

IouResult iou(const Tensor& pred, const Tensor& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("iou: shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > 0.5, g = gt[i] > 0.5;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  if (uni == 0) return {0.0, true};
  return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

double success_rate(std::span<const double> ious, double threshold) {
  if (ious.empty()) return 0.0;
  std::size_t hits = 0;
  for (double v : ious) hits += v >= threshold ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

EvalReport report_from_ious(std::vector<double> ious, double auc_step) {
  if (ious.empty()) throw std::invalid_argument("evaluate: no samples");
  if (!(auc_step > 0.0 && auc_step <= 1.0)) throw std::invalid_argument("evaluate: bad AUC step");
  EvalReport r;
  r.n_samples = ious.size();
  r.ciou = 100.0 * success_rate(ious, 0.5);
  const auto steps = static_cast<std::size_t>(std::llround(1.0 / auc_step));
  double area = 0.0;
  double prev = success_rate(ious, 0.0);
  for (std::size_t k = 1; k <= steps; ++k) {
    // Thresholds are built from the integer index so 0.05 * 20 hits 1 exactly.
    const double theta = static_cast<double>(k) / static_cast<double>(steps);
    const double cur = success_rate(ious, theta);
    area += 0.5 * (prev + cur) / static_cast<double>(steps);
    prev = cur;
  }
  r.auc = 100.0 * area;
  r.per_sample_iou = std::move(ious);
  return r;
}

EvalReport evaluate(std::span<const PredictionMap> maps, std::span<const Tensor> gts, double auc_step) {
  if (maps.size() != gts.size()) throw std::invalid_argument("evaluate: maps and masks not aligned");
  if (maps.empty()) throw std::invalid_argument("evaluate: no samples");
  std::vector<double> ious;
  ious.reserve(maps.size());
  std::size_t warnings = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto res = iou(binarize(maps[i]), gts[i]);
    warnings += res.both_empty ? 1 : 0;
    ious.push_back(res.value);
  }
  auto r = report_from_ious(std::move(ious), auc_step);
  r.empty_warnings = warnings;
  return r;
}

}  // namespace xpl
