#pragma once

#include <span>
#include <vector>

#include "xpl/types.hpp"

namespace xpl {

/// Cell positive iff normalize_map(value) >= 0.5, i.e. cosine >= 0.
Tensor binarize(const Tensor& cosine_map);
Tensor binarize(const PredictionMap& m);

struct IouResult {
  double value = 0.0;
  bool both_empty = false;
};

/// |pred & gt| / |pred | gt| over binary masks; 0 with a flag when both are empty.
IouResult iou(const Tensor& pred, const Tensor& gt);

struct EvalReport {
  double ciou = 0.0;  // percent of samples with IoU >= 0.5
  double auc = 0.0;   // percent, trapezoid over the success-rate curve
  std::vector<double> per_sample_iou;
  std::size_t n_samples = 0;
  double binarization_threshold = 0.5;
  std::size_t empty_warnings = 0;
};

/// Fraction of ious at or above threshold.
double success_rate(std::span<const double> ious, double threshold);

/// CIoU and AUC from per-sample IoUs. The AUC grid is 0, step, ..., 1.
EvalReport report_from_ious(std::vector<double> ious, double auc_step = 0.05);

EvalReport evaluate(std::span<const PredictionMap> maps, std::span<const Tensor> gts, double auc_step = 0.05);

}  // namespace xpl
