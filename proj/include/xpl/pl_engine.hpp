#pragma once

// Soft pseudo-label machinery: map normalization, sharpening, the per-model
// EMA memory bank, Pearson consensus and curriculum selection.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "xpl/types.hpp"

namespace xpl {

inline constexpr double kMapEpsilon = 1e-6;
inline constexpr double kConsensusFloor = 0.8;

/// x -> clamp((x + 1) / 2, eps, 1 - eps); maps cosine values into (0, 1).
Tensor normalize_map(const Tensor& cosine);
double normalize_value(double cosine);

/// Logistic sharpening centred on 0.5: 1 / (1 + exp(-a (x - 0.5))).
Tensor sharpen(const Tensor& probs, double a);
double sharpen_value(double x, double a);

/// sharpen(normalize_map(m), a).
Tensor make_instant_pl(const PredictionMap& m, double a);

/// Hard 0/1 targets: normalized value >= 0.5 maps to 1.
Tensor make_hard_pl(const PredictionMap& m);

struct PseudoLabel {
  Tensor values;
  std::int64_t last_update_step = 0;

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

/// Memory bank of historical pseudo-labels, one entry per (model, sample).
class PseudoLabelBank {
 public:
  using Key = std::pair<ModelTag, std::int64_t>;

  const PseudoLabel* find(ModelTag k, std::int64_t sample_id) const;
  bool contains(ModelTag k, std::int64_t sample_id) const { return find(k, sample_id) != nullptr; }
  std::size_t size() const { return entries_.size(); }
  const std::map<Key, PseudoLabel>& entries() const { return entries_; }

  /// First update stores instant as-is; later ones blend
  /// beta * previous + (1 - beta) * instant. Steps must strictly increase.
  const PseudoLabel& ema_update(ModelTag k, std::int64_t sample_id, const Tensor& instant, double beta,
                                std::int64_t step);

  /// Replaces the entry without blending (used when EMA is disabled).
  const PseudoLabel& overwrite(ModelTag k, std::int64_t sample_id, const Tensor& values, std::int64_t step);

  void write(std::ostream& os) const;
  static PseudoLabelBank read(std::istream& is);

  friend bool operator==(const PseudoLabelBank&, const PseudoLabelBank&) = default;

 private:
  std::map<Key, PseudoLabel> entries_;
};

/// Pearson correlation over the flattened cells. Throws std::domain_error
/// when either map is constant.
double pearson(const Tensor& a, const Tensor& b);
double pearson(const PredictionMap& a, const PredictionMap& b);

struct SelectionSchedule {
  double delta = kConsensusFloor;
  double hard_floor = kConsensusFloor;
  std::size_t warmup_epochs = 0;
  std::size_t total_epochs = 1;
  double start_fraction = 0.1;
  double ramp_end_fraction = 0.6;  // of total epochs

  /// 0 during warmup, then linear from start_fraction up to 1 at
  /// ramp_end_fraction * total_epochs; 1 from there on.
  double ramp_fraction(std::size_t epoch) const;
};

/// Labeled ids plus the top ceil(ramp * |eligible|) unlabeled ids by
/// descending rho, where eligible means rho > max(delta, hard_floor).
/// Ties in rho go to the lower sample id.
std::set<std::int64_t> curriculum_select(const std::map<std::int64_t, double>& rhos,
                                         const std::set<std::int64_t>& labeled, double ramp_fraction,
                                         const SelectionSchedule& schedule);

}  // namespace xpl
