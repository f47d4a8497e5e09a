#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xpl/trainer.hpp"

namespace xpl {

struct AblationEntry {
  std::string name;
  TrainConfig cfg;
};

inline constexpr double kBetaSweep[] = {0.1, 0.3, 0.5, 0.7, 0.9};

/// The seven component configurations followed by the beta sweep. Every
/// entry inherits the non-varied fields of base.
std::vector<AblationEntry> ablation_grid(const TrainConfig& base);

struct AblationRow {
  std::string config;
  std::uint64_t seed = 0;
  double ciou_a = 0.0;
  double auc_a = 0.0;
  double ciou_b = 0.0;
  double auc_b = 0.0;
  double openset_ciou_a = 0.0;  // NaN when the dataset has no openset split
  double openset_auc_a = 0.0;
  double tail_std_a = 0.0;
};

struct AblationSummary {
  std::string config;
  double ciou_a = 0.0;
  double auc_a = 0.0;
  double openset_ciou_a = 0.0;
  double openset_auc_a = 0.0;
  double tail_std_a = 0.0;
};

using AblationProgress = std::function<void(const AblationRow&)>;

/// Runs every grid entry for every seed. Entries whose configuration equals
/// an earlier one for the same seed reuse its result. Rows come back in
/// seed-major, grid order.
std::vector<AblationRow> run_ablation(const Dataset& data, const TrainConfig& base,
                                      std::span<const std::uint64_t> seeds, const AblationProgress& progress = {});

double median(std::vector<double> v);

/// Per-config medians over seeds, in first-appearance order.
std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows);

inline constexpr const char* kAblationCsvHeader =
    "config,seed,ciou_A,auc_A,ciou_B,auc_B,openset_ciou_A,openset_auc_A,tail_std_ciou_A";
inline constexpr const char* kAblationSummaryHeader =
    "summary,median_ciou_A,median_auc_A,median_openset_ciou_A,median_openset_auc_A,median_tail_std_ciou_A";

/// Per-seed rows, a blank line, then the summary block with its own header.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace xpl
