#pragma once

#include <map>
#include <string>
#include <vector>

#include "xpl/trainer.hpp"

namespace xpl {

inline constexpr const char* kHistoryCsvHeader =
    "epoch,ciou_A,auc_A,ciou_B,auc_B,loss_cross,loss_sup,loss_unsup,loss_total,n_selected,mean_rho";

/// One row per epoch. mean_rho is "nan" for epochs without pseudo-labels.
std::string history_csv(const MetricsHistory& h);

struct EvalRow {
  std::string split;
  std::string model;  // "A", "B" or "avg"
  EvalReport report;
};

inline constexpr const char* kEvalCsvHeader = "split,model,ciou,auc,n_samples,empty_warnings";

std::string eval_csv(const std::vector<EvalRow>& rows);

struct Series {
  std::string name;
  std::vector<double> values;  // y per epoch, x = index
};

/// Line chart, one polyline per series, y axis fixed to [0, 100].
std::string svg_line_chart(const std::string& title, const std::vector<Series>& series);

/// Flat key=value text, keys sorted; '#' lines and blanks are ignored on read.
std::string format_kv(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> parse_kv(const std::string& text);

}  // namespace xpl
