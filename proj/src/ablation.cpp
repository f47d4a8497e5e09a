#include "xpl/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "xpl/text_io.hpp"

namespace xpl {

std::vector<AblationEntry> ablation_grid(const TrainConfig& base) {
  TrainConfig full = base;
  full.mode = Mode::Xpl;
  full.ablation = {};

  std::vector<AblationEntry> out;
  out.push_back({"xpl", full});
  auto with = [&](const char* name, auto edit) {
    TrainConfig c = full;
    edit(c);
    out.push_back({name, c});
  };
  with("no_plema", [](TrainConfig& c) { c.ablation.no_plema = true; });
  with("no_sharpen", [](TrainConfig& c) { c.ablation.no_sharpen = true; });
  with("no_cross_refine", [](TrainConfig& c) { c.ablation.no_cross_refine = true; });
  with("no_data_selection", [](TrainConfig& c) { c.ablation.no_data_selection = true; });
  with("vanilla_hard_pl", [](TrainConfig& c) { c.mode = Mode::VanillaHardPl; });
  with("sup_only", [](TrainConfig& c) { c.mode = Mode::SupOnly; });
  for (double b : kBetaSweep) {
    TrainConfig c = full;
    c.beta = b;
    out.push_back({"beta_" + format_csv(b), c});
  }
  return out;
}

namespace {

AblationRow run_one(const Dataset& data, const AblationEntry& e, std::uint64_t seed) {
  TrainConfig cfg = e.cfg;
  cfg.seed = seed;
  const auto res = run_experiment(data, cfg);
  const auto& last = res.history.records.back();
  AblationRow row;
  row.config = e.name;
  row.seed = seed;
  row.ciou_a = last.ciou_a;
  row.auc_a = last.auc_a;
  row.ciou_b = last.ciou_b;
  row.auc_b = last.auc_b;
  row.tail_std_a = res.history.tail_ciou_std();
  row.openset_ciou_a = row.openset_auc_a = std::numeric_limits<double>::quiet_NaN();
  if (data.has_split(Split::OpensetTest)) {
    const auto os = evaluate_split(res.a.params, res.b.params, data, Split::OpensetTest);
    row.openset_ciou_a = os.a.ciou;
    row.openset_auc_a = os.a.auc;
  }
  return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const Dataset& data, const TrainConfig& base,
                                      std::span<const std::uint64_t> seeds, const AblationProgress& progress) {
  if (seeds.empty()) throw std::invalid_argument("run_ablation: no seeds");
  const auto grid = ablation_grid(base);
  for (const auto& e : grid) e.cfg.validate();

  // Distinct configurations per seed; duplicates point at their first copy.
  std::vector<std::size_t> source(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    source[i] = i;
    for (std::size_t j = 0; j < i; ++j) {
      if (grid[j].cfg == grid[i].cfg) {
        source[i] = j;
        break;
      }
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> jobs;  // (seed index, grid index)
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (source[i] == i) jobs.emplace_back(s, i);
    }
  }

  std::vector<AblationRow> computed(seeds.size() * grid.size());
  std::exception_ptr error;
  const auto n_jobs = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t j = 0; j < n_jobs; ++j) {
    const auto [s, i] = jobs[static_cast<std::size_t>(j)];
    try {
      auto row = run_one(data, grid[i], seeds[s]);
#pragma omp critical(xpl_ablation)
      {
        if (progress) progress(row);
      }
      computed[s * grid.size() + i] = std::move(row);
    } catch (...) {
#pragma omp critical(xpl_ablation_error)
      {
        if (!error) error = std::current_exception();
      }
    }
  }
  if (error) std::rethrow_exception(error);

  std::vector<AblationRow> rows;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      AblationRow r = computed[s * grid.size() + source[i]];
      r.config = grid[i].name;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty input");
  std::sort(v.begin(), v.end(), [](double a, double b) {
    // NaNs sort last so they only matter when they dominate
    if (std::isnan(a)) return false;
    if (std::isnan(b)) return true;
    return a < b;
  });
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const AblationRow*>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.config)) order.push_back(r.config);
    groups[r.config].push_back(&r);
  }
  std::vector<AblationSummary> out;
  for (const auto& name : order) {
    const auto& g = groups[name];
    auto med = [&](double AblationRow::*field) {
      std::vector<double> v;
      for (const auto* r : g) v.push_back(r->*field);
      return median(std::move(v));
    };
    out.push_back({name, med(&AblationRow::ciou_a), med(&AblationRow::auc_a), med(&AblationRow::openset_ciou_a),
                   med(&AblationRow::openset_auc_a), med(&AblationRow::tail_std_a)});
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << kAblationCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.config << ',' << r.seed << ',' << format_csv(r.ciou_a) << ',' << format_csv(r.auc_a) << ','
       << format_csv(r.ciou_b) << ',' << format_csv(r.auc_b) << ',' << format_csv(r.openset_ciou_a) << ','
       << format_csv(r.openset_auc_a) << ',' << format_csv(r.tail_std_a) << '\n';
  }
  os << '\n' << kAblationSummaryHeader << '\n';
  for (const auto& s : summarize(rows)) {
    os << s.config << ',' << format_csv(s.ciou_a) << ',' << format_csv(s.auc_a) << ','
       << format_csv(s.openset_ciou_a) << ',' << format_csv(s.openset_auc_a) << ',' << format_csv(s.tail_std_a)
       << '\n';
  }
  return os.str();
}

}  // namespace xpl
