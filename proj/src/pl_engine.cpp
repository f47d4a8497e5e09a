#include "xpl/pl_engine.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "xpl/text_io.hpp"

namespace xpl {

double normalize_value(double cosine) {
  return std::clamp((cosine + 1.0) / 2.0, kMapEpsilon, 1.0 - kMapEpsilon);
}

Tensor normalize_map(const Tensor& cosine) {
  std::vector<double> out(cosine.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = normalize_value(cosine[i]);
  return Tensor(cosine.shape(), std::move(out));
}

double sharpen_value(double x, double a) {
  if (!(a > 0.0)) throw std::invalid_argument("sharpen: smoothness a must be positive");
  const double z = a * (x - 0.5);
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

Tensor sharpen(const Tensor& probs, double a) {
  if (!(a > 0.0)) throw std::invalid_argument("sharpen: smoothness a must be positive");
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sharpen_value(probs[i], a);
  return Tensor(probs.shape(), std::move(out));
}

Tensor make_instant_pl(const PredictionMap& m, double a) { return sharpen(normalize_map(m.values), a); }

Tensor make_hard_pl(const PredictionMap& m) {
  std::vector<double> out(m.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = normalize_value(m.values[i]) >= 0.5 ? 1.0 : 0.0;
  return Tensor(m.values.shape(), std::move(out));
}

const PseudoLabel* PseudoLabelBank::find(ModelTag k, std::int64_t sample_id) const {
  auto it = entries_.find({k, sample_id});
  return it == entries_.end() ? nullptr : &it->second;
}

namespace {

void require_unit_range(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (v < 0.0 || v > 1.0) throw std::domain_error(std::string(what) + ": value outside [0, 1]");
  }
}

}  // namespace

const PseudoLabel& PseudoLabelBank::ema_update(ModelTag k, std::int64_t sample_id, const Tensor& instant,
                                               double beta, std::int64_t step) {
  if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("ema_update: beta must lie in [0, 1)");
  require_unit_range(instant, "ema_update");
  auto it = entries_.find({k, sample_id});
  if (it == entries_.end()) {
    return entries_.emplace(Key{k, sample_id}, PseudoLabel{instant, step}).first->second;
  }
  PseudoLabel& pl = it->second;
  if (step <= pl.last_update_step) throw std::invalid_argument("ema_update: step must increase");
  if (!pl.values.same_shape(instant)) throw std::invalid_argument("ema_update: shape mismatch");
  // prev + (1 - beta)(instant - prev) == beta prev + (1 - beta) instant, and
  // leaves a constant target exactly fixed.
  auto dst = pl.values.mutable_values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = beta == 0.0 ? instant[i] : std::clamp(dst[i] + (1.0 - beta) * (instant[i] - dst[i]), 0.0, 1.0);
  }
  pl.last_update_step = step;
  return pl;
}

const PseudoLabel& PseudoLabelBank::overwrite(ModelTag k, std::int64_t sample_id, const Tensor& values,
                                              std::int64_t step) {
  require_unit_range(values, "overwrite");
  auto [it, inserted] = entries_.try_emplace(Key{k, sample_id}, PseudoLabel{values, step});
  if (!inserted) {
    if (step <= it->second.last_update_step) throw std::invalid_argument("overwrite: step must increase");
    it->second = PseudoLabel{values, step};
  }
  return it->second;
}

// Format:
//   xpl-bank 1 <entries>
//   <model> <sample_id> <step> <rank> <dims...> v0 v1 ... (row-major)
void PseudoLabelBank::write(std::ostream& os) const {
  os << "xpl-bank 1 " << entries_.size() << '\n';
  for (const auto& [key, pl] : entries_) {
    os << tag_char(key.first) << ' ' << key.second << ' ' << pl.last_update_step << ' ' << pl.values.rank();
    for (auto d : pl.values.shape()) os << ' ' << d;
    for (double v : pl.values.values()) os << ' ' << format_exact(v);
    os << '\n';
  }
}

PseudoLabelBank PseudoLabelBank::read(std::istream& is) {
  std::string magic;
  int version = 0;
  std::size_t n = 0;
  if (!(is >> magic >> version >> n) || magic != "xpl-bank" || version != 1) {
    throw std::runtime_error("bank: bad header");
  }
  PseudoLabelBank bank;
  for (std::size_t e = 0; e < n; ++e) {
    std::string tag, token;
    std::int64_t id = 0, step = 0;
    std::size_t rank = 0;
    if (!(is >> tag >> id >> step >> rank) || rank == 0) throw std::runtime_error("bank: truncated entry");
    Shape shape(rank);
    for (auto& d : shape) {
      if (!(is >> d) || d == 0) throw std::runtime_error("bank: bad shape");
    }
    std::vector<double> vals(shape_size(shape));
    for (auto& v : vals) {
      if (!(is >> token)) throw std::runtime_error("bank: truncated values");
      v = parse_double(token);
    }
    bank.entries_.emplace(Key{parse_tag(tag), id}, PseudoLabel{Tensor(std::move(shape), std::move(vals)), step});
  }
  return bank;
}

double pearson(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: size mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) throw std::domain_error("pearson: constant map");
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

double pearson(const PredictionMap& a, const PredictionMap& b) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("pearson: map size mismatch");
  return pearson(a.values, b.values);
}

double SelectionSchedule::ramp_fraction(std::size_t epoch) const {
  if (epoch < warmup_epochs) return 0.0;
  const double ramp_end = ramp_end_fraction * static_cast<double>(total_epochs);
  const double span = ramp_end - static_cast<double>(warmup_epochs);
  if (span <= 0.0) return 1.0;
  const double t = (static_cast<double>(epoch - warmup_epochs)) / span;
  return std::clamp(start_fraction + (1.0 - start_fraction) * t, 0.0, 1.0);
}

std::set<std::int64_t> curriculum_select(const std::map<std::int64_t, double>& rhos,
                                         const std::set<std::int64_t>& labeled, double ramp_fraction,
                                         const SelectionSchedule& schedule) {
  const double threshold = std::max(schedule.delta, schedule.hard_floor);
  std::vector<std::pair<double, std::int64_t>> eligible;
  for (const auto& [id, rho] : rhos) {
    if (labeled.count(id)) continue;
    if (rho > threshold) eligible.emplace_back(rho, id);
  }
  std::sort(eligible.begin(), eligible.end(), [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  });
  const double frac = std::clamp(ramp_fraction, 0.0, 1.0);
  // Guard against 0.30000000000000004 * 10 rounding up to 4.
  const auto take = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(eligible.size()) - 1e-9));
  std::set<std::int64_t> out = labeled;
  for (std::size_t i = 0; i < std::min(take, eligible.size()); ++i) out.insert(eligible[i].second);
  return out;
}

}  // namespace xpl
