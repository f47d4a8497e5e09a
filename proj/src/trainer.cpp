#include "xpl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "xpl/text_io.hpp"

namespace xpl {

namespace {

constexpr std::uint64_t kShuffleStream = 0x53485546464c45;  // "SHUFFLE"
constexpr std::uint64_t kPipelineA = 0x50495045412d41;
constexpr std::uint64_t kPipelineB = 0x50495045412d42;
constexpr std::uint64_t kInitA = 0x494e49542d41;
constexpr std::uint64_t kInitB = 0x494e49542d42;

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(purpose),
                    static_cast<std::uint32_t>(purpose >> 32)};
  return std::mt19937_64(seq);
}

std::string join_widths(const std::vector<std::size_t>& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(w[i]);
  }
  return out;
}

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> out;
  if (trim(s).empty()) return out;
  for (const auto& tok : split(s, ',')) {
    const auto v = parse_int(tok);
    if (v <= 0) throw std::invalid_argument("hidden widths must be positive");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw std::invalid_argument("not a boolean: '" + s + "'");
}

// Takes batch_size entries starting at cursor, wrapping around.
std::vector<const AVPair*> take_cyclic(const std::vector<const AVPair*>& order, std::size_t& cursor,
                                       std::size_t batch_size) {
  std::vector<const AVPair*> out;
  if (order.empty()) return out;
  const auto n = std::min(batch_size, order.size());
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(order[cursor % order.size()]);
    ++cursor;
  }
  return out;
}

void add_into(ModelLosses& acc, const ModelLosses& x) {
  acc.cross += x.cross;
  acc.sup += x.sup;
  acc.unsup += x.unsup;
}

}  // namespace

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::Xpl: return "xpl";
    case Mode::SupOnly: return "sup_only";
    case Mode::VanillaHardPl: return "vanilla_hard_pl";
  }
  return "?";
}

Mode parse_mode(std::string_view s) {
  for (auto m : {Mode::Xpl, Mode::SupOnly, Mode::VanillaHardPl}) {
    if (mode_name(m) == s) return m;
  }
  throw std::invalid_argument("unknown mode '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("train config: beta must lie in [0, 1)");
  if (!(tau > 0.0)) throw std::invalid_argument("train config: tau must be positive");
  if (!(sharpen_a > 0.0)) throw std::invalid_argument("train config: sharpen a must be positive");
  if (!(lambda_u >= 0.0)) throw std::invalid_argument("train config: lambda_u must be non-negative");
  if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("train config: delta must lie in (0, 1]");
  if (total_epochs == 0) throw std::invalid_argument("train config: total_epochs must be positive");
  if (warmup_epochs >= total_epochs) throw std::invalid_argument("train config: warmup_epochs must be < total_epochs");
  if (uses_pseudo_labels() && warmup_epochs == 0) {
    throw std::invalid_argument("train config: pseudo-label modes need at least one warmup epoch");
  }
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train config: learning_rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train config: momentum must lie in [0, 1)");
  if (!(ramp_start >= 0.0 && ramp_start <= 1.0)) throw std::invalid_argument("train config: ramp_start in [0, 1]");
  if (!(ramp_end > 0.0)) throw std::invalid_argument("train config: ramp_end must be positive");
  if (embed_dim == 0) throw std::invalid_argument("train config: embed_dim must be positive");
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {
      {"mode", std::string(mode_name(mode))},
      {"no_plema", ablation.no_plema ? "1" : "0"},
      {"no_sharpen", ablation.no_sharpen ? "1" : "0"},
      {"no_cross_refine", ablation.no_cross_refine ? "1" : "0"},
      {"no_data_selection", ablation.no_data_selection ? "1" : "0"},
      {"beta", format_exact(beta)},
      {"lambda_u", format_exact(lambda_u)},
      {"sharpen_a", format_exact(sharpen_a)},
      {"delta", format_exact(delta)},
      {"tau", format_exact(tau)},
      {"warmup_epochs", std::to_string(warmup_epochs)},
      {"total_epochs", std::to_string(total_epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"steps_per_epoch", std::to_string(steps_per_epoch)},
      {"learning_rate", format_exact(learning_rate)},
      {"momentum", format_exact(momentum)},
      {"ramp_start", format_exact(ramp_start)},
      {"ramp_end", format_exact(ramp_end)},
      {"seed", std::to_string(seed)},
      {"hidden_a", join_widths(hidden_a)},
      {"hidden_b", join_widths(hidden_b)},
      {"embed_dim", std::to_string(embed_dim)},
  };
}

void TrainConfig::apply_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto size_key = [&](const char* key, std::size_t& dst) {
    if (auto* v = get(key)) {
      const auto n = parse_int(*v);
      if (n < 0) throw std::invalid_argument(std::string(key) + " must be non-negative");
      dst = static_cast<std::size_t>(n);
    }
  };
  auto real_key = [&](const char* key, double& dst) {
    if (auto* v = get(key)) dst = parse_double(*v);
  };
  if (auto* v = get("mode")) mode = parse_mode(*v);
  if (auto* v = get("no_plema")) ablation.no_plema = parse_bool(*v);
  if (auto* v = get("no_sharpen")) ablation.no_sharpen = parse_bool(*v);
  if (auto* v = get("no_cross_refine")) ablation.no_cross_refine = parse_bool(*v);
  if (auto* v = get("no_data_selection")) ablation.no_data_selection = parse_bool(*v);
  real_key("beta", beta);
  real_key("lambda_u", lambda_u);
  real_key("sharpen_a", sharpen_a);
  real_key("delta", delta);
  real_key("tau", tau);
  size_key("warmup_epochs", warmup_epochs);
  size_key("total_epochs", total_epochs);
  size_key("batch_size", batch_size);
  size_key("steps_per_epoch", steps_per_epoch);
  real_key("learning_rate", learning_rate);
  real_key("momentum", momentum);
  real_key("ramp_start", ramp_start);
  real_key("ramp_end", ramp_end);
  if (auto* v = get("seed")) seed = static_cast<std::uint64_t>(parse_int(*v));
  if (auto* v = get("hidden_a")) hidden_a = parse_widths(*v);
  if (auto* v = get("hidden_b")) hidden_b = parse_widths(*v);
  size_key("embed_dim", embed_dim);
}

BackboneSpec TrainConfig::backbone(ModelTag k, const GenConfig& data) const {
  BackboneSpec s;
  s.hidden_widths = k == ModelTag::A ? hidden_a : hidden_b;
  s.embed_dim = embed_dim;
  s.init_seed = mix(seed ^ (k == ModelTag::A ? kInitA : kInitB));
  s.visual_dim = data.visual_dim;
  s.audio_dim = data.audio_dim;
  return s;
}

std::uint64_t TrainConfig::pipeline_seed(ModelTag k) const {
  return mix(seed ^ (k == ModelTag::A ? kPipelineA : kPipelineB));
}

SelectionSchedule TrainConfig::schedule() const {
  SelectionSchedule s;
  s.delta = delta;
  s.warmup_epochs = warmup_epochs;
  s.total_epochs = total_epochs;
  s.start_fraction = ramp_start;
  s.ramp_end_fraction = ramp_end;
  return s;
}

std::size_t TrainConfig::resolved_steps(std::size_t n_unlabeled) const {
  if (steps_per_epoch > 0) return steps_per_epoch;
  return std::max<std::size_t>(1, (n_unlabeled + batch_size - 1) / batch_size);
}

double MetricsHistory::tail_ciou_std(double fraction) const {
  if (records.empty()) return 0.0;
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(records.size()) - 1e-9)));
  const auto first = records.size() - std::min(k, records.size());
  double mean = 0.0;
  for (auto i = first; i < records.size(); ++i) mean += records[i].ciou_a;
  const double n = static_cast<double>(records.size() - first);
  mean /= n;
  double var = 0.0;
  for (auto i = first; i < records.size(); ++i) var += (records[i].ciou_a - mean) * (records[i].ciou_a - mean);
  return std::sqrt(var / n);
}

void sgd_step(EncoderParams& params, const EncoderParams& grads, EncoderParams& velocity, double lr,
              double momentum) {
  auto p = params.tensors();
  auto g = grads.tensors();
  auto v = velocity.tensors();
  if (p.size() != g.size() || p.size() != v.size()) throw std::invalid_argument("sgd_step: structure mismatch");
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (!p[t]->same_shape(*g[t]) || !p[t]->same_shape(*v[t])) throw std::invalid_argument("sgd_step: shape mismatch");
    auto pv = p[t]->mutable_values();
    auto vv = v[t]->mutable_values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      vv[i] = momentum * vv[i] + (*g[t])[i];
      pv[i] -= lr * vv[i];
    }
  }
}

SplitReport evaluate_split(const EncoderParams& a, const EncoderParams& b, const Dataset& data, Split split) {
  const auto pairs = data.split(split);
  if (pairs.empty()) throw std::invalid_argument("evaluate_split: split is empty");
  const auto maps_a = kernels::predict_maps(a, pairs, ModelTag::A);
  const auto maps_b = kernels::predict_maps(b, pairs, ModelTag::B);
  std::vector<Tensor> gts;
  std::vector<PredictionMap> maps_avg;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!pairs[i]->gt_mask) throw std::invalid_argument("evaluate_split: sample without ground truth");
    gts.push_back(*pairs[i]->gt_mask);
    std::vector<double> avg(maps_a[i].values.size());
    for (std::size_t j = 0; j < avg.size(); ++j) avg[j] = 0.5 * (maps_a[i].values[j] + maps_b[i].values[j]);
    maps_avg.push_back({Tensor(maps_a[i].values.shape(), std::move(avg)), maps_a[i].height, maps_a[i].width,
                        ModelTag::A, maps_a[i].sample_id});
  }
  return {evaluate(maps_a, gts), evaluate(maps_b, gts), evaluate(maps_avg, gts)};
}

Trainer::Trainer(const Dataset& data, TrainConfig cfg) : data_(data), cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto spec_a = cfg_.backbone(ModelTag::A, data.config);
  const auto spec_b = cfg_.backbone(ModelTag::B, data.config);
  require_distinct(spec_a, spec_b);
  a_ = make_model(ModelTag::A, spec_a);
  b_ = make_model(ModelTag::B, spec_b);
  vel_a_ = zeros_like(a_.params);
  vel_b_ = zeros_like(b_.params);
  labeled_ = data.split(Split::Labeled);
  unlabeled_ = data.split(Split::Unlabeled);
  if (labeled_.empty()) throw std::invalid_argument("trainer: empty labeled set");
  if (!data.has_split(Split::Test)) throw std::invalid_argument("trainer: dataset has no test split");
}

SelectionResult Trainer::select(std::size_t epoch) const {
  SelectionResult sel;
  sel.ramp = cfg_.schedule().ramp_fraction(epoch);
  const auto maps_a = kernels::predict_maps(a_.params, unlabeled_, ModelTag::A);
  const auto maps_b = kernels::predict_maps(b_.params, unlabeled_, ModelTag::B);
  for (std::size_t i = 0; i < unlabeled_.size(); ++i) {
    sel.maps.emplace(unlabeled_[i]->sample_id, std::make_pair(maps_a[i], maps_b[i]));
    try {
      sel.rhos[unlabeled_[i]->sample_id] = pearson(maps_a[i], maps_b[i]);
    } catch (const std::domain_error&) {
      // constant map: no consensus score, never selected
    }
  }
  const bool select_all = cfg_.mode == Mode::VanillaHardPl || cfg_.ablation.no_data_selection;
  if (select_all) {
    for (const auto* p : unlabeled_) sel.selected.push_back(p->sample_id);
  } else {
    const auto chosen = curriculum_select(sel.rhos, {}, sel.ramp, cfg_.schedule());
    sel.selected.assign(chosen.begin(), chosen.end());
  }
  return sel;
}

std::map<std::int64_t, std::pair<Tensor, Tensor>> Trainer::refresh_pseudo_labels(const SelectionResult& sel,
                                                                                  std::size_t epoch) {
  const bool vanilla = cfg_.mode == Mode::VanillaHardPl;
  const bool no_ema = vanilla || cfg_.ablation.no_plema;
  const bool cross = !vanilla && !cfg_.ablation.no_cross_refine;
  const auto step = static_cast<std::int64_t>(epoch);

  auto instant = [&](const PredictionMap& m) {
    if (vanilla) return make_hard_pl(m);
    if (cfg_.ablation.no_sharpen) return normalize_map(m.values);
    return make_instant_pl(m, cfg_.sharpen_a);
  };
  auto store = [&](ModelTag k, std::int64_t id, const Tensor& v) -> const Tensor& {
    return no_ema ? bank_.overwrite(k, id, v, step).values : bank_.ema_update(k, id, v, cfg_.beta, step).values;
  };

  std::map<std::int64_t, std::pair<Tensor, Tensor>> targets;
  for (auto id : sel.selected) {
    const auto& [map_a, map_b] = sel.maps.at(id);
    const Tensor& pl_a = store(ModelTag::A, id, instant(map_a));
    const Tensor& pl_b = store(ModelTag::B, id, instant(map_b));
    // first: target for A, second: target for B
    targets.emplace(id, cross ? std::make_pair(pl_b, pl_a) : std::make_pair(pl_a, pl_b));
  }
  return targets;
}

kernels::BatchSpec Trainer::make_batch(ModelTag k, std::span<const AVPair* const> labeled,
                                       std::span<const AVPair* const> unlabeled,
                                       const std::map<std::int64_t, std::pair<Tensor, Tensor>>& targets,
                                       std::uint64_t step) const {
  const bool cross = cfg_.mode == Mode::Xpl && !cfg_.ablation.no_cross_refine;
  kernels::BatchSpec spec;
  spec.model = k;
  spec.lambda_u = cfg_.lambda_u;
  spec.tau = cfg_.tau;
  spec.use_contrastive = cfg_.lambda_u > 0.0;
  const auto seed = cfg_.pipeline_seed(k);
  for (const auto* p : labeled) {
    kernels::BatchItem it;
    it.view = augment(*p, seed, step);
    it.kind = kernels::TargetKind::Supervised;
    it.target = *p->gt_mask;
    spec.items.push_back(std::move(it));
  }
  for (const auto* p : unlabeled) {
    const auto& t = targets.at(p->sample_id);
    kernels::BatchItem it;
    it.view = augment(*p, seed, step);
    it.kind = cross ? kernels::TargetKind::Cross : kernels::TargetKind::Self;
    it.target = k == ModelTag::A ? t.first : t.second;
    it.target_tag = cross ? other(k) : k;
    spec.items.push_back(std::move(it));
  }
  return spec;
}

void Trainer::warmup() {
  while (next_epoch() < cfg_.warmup_epochs) run_epoch();
}

const EpochRecord& Trainer::run_epoch() {
  const std::size_t epoch = next_epoch();
  if (epoch >= cfg_.total_epochs) throw std::logic_error("trainer: all epochs already run");
  EpochRecord rec;
  rec.epoch = epoch;
  rec.warmup = epoch < cfg_.warmup_epochs;
  rec.mean_rho = std::numeric_limits<double>::quiet_NaN();

  auto rng = epoch_rng(cfg_.seed, epoch, kShuffleStream);
  std::vector<const AVPair*> labeled_order = labeled_;
  std::shuffle(labeled_order.begin(), labeled_order.end(), rng);

  std::vector<const AVPair*> unlabeled_order;
  std::map<std::int64_t, std::pair<Tensor, Tensor>> targets;
  const bool pseudo_epoch = cfg_.uses_pseudo_labels() && !rec.warmup;
  if (pseudo_epoch) {
    const auto sel = select(epoch);
    targets = refresh_pseudo_labels(sel, epoch);
    for (auto id : sel.selected) unlabeled_order.push_back(&data_.by_id(id));
    std::shuffle(unlabeled_order.begin(), unlabeled_order.end(), rng);
    double rho_sum = 0.0;
    std::size_t rho_n = 0;
    for (auto id : sel.selected) {
      if (auto it = sel.rhos.find(id); it != sel.rhos.end()) {
        rho_sum += it->second;
        ++rho_n;
      }
    }
    if (rho_n) rec.mean_rho = rho_sum / static_cast<double>(rho_n);
  }
  rec.n_selected = labeled_.size() + unlabeled_order.size();

  const std::size_t steps = cfg_.resolved_steps(unlabeled_.size());
  std::size_t lab_cursor = 0, unl_cursor = 0;
  ModelLosses sum_a, sum_b;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto lab = take_cyclic(labeled_order, lab_cursor, cfg_.batch_size);
    const auto unl = take_cyclic(unlabeled_order, unl_cursor, cfg_.batch_size);
    const auto spec_a = make_batch(ModelTag::A, lab, unl, targets, global_step_);
    const auto spec_b = make_batch(ModelTag::B, lab, unl, targets, global_step_);
    const auto res_a = kernels::batch_gradients(a_.params, spec_a);
    const auto res_b = kernels::batch_gradients(b_.params, spec_b);
    sgd_step(a_.params, res_a.grads, vel_a_, cfg_.learning_rate, cfg_.momentum);
    sgd_step(b_.params, res_b.grads, vel_b_, cfg_.learning_rate, cfg_.momentum);
    add_into(sum_a, res_a.losses);
    add_into(sum_b, res_b.losses);
    ++global_step_;
  }
  const double inv = 1.0 / static_cast<double>(steps);
  sum_a = {sum_a.cross * inv, sum_a.sup * inv, sum_a.unsup * inv};
  sum_b = {sum_b.cross * inv, sum_b.sup * inv, sum_b.unsup * inv};
  rec.loss = total_loss(sum_a, sum_b, cfg_.lambda_u);

  const auto test = evaluate_split(a_.params, b_.params, data_, Split::Test);
  rec.ciou_a = test.a.ciou;
  rec.auc_a = test.a.auc;
  rec.ciou_b = test.b.ciou;
  rec.auc_b = test.b.auc;
  rec.ciou_avg = test.avg.ciou;
  rec.auc_avg = test.avg.auc;
  history_.records.push_back(rec);
  return history_.records.back();
}

const MetricsHistory& Trainer::run() {
  while (next_epoch() < cfg_.total_epochs) run_epoch();
  return history_;
}

ExperimentResult run_experiment(const Dataset& data, const TrainConfig& cfg) {
  Trainer t(data, cfg);
  t.run();
  return {t.history(), t.model(ModelTag::A), t.model(ModelTag::B)};
}

MetricsHistory run_experiment(const GenConfig& gen, const TrainConfig& cfg) {
  const auto data = generate_dataset(gen);
  return run_experiment(data, cfg).history;
}

}  // namespace xpl
