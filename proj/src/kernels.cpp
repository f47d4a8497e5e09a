#include "xpl/kernels.hpp"

#include <exception>
#include <mutex>
#include <optional>
#include <stdexcept>

#ifdef XPL_WITH_OPENMP
#include <omp.h>
#endif

namespace xpl::kernels {

int max_threads() {
#ifdef XPL_WITH_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

// Runs body(i) for i in [0, n) across the OpenMP team. Exceptions cannot
// cross the parallel region, so the first one is captured and rethrown.
template <class Body>
void parallel_for(std::size_t n, Body body) {
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < sn; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<PredictionMap> predict_maps_serial(const EncoderParams& params, std::span<const AVPair* const> pairs,
                                               ModelTag tag) {
  std::vector<PredictionMap> out;
  out.reserve(pairs.size());
  for (const AVPair* p : pairs) out.push_back(prediction_map(params, *p, tag));
  return out;
}

std::vector<PredictionMap> predict_maps(const EncoderParams& params, std::span<const AVPair* const> pairs,
                                        ModelTag tag) {
  std::vector<PredictionMap> out(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) { out[i] = prediction_map(params, *pairs[i], tag); });
  return out;
}

namespace {

struct Counts {
  std::size_t pseudo = 0;
  std::size_t sup = 0;
};

Counts count_items(const BatchSpec& spec) {
  if (spec.items.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  Counts c;
  for (const auto& it : spec.items) {
    if (it.kind == TargetKind::Cross || it.kind == TargetKind::Self) ++c.pseudo;
    if (it.kind == TargetKind::Supervised) ++c.sup;
    if (it.kind == TargetKind::Cross && it.target_tag == spec.model) {
      throw std::invalid_argument("batch_gradients: cross target produced by the model it supervises");
    }
    if (it.kind == TargetKind::Self && it.target_tag != spec.model) {
      throw std::invalid_argument("batch_gradients: self-training target from the other model");
    }
  }
  return c;
}

// Loss of one pseudo-labeled or supervised item, routed through the module
// loss functions so their tag and range checks apply.
ad::Var item_loss(const BatchItem& it, ModelTag model, ad::Var map) {
  const std::span<const Tensor> target(&it.target, 1);
  const std::span<const ad::Var> maps(&map, 1);
  switch (it.kind) {
    case TargetKind::Cross: return cross_loss(it.target_tag, target, model, maps);
    case TargetKind::Self: return self_training_loss(target, maps);
    case TargetKind::Supervised: return sup_loss(target, maps);
    case TargetKind::None: break;
  }
  throw std::logic_error("item_loss: item has no target");
}

bool is_pseudo(TargetKind k) { return k == TargetKind::Cross || k == TargetKind::Self; }

struct ItemGraph {
  ad::Graph graph;
  BoundEncoder enc;
  std::optional<ad::Var> audio;
  std::optional<ad::Var> pooled;
  std::optional<ad::Var> loss;
  double loss_value = 0.0;
};

}  // namespace

BatchResult batch_gradients_reference(const EncoderParams& params, const BatchSpec& spec) {
  const Counts counts = count_items(spec);
  ad::Graph g;
  const BoundEncoder enc = bind(g, params);
  std::vector<ad::Var> audio, pooled, cross_maps, self_maps, sup_maps;
  std::vector<Tensor> cross_pls, self_pls, gts;
  for (const auto& it : spec.items) {
    const auto fw = forward(enc, g.constant(it.view.visual), g.constant(it.view.audio));
    audio.push_back(fw.audio);
    pooled.push_back(global_max_pool(fw.cells));
    switch (it.kind) {
      case TargetKind::Cross:
        cross_maps.push_back(fw.map);
        cross_pls.push_back(it.target);
        break;
      case TargetKind::Self:
        self_maps.push_back(fw.map);
        self_pls.push_back(it.target);
        break;
      case TargetKind::Supervised:
        sup_maps.push_back(fw.map);
        gts.push_back(it.target);
        break;
      case TargetKind::None:
        break;
    }
  }

  std::optional<ad::Var> pseudo, sup, unsup;
  if (counts.pseudo > 0) {
    std::optional<ad::Var> acc;
    if (!cross_maps.empty()) {
      acc = ad::scale(cross_loss(other(spec.model), cross_pls, spec.model, cross_maps),
                      static_cast<double>(cross_maps.size()));
    }
    if (!self_maps.empty()) {
      auto s = ad::scale(self_training_loss(self_pls, self_maps), static_cast<double>(self_maps.size()));
      acc = acc ? ad::add(*acc, s) : s;
    }
    pseudo = ad::scale(*acc, 1.0 / static_cast<double>(counts.pseudo));
  }
  if (counts.sup > 0) sup = sup_loss(gts, sup_maps);
  if (spec.use_contrastive) unsup = infonce_loss(audio, pooled, spec.tau);

  const ad::Var total = model_objective(g, pseudo ? &*pseudo : nullptr, sup ? &*sup : nullptr,
                                        unsup ? &*unsup : nullptr, spec.lambda_u);
  BatchResult res;
  res.losses.cross = pseudo ? pseudo->value().item() : 0.0;
  res.losses.sup = sup ? sup->value().item() : 0.0;
  res.losses.unsup = unsup ? unsup->value().item() : 0.0;
  const auto grads = ad::backward(g, total);
  res.grads = collect_gradients(grads, enc, params);
  return res;
}

BatchResult batch_gradients(const EncoderParams& params, const BatchSpec& spec) {
  const Counts counts = count_items(spec);
  const std::size_t n = spec.items.size();
  std::vector<ItemGraph> items(n);

  // Per-sample forward passes.
  parallel_for(n, [&](std::size_t i) {
    const BatchItem& it = spec.items[i];
    ItemGraph& ig = items[i];
    ig.enc = bind(ig.graph, params);
    const auto fw = forward(ig.enc, ig.graph.constant(it.view.visual), ig.graph.constant(it.view.audio));
    ig.audio = fw.audio;
    ig.pooled = global_max_pool(fw.cells);
    if (it.kind != TargetKind::None) {
      ig.loss = item_loss(it, spec.model, fw.map);
      ig.loss_value = ig.loss->value().item();
    }
  });

  // Contrastive term on detached embeddings.
  BatchResult res;
  std::vector<Tensor> d_audio(n), d_pooled(n);
  if (spec.use_contrastive) {
    ad::Graph cg;
    std::vector<ad::Var> a, v;
    for (const auto& ig : items) {
      a.push_back(cg.leaf(ig.audio->value()));
      v.push_back(cg.leaf(ig.pooled->value()));
    }
    const ad::Var l = infonce_loss(a, v, spec.tau);
    res.losses.unsup = l.value().item();
    const auto grads = ad::backward(cg, l);
    for (std::size_t i = 0; i < n; ++i) {
      d_audio[i] = grads.of_or_zero(a[i]);
      d_pooled[i] = grads.of_or_zero(v[i]);
    }
  }

  const double w_pseudo = counts.pseudo ? 1.0 / static_cast<double>(counts.pseudo) : 0.0;
  const double w_sup = counts.sup ? 1.0 / static_cast<double>(counts.sup) : 0.0;

  // Per-sample backward of a surrogate whose parameter gradient equals this
  // sample's share of the batch objective.
  std::vector<EncoderParams> per_item(n);
  parallel_for(n, [&](std::size_t i) {
    const BatchItem& it = spec.items[i];
    ItemGraph& ig = items[i];
    ad::Graph& g = ig.graph;
    std::vector<ad::Var> parts;
    if (ig.loss) parts.push_back(ad::scale(*ig.loss, is_pseudo(it.kind) ? w_pseudo : w_sup));
    if (spec.use_contrastive) {
      const ad::Var da = ad::sum(ad::mul(g.constant(d_audio[i]), *ig.audio));
      const ad::Var dv = ad::sum(ad::mul(g.constant(d_pooled[i]), *ig.pooled));
      parts.push_back(ad::scale(ad::add(da, dv), spec.lambda_u));
    }
    if (parts.empty()) {
      per_item[i] = zeros_like(params);
      return;
    }
    ad::Var surrogate = parts[0];
    for (std::size_t k = 1; k < parts.size(); ++k) surrogate = ad::add(surrogate, parts[k]);
    per_item[i] = collect_gradients(ad::backward(g, surrogate), ig.enc, params);
  });

  res.grads = zeros_like(params);
  auto dst = res.grads.tensors();
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = per_item[i].tensors();
    for (std::size_t t = 0; t < dst.size(); ++t) {
      auto d = dst[t]->mutable_values();
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += (*src[t])[j];
    }
    const BatchItem& it = spec.items[i];
    if (is_pseudo(it.kind)) res.losses.cross += w_pseudo * items[i].loss_value;
    if (it.kind == TargetKind::Supervised) res.losses.sup += w_sup * items[i].loss_value;
  }
  return res;
}

}  // namespace xpl::kernels
