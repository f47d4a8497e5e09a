#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "xpl/checkpoint.hpp"
#include "xpl/trainer.hpp"

#ifdef XPL_WITH_OPENMP
#include <omp.h>
#endif

using namespace xpl;

namespace {

GenConfig tiny_data(std::uint64_t seed = 5) {
  GenConfig g;
  g.n_labeled = 6;
  g.n_unlabeled = 16;
  g.n_test = 8;
  g.n_openset = 8;
  g.seed = seed;
  return g;
}

TrainConfig tiny_train(Mode mode = Mode::Xpl) {
  TrainConfig c;
  c.mode = mode;
  c.hidden_a = {8};
  c.hidden_b = {6, 6};
  c.embed_dim = 4;
  c.warmup_epochs = 1;
  c.total_epochs = 3;
  c.batch_size = 4;
  c.learning_rate = 0.05;
  c.seed = 17;
  return c;
}

// Plain-loop forward pass, independent of the autodiff graph.
std::vector<double> mlp(const std::vector<DenseLayer>& layers, std::vector<double> x) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].weight;
    std::vector<double> y(w.dim(1), 0.0);
    for (std::size_t o = 0; o < y.size(); ++o) {
      double s = layers[l].bias[o];
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w.at(i, o);
      y[o] = l + 1 < layers.size() ? std::max(0.0, s) : s;
    }
    x = std::move(y);
  }
  return x;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

struct PlainForward {
  std::vector<double> map;
  std::vector<double> audio;
  std::vector<double> pooled;
};

PlainForward plain_forward(const EncoderParams& p, const AVPair& pair) {
  PlainForward f;
  f.audio = mlp(p.audio, pair.audio.data());
  const auto cv = pair.visual.cols();
  for (std::size_t c = 0; c < pair.cells(); ++c) {
    std::vector<double> x(pair.visual.data().begin() + c * cv, pair.visual.data().begin() + (c + 1) * cv);
    const auto e = mlp(p.visual, x);
    if (f.pooled.empty()) f.pooled.assign(e.size(), -INFINITY);
    for (std::size_t k = 0; k < e.size(); ++k) f.pooled[k] = std::max(f.pooled[k], e[k]);
    f.map.push_back(std::clamp(cosine(e, f.audio), -1.0, 1.0));
  }
  return f;
}

double bce(const Tensor& target, const std::vector<double>& cos_map) {
  double s = 0;
  for (std::size_t i = 0; i < cos_map.size(); ++i) {
    const double q = std::clamp((cos_map[i] + 1) / 2, 1e-6, 1 - 1e-6);
    s -= target[i] * std::log(q) + (1 - target[i]) * std::log(1 - q);
  }
  return s / static_cast<double>(cos_map.size());
}

ModelLosses plain_losses(const EncoderParams& p, const kernels::BatchSpec& spec) {
  std::vector<PlainForward> fw;
  double sup = 0, pseudo = 0;
  std::size_t n_sup = 0, n_pseudo = 0;
  for (const auto& it : spec.items) {
    fw.push_back(plain_forward(p, it.view));
    if (it.kind == kernels::TargetKind::Supervised) {
      sup += bce(it.target, fw.back().map);
      ++n_sup;
    } else if (it.kind != kernels::TargetKind::None) {
      pseudo += bce(it.target, fw.back().map);
      ++n_pseudo;
    }
  }
  const std::size_t n = fw.size();
  double nce = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double za = 0, zv = 0;
    for (std::size_t j = 0; j < n; ++j) {
      za += std::exp(cosine(fw[i].audio, fw[j].pooled) / spec.tau);
      zv += std::exp(cosine(fw[i].pooled, fw[j].audio) / spec.tau);
    }
    const double diag = cosine(fw[i].audio, fw[i].pooled) / spec.tau;
    nce += (std::log(za) - diag) + (std::log(zv) - diag);
  }
  return {n_pseudo ? pseudo / static_cast<double>(n_pseudo) : 0.0, n_sup ? sup / static_cast<double>(n_sup) : 0.0,
          nce / static_cast<double>(n)};
}

double max_abs_diff(const EncoderParams& a, const EncoderParams& b) {
  double m = 0;
  auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    for (std::size_t j = 0; j < ta[i]->size(); ++j) m = std::max(m, std::abs((*ta[i])[j] - (*tb[i])[j]));
  }
  return m;
}

std::vector<const AVPair*> first_n(const Dataset& d, Split s, std::size_t n) {
  auto v = d.split(s);
  v.resize(std::min(n, v.size()));
  return v;
}

}  // namespace

TEST_CASE("config validation and key=value round-trip") {
  auto c = tiny_train();
  CHECK_NOTHROW(c.validate());
  c.beta = 1.0;
  CHECK_THROWS(c.validate());
  c = tiny_train();
  c.warmup_epochs = 3;
  CHECK_THROWS(c.validate());
  c = tiny_train();
  c.warmup_epochs = 0;
  CHECK_THROWS(c.validate());
  c.mode = Mode::SupOnly;
  CHECK_NOTHROW(c.validate());

  auto d = tiny_train(Mode::VanillaHardPl);
  d.ablation.no_sharpen = true;
  d.beta = 0.3;
  d.hidden_b = {5, 7, 9};
  TrainConfig back;
  back.apply_kv(d.to_kv());
  CHECK(back == d);
  CHECK_THROWS(back.apply_kv({{"mode", "bogus"}}));
}

TEST_CASE("sgd with momentum") {
  EncoderParams p, g, v;
  p.visual.push_back({Tensor::vector({1.0, 2.0}), Tensor::vector({0.5})});
  g.visual.push_back({Tensor::vector({1.0, 0.0}), Tensor::vector({-2.0})});
  v = zeros_like(p);

  auto q = p;
  auto vq = v;
  sgd_step(q, g, vq, 0.1, 0.0);
  CHECK(q.visual[0].weight[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(q.visual[0].weight[1] == 2.0);

  auto z = p;
  auto vz = v;
  sgd_step(z, zeros_like(g), vz, 0.1, 0.9);
  CHECK(z == p);

  // two steps: v1 = g, th1 = th0 - lr g; v2 = 0.9 g + g, th2 = th1 - lr v2
  sgd_step(p, g, v, 0.1, 0.9);
  sgd_step(p, g, v, 0.1, 0.9);
  CHECK(p.visual[0].weight[0] == doctest::Approx(1.0 - 0.1 * 1.0 - 0.1 * 1.9).epsilon(1e-15));
  CHECK(p.visual[0].bias[0] == doctest::Approx(0.5 + 0.2 + 0.1 * 3.8).epsilon(1e-15));
  CHECK(v.visual[0].bias[0] == doctest::Approx(-3.8).epsilon(1e-15));
}

TEST_CASE("parallel kernels agree with the serial reference") {
  const auto data = generate_dataset(tiny_data());
  auto cfg = tiny_train();
  cfg.ablation.no_data_selection = true;
  Trainer t(data, cfg);
  t.warmup();
  const auto sel = t.select(1);
  auto targets = t.refresh_pseudo_labels(sel, 1);
  std::vector<const AVPair*> unl;
  for (auto id : sel.selected) {
    if (unl.size() < 4) unl.push_back(&data.by_id(id));
  }
  REQUIRE(!unl.empty());
  const auto lab = first_n(data, Split::Labeled, 4);
  for (auto k : {ModelTag::A, ModelTag::B}) {
    const auto spec = t.make_batch(k, lab, unl, targets, 3);
    const auto& params = t.model(k).params;
    const auto fast = kernels::batch_gradients(params, spec);
    const auto ref = kernels::batch_gradients_reference(params, spec);
    CHECK(fast.losses.cross == doctest::Approx(ref.losses.cross).epsilon(1e-13));
    CHECK(fast.losses.sup == doctest::Approx(ref.losses.sup).epsilon(1e-13));
    CHECK(fast.losses.unsup == doctest::Approx(ref.losses.unsup).epsilon(1e-13));
    CHECK(max_abs_diff(fast.grads, ref.grads) <= 1e-12);

    // and both agree with a plain-loop evaluation of the objective
    const auto plain = plain_losses(params, spec);
    CHECK(ref.losses.cross == doctest::Approx(plain.cross).epsilon(1e-12));
    CHECK(ref.losses.sup == doctest::Approx(plain.sup).epsilon(1e-12));
    CHECK(ref.losses.unsup == doctest::Approx(plain.unsup).epsilon(1e-12));

    const auto pairs = data.split(Split::Test);
    const auto m1 = kernels::predict_maps(params, pairs, k);
    const auto m2 = kernels::predict_maps_serial(params, pairs, k);
    REQUIRE(m1.size() == m2.size());
    for (std::size_t i = 0; i < m1.size(); ++i) CHECK(m1[i].values == m2[i].values);
  }
}

#ifdef XPL_WITH_OPENMP
TEST_CASE("batch gradients do not depend on the thread count") {
  const auto data = generate_dataset(tiny_data());
  Trainer t(data, tiny_train(Mode::SupOnly));
  const auto lab = first_n(data, Split::Labeled, 6);
  const auto spec = t.make_batch(ModelTag::A, lab, {}, {}, 0);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = kernels::batch_gradients(t.model(ModelTag::A).params, spec);
  omp_set_num_threads(4);
  const auto four = kernels::batch_gradients(t.model(ModelTag::A).params, spec);
  omp_set_num_threads(saved);
  CHECK(one.grads == four.grads);
  CHECK(one.losses.unsup == four.losses.unsup);
}
#endif

TEST_CASE("one epoch matches a step-by-step trace through the module operations") {
  const auto data = generate_dataset(tiny_data());
  auto cfg = tiny_train();
  cfg.warmup_epochs = 4;
  cfg.total_epochs = 12;
  cfg.steps_per_epoch = 40;
  cfg.learning_rate = 0.1;
  cfg.ramp_start = 0.5;
  Trainer t(data, cfg);
  t.warmup();
  const std::size_t epoch = t.next_epoch();
  const auto& pa = t.model(ModelTag::A).params;
  const auto& pb = t.model(ModelTag::B).params;

  // selection: plain maps, textbook Pearson, eligibility and top-k by hand
  std::vector<std::pair<double, std::int64_t>> eligible;
  std::map<std::int64_t, std::pair<std::vector<double>, std::vector<double>>> maps;
  for (const auto* p : data.split(Split::Unlabeled)) {
    auto ma = plain_forward(pa, *p).map, mb = plain_forward(pb, *p).map;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      mx += ma[i];
      my += mb[i];
    }
    mx /= static_cast<double>(ma.size());
    my /= static_cast<double>(mb.size());
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      sxy += (ma[i] - mx) * (mb[i] - my);
      sxx += (ma[i] - mx) * (ma[i] - mx);
      syy += (mb[i] - my) * (mb[i] - my);
    }
    const double rho = sxy / std::sqrt(sxx * syy);
    if (rho > 0.8) eligible.push_back({-rho, p->sample_id});
    maps[p->sample_id] = {ma, mb};
  }
  std::sort(eligible.begin(), eligible.end());
  const double ramp = cfg.schedule().ramp_fraction(epoch);
  const auto take = static_cast<std::size_t>(std::ceil(ramp * static_cast<double>(eligible.size())));
  std::vector<std::int64_t> expected;
  for (std::size_t i = 0; i < take; ++i) expected.push_back(eligible[i].second);
  std::sort(expected.begin(), expected.end());

  const auto sel = t.select(epoch);
  // a partial ramp so the top-k cut is exercised
  REQUIRE(!expected.empty());
  CHECK(expected.size() < eligible.size());
  CHECK(sel.selected == expected);
  for (const auto& [id, rho] : sel.rhos) {
    const auto& [ma, mb] = maps.at(id);
    for (std::size_t i = 0; i < ma.size(); ++i) CHECK(sel.maps.at(id).first.values[i] == doctest::Approx(ma[i]).epsilon(1e-12));
  }

  // pseudo-labels: first bank entry is the sharpened instant label; A trains on B's
  Trainer u = t;
  const auto targets = u.refresh_pseudo_labels(sel, epoch);
  for (auto id : sel.selected) {
    const auto& mb = maps.at(id).second;
    for (std::size_t i = 0; i < mb.size(); ++i) {
      const double q = std::clamp((mb[i] + 1) / 2, 1e-6, 1 - 1e-6);
      const double want = 1.0 / (1.0 + std::exp(-cfg.sharpen_a * (q - 0.5)));
      CHECK(targets.at(id).first[i] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(u.bank().find(ModelTag::B, id)->values == targets.at(id).first);
  }

  // the epoch itself records the same selection size
  const auto& rec = t.run_epoch();
  CHECK(rec.n_selected == data.count(Split::Labeled) + expected.size());
  if (!expected.empty()) CHECK(std::isfinite(rec.mean_rho));
}

TEST_CASE("without cross-refine, model A's objective ignores model B") {
  const auto data = generate_dataset(tiny_data());
  for (bool cross_off : {true, false}) {
    auto cfg = tiny_train();
    cfg.ablation.no_cross_refine = cross_off;
    Trainer t(data, cfg);
    t.warmup();
    const auto sel = t.select(1);
    if (sel.selected.empty()) continue;

    // B perturbed: its maps (and thus its pseudo-labels) change
    Trainer u = t;
    for (Tensor* w : u.model(ModelTag::B).params.tensors()) {
      for (auto& v : w->mutable_values()) v += 0.3 * std::sin(v * 17.0);
    }
    auto sel_u = sel;
    const auto pairs = data.split(Split::Unlabeled);
    const auto mb = kernels::predict_maps(u.model(ModelTag::B).params, pairs, ModelTag::B);
    for (std::size_t i = 0; i < pairs.size(); ++i) sel_u.maps.at(pairs[i]->sample_id).second = mb[i];

    const auto tt = t.refresh_pseudo_labels(sel, 1);
    const auto tu = u.refresh_pseudo_labels(sel_u, 1);
    std::vector<const AVPair*> unl;
    for (auto id : sel.selected) unl.push_back(&data.by_id(id));
    const auto lab = first_n(data, Split::Labeled, 2);
    const auto la = kernels::batch_gradients(t.model(ModelTag::A).params, t.make_batch(ModelTag::A, lab, unl, tt, 1));
    const auto lu = kernels::batch_gradients(u.model(ModelTag::A).params, u.make_batch(ModelTag::A, lab, unl, tu, 1));
    if (cross_off) {
      CHECK(la.losses.cross == lu.losses.cross);
      CHECK(la.grads == lu.grads);
    } else {
      CHECK(la.losses.cross != lu.losses.cross);
    }
  }
}

TEST_CASE("sup_only keeps the selection at the labeled set") {
  const auto data = generate_dataset(tiny_data());
  auto cfg = tiny_train(Mode::SupOnly);
  cfg.warmup_epochs = 0;
  cfg.ablation.no_data_selection = true;  // ignored in this mode
  const auto h = run_experiment(data, cfg).history;
  REQUIRE(h.records.size() == cfg.total_epochs);
  for (const auto& r : h.records) {
    CHECK(r.n_selected == data.count(Split::Labeled));
    CHECK(r.loss.cross == 0.0);
    CHECK(std::isnan(r.mean_rho));
  }
}

TEST_CASE("selection grows across epochs when the models are frozen") {
  const auto data = generate_dataset(tiny_data());
  auto cfg = tiny_train();
  cfg.total_epochs = 12;
  cfg.warmup_epochs = 2;
  Trainer t(data, cfg);
  t.warmup();
  std::vector<std::int64_t> prev;
  for (std::size_t e = 2; e < 12; ++e) {
    const auto sel = t.select(e);
    CHECK(std::includes(sel.selected.begin(), sel.selected.end(), prev.begin(), prev.end()));
    prev = sel.selected;
  }
}

TEST_CASE("run_experiment is deterministic and every mode completes") {
  const auto data = generate_dataset(tiny_data());
  for (auto mode : {Mode::Xpl, Mode::SupOnly, Mode::VanillaHardPl}) {
    const auto r1 = run_experiment(data, tiny_train(mode));
    const auto r2 = run_experiment(data, tiny_train(mode));
    REQUIRE(r1.history.records.size() == 3);
    CHECK(r1.a.params == r2.a.params);
    CHECK(r1.b.params == r2.b.params);
    for (std::size_t e = 0; e < 3; ++e) {
      const auto &x = r1.history.records[e], &y = r2.history.records[e];
      CHECK(x.epoch == e);
      CHECK(x.ciou_a == y.ciou_a);
      CHECK(x.auc_b == y.auc_b);
      CHECK(x.loss.total == y.loss.total);
      CHECK(x.n_selected == y.n_selected);
      CHECK(std::abs(x.loss.total - (x.loss.cross + x.loss.sup + 0.5 * x.loss.unsup)) <= 1e-12);
    }
  }
}

TEST_CASE("warmup drives the supervised loss down and the two models apart") {
  const std::size_t kEpochs = 6;
  std::vector<std::vector<double>> sup(kEpochs);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto data = generate_dataset(tiny_data(40 + seed));
    auto cfg = tiny_train();
    cfg.seed = seed;
    cfg.warmup_epochs = kEpochs;
    cfg.total_epochs = kEpochs + 1;
    Trainer t(data, cfg);
    const auto a0 = t.model(ModelTag::A).params;
    const auto b0 = t.model(ModelTag::B).params;
    t.warmup();
    for (std::size_t e = 0; e < kEpochs; ++e) sup[e].push_back(t.history().records[e].loss.sup);
    CHECK(param_distance_sq(a0, t.model(ModelTag::A).params) > 0.0);
    CHECK(param_distance_sq(b0, t.model(ModelTag::B).params) > 0.0);
    const auto& p = data.samples.front();
    CHECK_FALSE(prediction_map(t.model(ModelTag::A).params, p, ModelTag::A).values ==
                prediction_map(t.model(ModelTag::B).params, p, ModelTag::B).values);
  }
  std::size_t rises = 0;
  double prev = INFINITY;
  for (auto& v : sup) {
    std::sort(v.begin(), v.end());
    if (v[2] >= prev) ++rises;
    prev = v[2];
  }
  CHECK(rises <= 1);
}

TEST_CASE("tail std over the last fifth of epochs") {
  MetricsHistory h;
  for (int e = 0; e < 10; ++e) {
    EpochRecord r;
    r.epoch = e;
    r.ciou_a = e < 8 ? 50.0 : (e == 8 ? 40.0 : 60.0);
    h.records.push_back(r);
  }
  CHECK(h.tail_ciou_std() == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("checkpoint round-trip is exact") {
  const auto data = generate_dataset(tiny_data());
  const auto res = run_experiment(data, tiny_train());
  for (const auto* m : {&res.a, &res.b}) {
    std::stringstream ss;
    write_checkpoint(ss, *m);
    const auto back = read_checkpoint(ss);
    CHECK(back.tag == m->tag);
    CHECK(back.spec == m->spec);
    CHECK(back.params == m->params);
  }
  std::stringstream bad("xpl-checkpoint 1\nmodel A\nhidden 4\n");
  CHECK_THROWS(read_checkpoint(bad));

  // re-evaluating loaded models reproduces the final epoch's metrics
  std::stringstream sa, sb;
  write_checkpoint(sa, res.a);
  write_checkpoint(sb, res.b);
  const auto ra = read_checkpoint(sa), rb = read_checkpoint(sb);
  const auto test = evaluate_split(ra.params, rb.params, data, Split::Test);
  CHECK(test.a.ciou == res.history.records.back().ciou_a);
  CHECK(test.b.auc == res.history.records.back().auc_b);
}
