// Times the OpenMP kernels against their serial references on a default-size
// batch and checks that both produce the same numbers.
//
// usage: bench_kernels [repetitions]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "xpl/kernels.hpp"
#include "xpl/synthdata.hpp"
#include "xpl/trainer.hpp"

using namespace xpl;

namespace {

template <class F>
double best_ms(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

double max_abs_diff(const EncoderParams& a, const EncoderParams& b) {
  double d = 0;
  const auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    for (std::size_t k = 0; k < ta[i]->size(); ++k) d = std::max(d, std::abs((*ta[i])[k] - (*tb[i])[k]));
  }
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::stoi(argv[1]) : 20;
  GenConfig gen;
  gen.n_unlabeled = 256;
  gen.n_test = 200;
  gen.n_openset = 0;
  gen.seed = 1;
  const auto data = generate_dataset(gen);
  const TrainConfig cfg;
  const auto params = init_params(cfg.backbone(ModelTag::A, gen));

  kernels::BatchSpec spec;
  for (const auto& s : data.samples) {
    if (spec.items.size() == cfg.batch_size) break;
    kernels::BatchItem it;
    it.view = s;
    if (s.gt_mask) {
      it.kind = kernels::TargetKind::Supervised;
      it.target = *s.gt_mask;
    }
    spec.items.push_back(std::move(it));
  }
  std::vector<const AVPair*> test;
  for (const auto& s : data.samples) {
    if (s.split == Split::Test) test.push_back(&s);
  }

  std::printf("threads %d, batch %zu, test maps %zu, best of %d\n", kernels::max_threads(), spec.items.size(),
              test.size(), reps);

  kernels::BatchResult par, ref;
  const double t_par = best_ms(reps, [&] { par = kernels::batch_gradients(params, spec); });
  const double t_ref = best_ms(reps, [&] { ref = kernels::batch_gradients_reference(params, spec); });
  std::printf("batch_gradients     parallel %8.3f ms  reference %8.3f ms  speedup %.2fx  max |diff| %.1e\n", t_par,
              t_ref, t_ref / t_par, max_abs_diff(par.grads, ref.grads));

  std::vector<PredictionMap> mp, ms;
  const double m_par = best_ms(reps, [&] { mp = kernels::predict_maps(params, test, ModelTag::A); });
  const double m_ser = best_ms(reps, [&] { ms = kernels::predict_maps_serial(params, test, ModelTag::A); });
  bool same = mp.size() == ms.size();
  for (std::size_t i = 0; same && i < mp.size(); ++i) same = mp[i].values == ms[i].values;
  std::printf("predict_maps        parallel %8.3f ms  serial    %8.3f ms  speedup %.2fx  identical %s\n", m_par, m_ser,
              m_ser / m_par, same ? "yes" : "no");
  return same ? 0 : 1;
}
