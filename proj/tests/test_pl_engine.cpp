#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "xpl/pl_engine.hpp"

using namespace xpl;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Two-pass textbook Pearson.
double pearson_ref(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

PredictionMap map_of(std::vector<double> v) {
  PredictionMap m;
  m.height = 1;
  m.width = v.size();
  m.values = Tensor::vector(std::move(v));
  return m;
}

SelectionSchedule schedule(std::size_t warmup = 2, std::size_t total = 10) {
  SelectionSchedule s;
  s.warmup_epochs = warmup;
  s.total_epochs = total;
  return s;
}

}  // namespace

TEST_CASE("normalize_map") {
  CHECK(normalize_value(0.0) == 0.5);
  CHECK(normalize_value(1.0) == 1.0 - kMapEpsilon);
  CHECK(normalize_value(-1.0) == kMapEpsilon);
  const auto t = normalize_map(Tensor::vector({-0.5, 0.0, 0.3, 0.9}));
  for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i - 1] < t[i]);
}

TEST_CASE("sharpen") {
  for (double a : {0.5, 4.0, 10.0, 100.0}) CHECK(sharpen_value(0.5, a) == 0.5);
  for (double x : {0.0, 0.13, 0.3, 0.77, 1.0}) {
    CHECK(sharpen_value(x, 10.0) + sharpen_value(1.0 - x, 10.0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK(sharpen_value(0.75, 10.0) == doctest::Approx(logistic(2.5)).epsilon(1e-15));
  CHECK(sharpen_value(0.75, 10.0) == doctest::Approx(0.924142).epsilon(1e-6));
  CHECK_THROWS(sharpen_value(0.6, 0.0));
  CHECK_THROWS(sharpen(Tensor::vector({0.6}), -1.0));

  // strictly increasing, and approaches a step as a grows
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double y = sharpen_value(i / 100.0, 10.0);
    CHECK(y > prev);
    prev = y;
  }
  for (int i = 0; i <= 100; ++i) {
    const double x = i / 100.0;
    if (std::abs(x - 0.5) < 0.01 - 1e-12) continue;
    const double step = x > 0.5 ? 1.0 : 0.0;
    CHECK(std::abs(sharpen_value(x, 1e4) - step) < 1e-3);
  }
}

TEST_CASE("make_instant_pl") {
  const auto zeros = make_instant_pl(map_of({0, 0, 0}), 10.0);
  for (double v : zeros.values()) CHECK(v == 0.5);
  const auto one = make_instant_pl(map_of({1.0}), 10.0);
  CHECK(one[0] == doctest::Approx(logistic(10.0 * (0.5 - kMapEpsilon))).epsilon(1e-14));
  CHECK(one[0] == doctest::Approx(logistic(5.0)).epsilon(1e-5));
  const auto mono = make_instant_pl(map_of({-0.9, -0.2, 0.1, 0.8}), 10.0);
  for (std::size_t i = 1; i < mono.size(); ++i) CHECK(mono[i - 1] < mono[i]);
}

TEST_CASE("ema_update") {
  PseudoLabelBank bank;
  const auto& first = bank.ema_update(ModelTag::A, 7, Tensor::filled({4}, 0.4), 0.7, 1);
  CHECK(first.values == Tensor::filled({4}, 0.4));
  const auto& second = bank.ema_update(ModelTag::A, 7, Tensor::filled({4}, 0.8), 0.7, 2);
  for (double v : second.values.values()) CHECK(v == doctest::Approx(0.52).epsilon(1e-15));
  CHECK(second.last_update_step == 2);
  CHECK(bank.size() == 1);
  CHECK_FALSE(bank.contains(ModelTag::B, 7));

  // steps must increase, instants must be probabilities
  CHECK_THROWS(bank.ema_update(ModelTag::A, 7, Tensor::filled({4}, 0.5), 0.7, 2));
  CHECK_THROWS(bank.ema_update(ModelTag::A, 8, Tensor::filled({4}, 1.5), 0.7, 3));
  CHECK_THROWS(bank.ema_update(ModelTag::A, 9, Tensor::filled({4}, 0.5), 1.0, 3));

  // beta = 0 keeps only the instant
  PseudoLabelBank b0;
  b0.ema_update(ModelTag::B, 1, Tensor::vector({0.1, 0.9}), 0.0, 1);
  CHECK(b0.ema_update(ModelTag::B, 1, Tensor::vector({0.6, 0.3}), 0.0, 2).values == Tensor::vector({0.6, 0.3}));

  // constant input from a fresh entry stays exact
  PseudoLabelBank bc;
  for (int t = 1; t <= 20; ++t) {
    CHECK(bc.ema_update(ModelTag::A, 3, Tensor::filled({2}, 0.37), 0.9, t).values == Tensor::filled({2}, 0.37));
  }
}

TEST_CASE("ema converges geometrically toward a constant input") {
  const double beta = 0.7, c = 0.9, start = 0.2;
  PseudoLabelBank bank;
  bank.ema_update(ModelTag::A, 0, Tensor::scalar(start), beta, 0);
  for (int t = 1; t <= 15; ++t) {
    const double v = bank.ema_update(ModelTag::A, 0, Tensor::scalar(c), beta, t).values.item();
    CHECK(std::abs(v - c) == doctest::Approx(std::pow(beta, t) * std::abs(start - c)).epsilon(1e-12));
  }
}

TEST_CASE("bank serialization round-trips exactly") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PseudoLabelBank bank;
  for (std::int64_t id = 0; id < 6; ++id) {
    for (auto k : {ModelTag::A, ModelTag::B}) {
      std::vector<double> v(9);
      for (auto& x : v) x = u(rng);
      bank.ema_update(k, id * 13, Tensor::matrix(3, 3, v), 0.7, id + 1);
    }
  }
  std::stringstream ss;
  bank.write(ss);
  const auto back = PseudoLabelBank::read(ss);
  CHECK(back == bank);
  std::istringstream bad("garbage");
  CHECK_THROWS(PseudoLabelBank::read(bad));
}

TEST_CASE("pearson") {
  const std::vector<double> a{0.1, 0.9, 0.2, 0.8}, b{0.2, 0.7, 0.1, 0.9};
  CHECK(pearson(map_of(a), map_of(b)) == doctest::Approx(pearson_ref(a, b)).epsilon(1e-14));
  CHECK(pearson(map_of(a), map_of(a)) == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> neg(a.size());
  std::transform(a.begin(), a.end(), neg.begin(), [](double x) { return -x; });
  CHECK(pearson(map_of(a), map_of(neg)) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(pearson(map_of({0.3, 0.3, 0.3, 0.3}), map_of(b)), std::domain_error);
  CHECK_THROWS(pearson(map_of({0.1, 0.2}), map_of(b)));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(16), y(16), z(16);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    const double alpha = 0.1 + std::abs(u(rng)) * 5, gamma = u(rng) * 3;
    std::transform(x.begin(), x.end(), z.begin(), [&](double v) { return alpha * v + gamma; });
    CHECK(pearson(map_of(z), map_of(y)) == doctest::Approx(pearson(map_of(x), map_of(y))).epsilon(1e-10));
    CHECK(pearson(map_of(x), map_of(y)) == doctest::Approx(pearson_ref(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("ramp fraction") {
  const auto s = schedule(2, 10);
  CHECK(s.ramp_fraction(0) == 0.0);
  CHECK(s.ramp_fraction(1) == 0.0);
  CHECK(s.ramp_fraction(2) == doctest::Approx(0.1));
  CHECK(s.ramp_fraction(9) == 1.0);
  for (std::size_t e = 1; e < 12; ++e) CHECK(s.ramp_fraction(e) >= s.ramp_fraction(e - 1));
}

TEST_CASE("curriculum selection") {
  const std::set<std::int64_t> labeled{100, 101};
  const std::map<std::int64_t, double> rhos{{1, 0.95}, {2, 0.9}, {3, 0.85}, {4, 0.7}, {5, 0.82}};
  const auto s = schedule();

  CHECK(curriculum_select(rhos, labeled, 0.0, s) == labeled);

  // brute force: filter eligible, sort descending, take ceil(ramp * count)
  std::vector<std::pair<double, std::int64_t>> eligible;
  for (auto [id, r] : rhos) {
    if (r > 0.8) eligible.push_back({-r, id});
  }
  std::sort(eligible.begin(), eligible.end());
  const auto take = static_cast<std::size_t>(std::ceil(0.5 * static_cast<double>(eligible.size())));
  std::set<std::int64_t> expected = labeled;
  for (std::size_t i = 0; i < take; ++i) expected.insert(eligible[i].second);
  const auto got = curriculum_select(rhos, labeled, 0.5, s);
  CHECK(got == expected);
  CHECK(got == std::set<std::int64_t>{1, 2, 100, 101});

  // nothing above the floor
  const std::map<std::int64_t, double> low{{1, 0.8}, {2, 0.5}, {3, -0.9}};
  CHECK(curriculum_select(low, labeled, 1.0, s) == labeled);

  // delta above the floor tightens eligibility
  auto strict = s;
  strict.delta = 0.88;
  CHECK(curriculum_select(rhos, labeled, 1.0, strict) == std::set<std::int64_t>{1, 2, 100, 101});

  // ties go to the lower id
  const std::map<std::int64_t, double> tied{{9, 0.9}, {4, 0.9}, {6, 0.9}};
  CHECK(curriculum_select(tied, {}, 0.34, s) == std::set<std::int64_t>{4, 6});
}

TEST_CASE("selection grows monotonically with the epoch and always contains the labeled set") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::map<std::int64_t, double> rhos;
  for (std::int64_t i = 0; i < 200; ++i) rhos[i] = u(rng) * 0.2 + 0.8;
  const std::set<std::int64_t> labeled{1000, 1001, 1002};
  const auto s = schedule(3, 20);
  std::set<std::int64_t> prev;
  for (std::size_t e = 0; e < 20; ++e) {
    const auto cur = curriculum_select(rhos, labeled, s.ramp_fraction(e), s);
    CHECK(std::includes(cur.begin(), cur.end(), labeled.begin(), labeled.end()));
    CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
    prev = cur;
  }
}
