#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "xpl/gradcheck.hpp"
#include "xpl/model.hpp"

using namespace xpl;

namespace {

BackboneSpec small_spec(std::uint64_t seed, std::vector<std::size_t> hidden = {6, 5}) {
  BackboneSpec s;
  s.hidden_widths = std::move(hidden);
  s.embed_dim = 4;
  s.init_seed = seed;
  s.visual_dim = 3;
  s.audio_dim = 5;
  return s;
}

AVPair random_pair(std::mt19937_64& rng, std::size_t h = 3, std::size_t w = 3, std::size_t cv = 3, std::size_t ca = 5) {
  std::normal_distribution<double> n(0.0, 1.0);
  AVPair p;
  p.height = h;
  p.width = w;
  std::vector<double> v(h * w * cv), a(ca);
  for (auto& x : v) x = n(rng);
  for (auto& x : a) x = n(rng);
  p.visual = Tensor::matrix(h * w, cv, v);
  p.audio = Tensor::vector(a);
  return p;
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

// Linear encoder: identity visual and audio projections, no hidden layer.
EncoderParams identity_params(std::size_t d) {
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  EncoderParams p;
  p.visual.push_back({Tensor::matrix(d, d, eye), Tensor::zeros({d})});
  p.audio.push_back({Tensor::matrix(d, d, eye), Tensor::zeros({d})});
  return p;
}

}  // namespace

TEST_CASE("init_params is deterministic and respects the xavier bound") {
  const auto spec = small_spec(11);
  CHECK(init_params(spec) == init_params(spec));
  CHECK_FALSE(init_params(spec) == init_params(small_spec(12)));

  const auto p = init_params(spec);
  for (const auto* stack : {&p.visual, &p.audio}) {
    for (const auto& layer : *stack) {
      const double fan_in = static_cast<double>(layer.weight.dim(0));
      const double fan_out = static_cast<double>(layer.weight.dim(1));
      const double s = std::sqrt(6.0 / (fan_in + fan_out));
      for (double w : layer.weight.values()) CHECK(std::abs(w) <= s);
      for (double b : layer.bias.values()) CHECK(b == 0.01);
    }
  }
  // layer dims chain
  CHECK(p.visual.front().weight.dim(0) == 3);
  CHECK(p.visual[1].weight.dim(0) == p.visual[0].weight.dim(1));
  CHECK(p.audio.back().weight.dim(1) == 4);
}

TEST_CASE("zero-width layers are rejected") {
  CHECK_THROWS(init_params(small_spec(1, {4, 0})));
  auto s = small_spec(1);
  s.embed_dim = 0;
  CHECK_THROWS(init_params(s));
}

TEST_CASE("backbones must differ") {
  CHECK_THROWS(require_distinct(small_spec(3), small_spec(3)));
  CHECK_NOTHROW(require_distinct(small_spec(3), small_spec(4)));
  CHECK_NOTHROW(require_distinct(small_spec(3, {6, 5}), small_spec(3, {5, 5})));
}

TEST_CASE("identical cells give identical embeddings") {
  const auto p = init_params(small_spec(5));
  ad::Graph g;
  auto enc = bind(g, p);
  auto cells = encode_visual(enc, g.constant(Tensor::matrix(3, 3, {0.2, -1, 0.4, 0.2, -1, 0.4, 0.2, -1, 0.4})));
  const auto& v = cells.value();
  for (std::size_t c = 0; c < v.cols(); ++c) {
    CHECK(v.at(0, c) == v.at(1, c));
    CHECK(v.at(0, c) == v.at(2, c));
  }
  CHECK_THROWS(encode_visual(enc, g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}))));
  CHECK_THROWS(encode_audio(enc, g.constant(Tensor::vector({1, 2}))));
}

TEST_CASE("zero weights give zero embeddings") {
  const auto p = zeros_like(init_params(small_spec(5)));
  ad::Graph g;
  auto enc = bind(g, p);
  auto cells = encode_visual(enc, g.constant(Tensor::matrix(1, 3, {1, 2, 3})));
  for (double v : cells.value().values()) CHECK(v == 0.0);
  auto a = encode_audio(enc, g.constant(Tensor::vector({1, 2, 3, 4, 5})));
  for (double v : a.value().values()) CHECK(v == 0.0);
}

TEST_CASE("2x2 map matches a direct cosine per cell") {
  AVPair pair;
  pair.height = pair.width = 2;
  const std::vector<std::vector<double>> cells{{1, 0}, {0, 2}, {-1, -1}, {3, 1}};
  const std::vector<double> audio{1, 1};
  std::vector<double> flat;
  for (const auto& c : cells) flat.insert(flat.end(), c.begin(), c.end());
  pair.visual = Tensor::matrix(4, 2, flat);
  pair.audio = Tensor::vector(audio);

  const auto m = prediction_map(identity_params(2), pair, ModelTag::B);
  CHECK(m.tag == ModelTag::B);
  for (std::size_t i = 0; i < 4; ++i) CHECK(m.values[i] == doctest::Approx(cosine(cells[i], audio)).epsilon(1e-14));
  CHECK(m.values[2] == doctest::Approx(-1.0).epsilon(1e-15));

  // parallel and antiparallel cells
  pair.visual = Tensor::matrix(2, 2, {2, 2, -3, -3});
  pair.height = 1;
  const auto m2 = prediction_map(identity_params(2), pair, ModelTag::A);
  CHECK(m2.values[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m2.values[1] == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("zero-norm cell embedding is an error") {
  AVPair pair;
  pair.height = 1;
  pair.width = 2;
  pair.visual = Tensor::matrix(2, 2, {0, 0, 1, 1});
  pair.audio = Tensor::vector({1, 0});
  CHECK_THROWS_AS(prediction_map(identity_params(2), pair, ModelTag::A), std::domain_error);
}

TEST_CASE("map is invariant to positive rescaling of the audio embedding") {
  std::mt19937_64 rng(8);
  auto pair = random_pair(rng, 2, 3, 4, 4);
  auto p = identity_params(4);
  const auto base = prediction_map(p, pair, ModelTag::A);
  p.audio[0].weight = Tensor::matrix(4, 4, {3, 0, 0, 0, 0, 3, 0, 0, 0, 0, 3, 0, 0, 0, 0, 3});
  const auto scaled = prediction_map(p, pair, ModelTag::A);
  for (std::size_t i = 0; i < base.values.size(); ++i) {
    CHECK(scaled.values[i] == doctest::Approx(base.values[i]).epsilon(1e-13));
  }
}

TEST_CASE("map values lie in [-1, 1] for random inputs") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.05, 0.5);
  for (std::uint64_t s = 0; s < 50; ++s) {
    // positive biases keep every cell embedding away from the all-dead zero vector
    auto p = init_params(small_spec(s));
    for (auto* stack : {&p.visual, &p.audio}) {
      for (auto& layer : *stack) {
        for (auto& b : layer.bias.mutable_values()) b = u(rng);
      }
    }
    const auto m = prediction_map(p, random_pair(rng), ModelTag::A);
    for (double v : m.values.values()) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("gradient of mean(map) wrt every encoder parameter passes finite differences") {
  std::mt19937_64 rng(10);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto p = init_params(small_spec(100 + s));
    const auto pair = random_pair(rng);
    std::vector<Tensor> params;
    for (const auto* t : p.tensors()) params.push_back(*t);
    const auto res = ad::finite_diff_check(
        [&](ad::Graph& g, std::span<const ad::Var> leaves) {
          BoundEncoder enc;
          enc.visual_layers = p.visual.size();
          enc.leaves.assign(leaves.begin(), leaves.end());
          return ad::mean(forward(enc, g.constant(pair.visual), g.constant(pair.audio)).map);
        },
        params);
    CHECK_MESSAGE(res.max_rel_error <= 1e-4, "seed " << s << " err " << res.max_rel_error);
  }
}
