#include "xpl/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace xpl {

namespace {

// A small positive bias keeps a cell whose ReLUs are all dead from mapping to
// the zero embedding, where cosine is undefined.
constexpr double kInitBias = 0.01;

std::vector<DenseLayer> init_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                                 std::mt19937_64& rng) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto fan_in = dims[l], fan_out = dims[l + 1];
    if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("init_params: zero-width layer");
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    std::vector<double> w(fan_in * fan_out);
    for (auto& v : w) v = dist(rng);
    layers.push_back({Tensor::matrix(fan_in, fan_out, std::move(w)), Tensor::filled({fan_out}, kInitBias)});
  }
  return layers;
}

ad::Var mlp(const BoundEncoder& enc, bool visual, std::size_t n_layers, ad::Var x) {
  for (std::size_t l = 0; l < n_layers; ++l) {
    x = ad::add_bias(ad::matmul(x, enc.weight(visual, l)), enc.bias(visual, l));
    if (l + 1 < n_layers) x = ad::relu(x);
  }
  return x;
}

}  // namespace

void require_distinct(const BackboneSpec& a, const BackboneSpec& b) {
  if (a.hidden_widths == b.hidden_widths && a.init_seed == b.init_seed) {
    throw std::invalid_argument("backbones A and B must differ in hidden widths or init seed");
  }
}

std::vector<const Tensor*> EncoderParams::tensors() const {
  std::vector<const Tensor*> out;
  for (const auto* stack : {&visual, &audio}) {
    for (const auto& layer : *stack) {
      out.push_back(&layer.weight);
      out.push_back(&layer.bias);
    }
  }
  return out;
}

std::vector<Tensor*> EncoderParams::tensors() {
  std::vector<Tensor*> out;
  for (auto* stack : {&visual, &audio}) {
    for (auto& layer : *stack) {
      out.push_back(&layer.weight);
      out.push_back(&layer.bias);
    }
  }
  return out;
}

std::vector<std::string> EncoderParams::names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < visual.size(); ++l) {
    out.push_back("visual." + std::to_string(l) + ".weight");
    out.push_back("visual." + std::to_string(l) + ".bias");
  }
  for (std::size_t l = 0; l < audio.size(); ++l) {
    out.push_back("audio." + std::to_string(l) + ".weight");
    out.push_back("audio." + std::to_string(l) + ".bias");
  }
  return out;
}

EncoderParams init_params(const BackboneSpec& spec) {
  if (spec.embed_dim == 0 || spec.visual_dim == 0 || spec.audio_dim == 0) {
    throw std::invalid_argument("init_params: zero-width layer");
  }
  std::mt19937_64 rng(spec.init_seed);
  EncoderParams p;
  p.visual = init_mlp(spec.visual_dim, spec.hidden_widths, spec.embed_dim, rng);
  p.audio = init_mlp(spec.audio_dim, spec.hidden_widths, spec.embed_dim, rng);
  return p;
}

EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams z = p;
  for (Tensor* t : z.tensors()) *t = Tensor::zeros(t->shape());
  return z;
}

ad::Var BoundEncoder::weight(bool visual, std::size_t layer) const {
  const std::size_t base = visual ? 0 : 2 * visual_layers;
  return leaves.at(base + 2 * layer);
}

ad::Var BoundEncoder::bias(bool visual, std::size_t layer) const {
  const std::size_t base = visual ? 0 : 2 * visual_layers;
  return leaves.at(base + 2 * layer + 1);
}

BoundEncoder bind(ad::Graph& graph, const EncoderParams& params) {
  BoundEncoder enc;
  enc.visual_layers = params.visual.size();
  for (const Tensor* t : params.tensors()) enc.leaves.push_back(graph.leaf(*t));
  return enc;
}

EncoderParams collect_gradients(const ad::Gradients& grads, const BoundEncoder& bound, const EncoderParams& like) {
  EncoderParams out = like;
  auto dst = out.tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = grads.of_or_zero(bound.leaves[i]);
  return out;
}

ad::Var encode_visual(const BoundEncoder& enc, ad::Var grid) {
  if (grid.value().rank() != 2 || grid.value().dim(1) != enc.weight(true, 0).value().dim(0)) {
    throw std::invalid_argument("encode_visual: grid " + shape_str(grid.shape()) + " does not match encoder");
  }
  return mlp(enc, true, enc.visual_layers, grid);
}

ad::Var encode_audio(const BoundEncoder& enc, ad::Var audio) {
  const std::size_t audio_layers = enc.leaves.size() / 2 - enc.visual_layers;
  const auto& w0 = enc.weight(false, 0).value();
  if (audio.value().rank() != 1 || audio.value().size() != w0.dim(0)) {
    throw std::invalid_argument("encode_audio: input " + shape_str(audio.shape()) + " does not match encoder");
  }
  // Lift to a 1 x C_a row so the shared layer code applies.
  const ad::Var lifted = ad::stack_rows(std::span<const ad::Var>(&audio, 1));
  return ad::row(mlp(enc, false, audio_layers, lifted), 0);
}

ForwardVars forward(const BoundEncoder& enc, ad::Var grid, ad::Var audio) {
  ad::Var cells = encode_visual(enc, grid);
  ad::Var a = encode_audio(enc, audio);
  return {cells, a, ad::cosine_rows(cells, a)};
}

PredictionMap prediction_map(const EncoderParams& params, const AVPair& pair, ModelTag tag) {
  ad::Graph g;
  auto enc = bind(g, params);
  auto fw = forward(enc, g.constant(pair.visual), g.constant(pair.audio));
  return {fw.map.value(), pair.height, pair.width, tag, pair.sample_id};
}

Model make_model(ModelTag tag, const BackboneSpec& spec) { return {tag, spec, init_params(spec)}; }

double param_distance_sq(const EncoderParams& a, const EncoderParams& b) {
  auto ta = a.tensors(), tb = b.tensors();
  if (ta.size() != tb.size()) throw std::invalid_argument("param_distance_sq: structure mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!ta[i]->same_shape(*tb[i])) throw std::invalid_argument("param_distance_sq: shape mismatch");
    for (std::size_t j = 0; j < ta[i]->size(); ++j) {
      const double d = (*ta[i])[j] - (*tb[i])[j];
      s += d * d;
    }
  }
  return s;
}

}  // namespace xpl
