#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xpl/autodiff.hpp"
#include "xpl/types.hpp"

namespace xpl {

struct BackboneSpec {
  std::vector<std::size_t> hidden_widths;
  std::size_t embed_dim = 16;
  std::uint64_t init_seed = 0;
  std::size_t visual_dim = 0;
  std::size_t audio_dim = 0;

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

/// Throws when two backbones share both hidden widths and init seed.
void require_distinct(const BackboneSpec& a, const BackboneSpec& b);

struct DenseLayer {
  Tensor weight;  // in x out
  Tensor bias;    // out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Visual encoder f (applied per cell, weights shared across cells) and
/// audio encoder g. Both are ReLU MLPs with a linear output layer.
struct EncoderParams {
  std::vector<DenseLayer> visual;
  std::vector<DenseLayer> audio;

  std::vector<const Tensor*> tensors() const;
  std::vector<Tensor*> tensors();
  std::vector<std::string> names() const;

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// Xavier-uniform weights, biases 0.01, deterministic in spec.init_seed.
EncoderParams init_params(const BackboneSpec& spec);

EncoderParams zeros_like(const EncoderParams& p);

/// Parameters of one encoder pair as graph leaves, in tensors() order.
struct BoundEncoder {
  std::vector<ad::Var> leaves;
  std::size_t visual_layers = 0;

  ad::Var weight(bool visual, std::size_t layer) const;
  ad::Var bias(bool visual, std::size_t layer) const;
};

BoundEncoder bind(ad::Graph& graph, const EncoderParams& params);

/// Collects gradients of the bound leaves into a parameter-shaped struct.
EncoderParams collect_gradients(const ad::Gradients& grads, const BoundEncoder& bound, const EncoderParams& like);

/// (H*W) x C_v grid -> (H*W) x d cell embeddings.
ad::Var encode_visual(const BoundEncoder& enc, ad::Var grid);
/// C_a vector -> d vector.
ad::Var encode_audio(const BoundEncoder& enc, ad::Var audio);

struct ForwardVars {
  ad::Var cells;  // (H*W) x d
  ad::Var audio;  // d
  ad::Var map;    // H*W cosine values
};

ForwardVars forward(const BoundEncoder& enc, ad::Var grid, ad::Var audio);

PredictionMap prediction_map(const EncoderParams& params, const AVPair& pair, ModelTag tag);

struct Model {
  ModelTag tag = ModelTag::A;
  BackboneSpec spec;
  EncoderParams params;
};

Model make_model(ModelTag tag, const BackboneSpec& spec);

/// Squared L2 distance between two same-shaped parameter sets.
double param_distance_sq(const EncoderParams& a, const EncoderParams& b);

}  // namespace xpl
