#pragma once

// Batch-level compute. Each entry point has an OpenMP-parallel form that
// splits the work per sample with index-ordered reduction (results are
// bit-identical for any thread count) and a serial reference kept for tests
// and the benchmark.

#include <span>
#include <vector>

#include "xpl/losses.hpp"
#include "xpl/model.hpp"

namespace xpl::kernels {

int max_threads();

std::vector<PredictionMap> predict_maps(const EncoderParams& params, std::span<const AVPair* const> pairs,
                                        ModelTag tag);
std::vector<PredictionMap> predict_maps_serial(const EncoderParams& params, std::span<const AVPair* const> pairs,
                                               ModelTag tag);

enum class TargetKind {
  None,        // contributes to the contrastive term only
  Supervised,  // ground-truth mask
  Cross,       // pseudo-label produced by the other model
  Self,        // pseudo-label produced by this model (self-training)
};

struct BatchItem {
  AVPair view;  // already augmented for this model's pipeline
  TargetKind kind = TargetKind::None;
  Tensor target;
  ModelTag target_tag = ModelTag::A;  // producer of a pseudo-label target
};

struct BatchSpec {
  ModelTag model = ModelTag::A;
  std::vector<BatchItem> items;
  double lambda_u = kDefaultLambdaU;
  double tau = kDefaultTemperature;
  bool use_contrastive = true;
};

struct BatchResult {
  EncoderParams grads;
  ModelLosses losses;
};

/// Loss and parameter gradients of cross + sup + lambda_u * unsup for one
/// model. The contrastive term is split out: per-sample graphs run in
/// parallel, a small serial graph evaluates InfoNCE on their embeddings, and
/// its embedding gradients are pushed back through each sample graph.
BatchResult batch_gradients(const EncoderParams& params, const BatchSpec& spec);

/// Same quantity from one monolithic graph over the whole batch.
BatchResult batch_gradients_reference(const EncoderParams& params, const BatchSpec& spec);

}  // namespace xpl::kernels
