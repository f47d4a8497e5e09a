#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

#include "xpl/tensor.hpp"

namespace xpl {

enum class ModelTag { A, B };

inline ModelTag other(ModelTag k) { return k == ModelTag::A ? ModelTag::B : ModelTag::A; }
inline char tag_char(ModelTag k) { return k == ModelTag::A ? 'A' : 'B'; }
ModelTag parse_tag(std::string_view s);

enum class Split { Labeled, Unlabeled, Test, OpensetTest };

std::string_view split_name(Split s);
Split parse_split(std::string_view s);

/// One audio-visual sample. The visual grid is stored as (H*W) x C_v with
/// cells in row-major order; masks and maps use the same cell order.
struct AVPair {
  std::int64_t sample_id = 0;
  int category = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor visual;
  Tensor audio;
  std::optional<Tensor> gt_mask;
  Split split = Split::Unlabeled;

  std::size_t cells() const { return height * width; }
};

/// Cosine-similarity heatmap of one model for one sample, values in [-1, 1].
struct PredictionMap {
  Tensor values;
  std::size_t height = 0;
  std::size_t width = 0;
  ModelTag tag = ModelTag::A;
  std::int64_t sample_id = 0;
};

}  // namespace xpl
