#pragma once

// Synthetic audio-visual scenes with exact ground truth. Each category has a
// latent signature z; a scene places one rectangular sounding object whose
// cells carry W_v z + noise over a noise background, and its audio is
// W_a z + noise. Silent distractor objects of other categories may share the
// scene; only the sounding object is in the mask.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "xpl/types.hpp"

namespace xpl {

struct GenConfig {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t visual_dim = 8;
  std::size_t audio_dim = 8;
  std::size_t latent_dim = 4;
  std::size_t n_categories = 10;
  std::size_t n_openset_categories = 2;
  std::size_t n_labeled = 50;
  std::size_t n_unlabeled = 1000;
  std::size_t n_test = 200;
  std::size_t n_openset = 200;
  std::size_t min_object = 3;  // rectangle side, cells
  std::size_t max_object = 5;
  std::size_t n_distractors = 1;  // silent objects of other categories
  double noise_std = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  /// Applies recognised keys; unknown keys are ignored so a combined config
  /// file can be shared with the trainer.
  void apply_kv(const std::map<std::string, std::string>& kv);

  friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

struct CategoryPartition {
  std::vector<int> train;
  std::vector<int> openset;
};

/// Deterministic split of category ids into training and held-out sets.
CategoryPartition split_openset(const GenConfig& cfg);

struct Dataset {
  GenConfig config;
  std::vector<AVPair> samples;

  std::vector<const AVPair*> split(Split s) const;
  std::size_t count(Split s) const;
  bool has_split(Split s) const { return count(s) > 0; }
  const AVPair& by_id(std::int64_t id) const;

  void write(std::ostream& os) const;
  static Dataset read(std::istream& is);
  std::string serialize() const;
};

Dataset generate_dataset(const GenConfig& cfg);

struct AugmentConfig {
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double shift_lo = -0.05;
  double shift_hi = 0.05;
  double noise_std = 0.02;
};

/// Per-channel affine jitter plus Gaussian noise on the visual grid; audio
/// and mask untouched. Deterministic in (sample_id, pipeline_seed, step).
AVPair augment(const AVPair& pair, std::uint64_t pipeline_seed, std::uint64_t step,
               const AugmentConfig& aug = {});

/// Jitter draws used by augment(); exposed for bound checks.
struct AugmentDraw {
  std::vector<double> scale;
  std::vector<double> shift;
};
AugmentDraw augment_draw(std::int64_t sample_id, std::size_t channels, std::uint64_t pipeline_seed,
                         std::uint64_t step, const AugmentConfig& aug = {});

}  // namespace xpl
