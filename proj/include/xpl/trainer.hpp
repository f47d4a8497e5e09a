#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xpl/kernels.hpp"
#include "xpl/losses.hpp"
#include "xpl/metrics.hpp"
#include "xpl/model.hpp"
#include "xpl/pl_engine.hpp"
#include "xpl/synthdata.hpp"

namespace xpl {

enum class Mode { Xpl, SupOnly, VanillaHardPl };

std::string_view mode_name(Mode m);
Mode parse_mode(std::string_view s);

struct Ablation {
  bool no_plema = false;
  bool no_sharpen = false;
  bool no_cross_refine = false;
  bool no_data_selection = false;

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct TrainConfig {
  Mode mode = Mode::Xpl;
  Ablation ablation;
  double beta = 0.7;
  double lambda_u = kDefaultLambdaU;
  double sharpen_a = 10.0;
  double delta = kConsensusFloor;
  double tau = kDefaultTemperature;
  std::size_t warmup_epochs = 6;
  std::size_t total_epochs = 30;
  std::size_t batch_size = 16;
  std::size_t steps_per_epoch = 16;  // 0: ceil(|unlabeled| / batch_size)
  double learning_rate = 0.1;
  double momentum = 0.9;
  double ramp_start = 0.1;
  double ramp_end = 0.6;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_a{32, 16};
  std::vector<std::size_t> hidden_b{24, 24};
  std::size_t embed_dim = 16;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  void apply_kv(const std::map<std::string, std::string>& kv);

  BackboneSpec backbone(ModelTag k, const GenConfig& data) const;
  std::uint64_t pipeline_seed(ModelTag k) const;
  SelectionSchedule schedule() const;
  std::size_t resolved_steps(std::size_t n_unlabeled) const;

  bool uses_pseudo_labels() const { return mode != Mode::SupOnly; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  bool warmup = false;
  double ciou_a = 0.0;
  double auc_a = 0.0;
  double ciou_b = 0.0;
  double auc_b = 0.0;
  double ciou_avg = 0.0;  // map averaged over A and B
  double auc_avg = 0.0;
  LossBreakdown loss;     // mean over the epoch's steps
  std::size_t n_selected = 0;
  double mean_rho = 0.0;  // NaN when no unlabeled sample was scored
};

struct MetricsHistory {
  std::vector<EpochRecord> records;

  /// Standard deviation of model A's test CIoU over the last
  /// ceil(fraction * epochs) records.
  double tail_ciou_std(double fraction = 0.2) const;
};

/// SGD with momentum: v <- momentum v + g; theta <- theta - lr v.
void sgd_step(EncoderParams& params, const EncoderParams& grads, EncoderParams& velocity, double lr,
              double momentum);

struct SplitReport {
  EvalReport a;
  EvalReport b;
  EvalReport avg;
};

/// Evaluates both models on one split using un-augmented inputs.
SplitReport evaluate_split(const EncoderParams& a, const EncoderParams& b, const Dataset& data, Split split);

/// Pseudo-label bookkeeping produced by the selection phase of an epoch.
struct SelectionResult {
  std::map<std::int64_t, double> rhos;
  std::vector<std::int64_t> selected;  // unlabeled ids, ascending
  double ramp = 0.0;
  // Maps of the whole unlabeled pool at scoring time, keyed by sample id.
  std::map<std::int64_t, std::pair<PredictionMap, PredictionMap>> maps;
};

class Trainer {
 public:
  Trainer(const Dataset& data, TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  const Model& model(ModelTag k) const { return k == ModelTag::A ? a_ : b_; }
  Model& model(ModelTag k) { return k == ModelTag::A ? a_ : b_; }
  const PseudoLabelBank& bank() const { return bank_; }
  const MetricsHistory& history() const { return history_; }
  std::size_t next_epoch() const { return history_.records.size(); }

  /// Runs the remaining warmup epochs.
  void warmup();
  /// Runs one epoch (warmup or pseudo-labeled, by index) and records it.
  const EpochRecord& run_epoch();
  /// Runs every remaining epoch.
  const MetricsHistory& run();

  /// Consensus scoring and curriculum selection for the given epoch.
  SelectionResult select(std::size_t epoch) const;
  /// Refreshes the bank for the selected samples; returns the targets each
  /// model trains on, keyed by sample id.
  std::map<std::int64_t, std::pair<Tensor, Tensor>> refresh_pseudo_labels(const SelectionResult& sel,
                                                                          std::size_t epoch);

  kernels::BatchSpec make_batch(ModelTag k, std::span<const AVPair* const> labeled,
                                std::span<const AVPair* const> unlabeled,
                                const std::map<std::int64_t, std::pair<Tensor, Tensor>>& targets,
                                std::uint64_t step) const;

 private:
  const Dataset& data_;
  TrainConfig cfg_;
  Model a_;
  Model b_;
  EncoderParams vel_a_;
  EncoderParams vel_b_;
  PseudoLabelBank bank_;
  MetricsHistory history_;
  std::uint64_t global_step_ = 0;
  std::vector<const AVPair*> labeled_;
  std::vector<const AVPair*> unlabeled_;
};

struct ExperimentResult {
  MetricsHistory history;
  Model a;
  Model b;
};

ExperimentResult run_experiment(const Dataset& data, const TrainConfig& cfg);
MetricsHistory run_experiment(const GenConfig& gen, const TrainConfig& cfg);

}  // namespace xpl
