// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mozolab/allocation.hpp"
#include "mozolab/data.hpp"
#include "mozolab/model.hpp"
#include "mozolab/optim.hpp"

namespace mozolab {

/// Everything a run needs, with all randomness under explicit seeds.
/// When the per-purpose seeds are absent they are derived from run_seed.
struct RunConfig {
  ModelConfig model;
  DataConfig data;
  ZoConfig zo;

  BranchSet branches;                      // where the ZO strategy applies
  LayerPattern pattern;                    // which layers within those branches
  Strategy strategy = Strategy::kFo;       // strategy for the selected units

  int inc_size = 20;
  int epochs = 5;
  int batch_size = 16;
  double learning_rate = 0.05;

  std::uint64_t run_seed = 42;
  std::optional<std::uint64_t> dataset_seed;
  std::optional<std::uint64_t> model_seed;
  std::optional<std::uint64_t> optimizer_seed;
  std::optional<std::uint64_t> stream_shuffle_seed;

  std::uint64_t resolved_dataset_seed() const;
  std::uint64_t resolved_model_seed() const;
  std::uint64_t resolved_optimizer_seed() const;
};

/// Cost model of one training step, in float counts.
struct MemoryReport {
  std::size_t tape_floats = 0;     // saved encoder activations
  std::size_t grad_floats = 0;     // stored gradients (FO unit params)
  std::size_t perturb_floats = 0;  // probe buffers for one candidate
};

struct LossEvent {
  int task;
  int epoch;
  int step;  // within-task step index (continues across epochs)
  double value;
};

struct GradVarEvent {
  int task;
  int step;
  Branch branch;
  int layer;
  double variance;  // within-step elementwise sample variance
  double norm;      // L2 norm of the same estimate (for cross-step stats)
};

struct RunMetrics {
  std::vector<LossEvent> losses;
  std::vector<GradVarEvent> grad_vars;
  std::vector<double> per_task_accuracy;
  double last_acc = 0.0;
  double avg_acc = 0.0;
  MemoryReport memory;
  std::size_t observed_tape_peak = 0;
  std::size_t backward_calls = 0;
  bool partial = false;
  std::string abort_reason;
  int abort_task = -1;
  int abort_step = -1;
  std::string policy_string;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
};

/// Thrown when a step diverges; run_stream converts it into a partial run.
struct TrainAbort : std::runtime_error {
  TrainAbort(int task_, int step_, const std::string& what)
      : std::runtime_error(what), task(task_), step(step_) {}
  int task;
  int step;
};

struct StepObservation {
  const StepReport* report;
  Model* model;
  StepLoss* loss;
  std::span<ParamUnit* const> units;
  int task;
  int step;
};

struct RunHooks {
  SampleTap tap;
  std::function<void(const StepObservation&)> on_zo_step;
  std::function<void(const UnitId&, double epsilon, int sign)> on_perturb;
  bool capture_probes = false;
};

/// Unbiased sample variance (n-1 denominator); 0 for fewer than 2 values.
double sample_variance(std::span<const double> values);
double l2_norm(std::span<const double> values);

/// Variance over the flattened elements of one unit's gradient estimate.
double grad_variance(const GradEstimate& estimate);

/// StepLoss over one minibatch with per-branch, per-layer activation
/// caching. Probe evaluations recompute only from the perturbed layer up;
/// values are bit-identical to the graph-path loss.
class CachedStepLoss : public StepLoss {
 public:
  CachedStepLoss(Model& model, const Batch& batch, std::span<const int> candidates);
  double base() override;
  double probe(const UnitId& changed) override;
  double probe_all() override;
  void commit(const UnitId& changed) override;
  void commit_all() override;

 private:
  void ensure_clean(Branch b);
  Model& model_;
  std::vector<int> targets_;
  int batch_size_;
  int n_candidates_;
  Model::BranchActivations base_[2];
  Model::BranchActivations scratch_[2];
  int dirty_from_[2] = {1, 1};  // 0 = clean
  std::optional<double> base_loss_;
};

/// One task of the continual loop: per batch, one recorded forward/backward
/// plus fo_step when any FO unit exists, then the configured ZO step on the
/// same batch. Candidates are the current task's classes.
void train_task(Model& model, const SynthDataset& data, const Task& task, int task_index,
                const AllocationPolicy& policy, const RunConfig& cfg, Rng& shuffle_rng,
                Rng& probe_rng, RunMetrics& metrics, const RunHooks* hooks = nullptr);

/// Accuracy over the union of test splits of tasks 0..through_task;
/// prediction is the argmax cosine similarity over all seen-class
/// prototypes (no task identifier used).
double evaluate_seen(const Model& model, const SynthDataset& data, const TaskStream& stream,
                     int through_task, const SampleTap& tap = {});

/// Static cost model of one training step under the policy: encoder
/// activations saved for backward, stored FO gradients, and one
/// candidate's probe buffers. Both branches are modeled at `batch_size`
/// rows, so the report is exactly linear in it.
MemoryReport memory_footprint(const ModelConfig& model_config, const AllocationPolicy& policy,
                              int batch_size);

/// Full continual run: trains tasks in order, evaluates after each task,
/// fully deterministic given the config.
RunMetrics run_stream(const RunConfig& cfg, const RunHooks* hooks = nullptr);

struct SeedStat {
  double mean = 0.0;
  double std_dev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct SeedAggregate {
  int runs = 0;
  SeedStat last_acc;
  SeedStat avg_acc;
};

/// Mean / unbiased std / min / max over runs that share a config (modulo
/// seeds). Permutation-invariant, including bitwise.
SeedAggregate aggregate_seeds(std::span<const RunMetrics> runs);

/// Fingerprint of everything in the config except the seeds.
std::uint64_t config_digest(const RunConfig& cfg);

}  // namespace mozolab
