// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mozolab/rng.hpp"
#include "mozolab/tensor.hpp"

namespace mozolab {

struct DataConfig {
  int classes = 100;
  int latent_dim = 16;
  int vision_dim = 64;
  int language_dim = 32;
  int train_per_class = 50;
  int test_per_class = 20;
  double sigma = 0.1;
  std::uint64_t seed = 3;
};

/// Seeded synthetic multimodal classification data. Each class c owns a
/// unit-norm latent z_c; vision samples are W_v z_c plus Gaussian noise and
/// the language prototype is W_l z_c. Regeneration from the same config is
/// bit-identical, and the whole dataset round-trips through a flat binary
/// file (magic "MZLB").
class SynthDataset {
 public:
  static SynthDataset generate(const DataConfig& cfg);

  const DataConfig& config() const { return cfg_; }

  std::span<const double> latent(int class_id) const;
  std::span<const double> prototype(int class_id) const;
  std::span<const double> train_sample(int class_id, int index) const;
  std::span<const double> test_sample(int class_id, int index) const;
  /// Noise-free class mean in vision space (W_v z_c).
  std::vector<double> vision_class_mean(int class_id) const;

  /// Flat prototype matrix [classes x language_dim], row-major.
  const std::vector<double>& prototype_matrix() const { return prototypes_; }

  void save(const std::string& path) const;
  static SynthDataset load(const std::string& path);

  bool operator==(const SynthDataset& other) const;

 private:
  SynthDataset() = default;
  DataConfig cfg_;
  std::vector<double> latents_;     // [C x latent_dim]
  std::vector<double> w_vision_;    // [latent_dim x vision_dim]
  std::vector<double> w_language_;  // [latent_dim x language_dim]
  std::vector<double> prototypes_;  // [C x language_dim]
  std::vector<double> train_;       // [C x train_per_class x vision_dim]
  std::vector<double> test_;        // [C x test_per_class x vision_dim]
};

struct SampleRef {
  int class_id;
  int index;  // within the class's train or test block
  bool operator==(const SampleRef&) const = default;
};

struct Task {
  std::vector<int> classes;
  std::vector<SampleRef> train;
  std::vector<SampleRef> test;
};

/// Ordered class-incremental tasks with pairwise-disjoint class sets.
class TaskStream {
 public:
  TaskStream(std::vector<Task> tasks, int inc_size)
      : tasks_(std::move(tasks)), inc_size_(inc_size) {}

  const std::vector<Task>& tasks() const { return tasks_; }
  int inc_size() const { return inc_size_; }

  /// Union of class sets of tasks 0..through_task, ascending.
  std::vector<int> seen_classes(int through_task) const;

 private:
  std::vector<Task> tasks_;
  int inc_size_;
};

/// Splits the dataset into classes/inc_size tasks of inc_size classes each,
/// assigned by ascending class id (or a seeded shuffle when requested).
/// Errors when inc_size does not divide the class count.
TaskStream build_task_stream(const SynthDataset& data, int inc_size,
                             std::optional<std::uint64_t> shuffle_seed = {});

/// Observation hook for dataset reads (used by no-leakage checks).
using SampleTap = std::function<void(int class_id, int sample_index, bool is_train)>;

struct Batch {
  TensorPtr vision;            // [batch x vision_dim]
  std::vector<int> class_ids;  // batch labels
};

/// One epoch of seeded-shuffle minibatches over the task's train split.
/// The final partial batch is included; the emitted indices form an exact
/// permutation of the split.
std::vector<Batch> epoch_batches(const SynthDataset& data, const Task& task,
                                 int batch_size, Rng& rng,
                                 const SampleTap& tap = {});

/// Gathers test samples into a single tensor (rows in the given order).
TensorPtr gather_samples(const SynthDataset& data,
                         std::span<const SampleRef> refs, bool from_train,
                         const SampleTap& tap = {});

}  // namespace mozolab
