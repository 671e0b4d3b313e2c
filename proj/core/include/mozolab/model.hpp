// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mozolab/tensor.hpp"

namespace mozolab {

enum class Branch { kVision, kLanguage };
constexpr std::array<Branch, 2> kBranches = {Branch::kVision, Branch::kLanguage};

const char* branch_name(Branch b);
Branch parse_branch(const std::string& name);

enum class AdapterKind { kLora, kMoe };
const char* adapter_name(AdapterKind k);
AdapterKind parse_adapter(const std::string& name);

struct ModelConfig {
  int num_layers = 8;
  int vision_width = 64;
  int language_width = 32;
  int vision_input = 64;
  int language_input = 32;
  int embed_dim = 32;
  AdapterKind adapter = AdapterKind::kLora;
  int rank = 4;
  int experts = 2;
  double logit_scale = 10.0;
  std::uint64_t seed = 1;

  int width(Branch b) const { return b == Branch::kVision ? vision_width : language_width; }
  int input_dim(Branch b) const { return b == Branch::kVision ? vision_input : language_input; }
};

/// Address of one trainable adapter: (branch, 1-based layer, kind).
struct UnitId {
  Branch branch;
  int layer;
  AdapterKind kind;

  bool operator==(const UnitId&) const = default;
  bool operator<(const UnitId& o) const {
    if (branch != o.branch) return branch < o.branch;
    return layer < o.layer;
  }
};

std::string unit_name(const UnitId& id);  // e.g. "vision/3"

/// One trainable adapter's parameters.
/// lora: params = {A [d_in x rank], B [rank x width]}, adapter(h) = (h A) B.
/// moe:  params = {A_1, B_1, ..., A_E, B_E, gate [d_in x E]},
///       adapter(h) = sum_e softmax(h gate)_e * (h A_e) B_e.
struct ParamUnit {
  UnitId id;
  std::vector<TensorPtr> params;

  std::size_t param_floats() const;

  // Pending +epsilon perturbation, kept so the paired -epsilon call can
  // restore the original values bit-exactly (float addition alone cannot).
  std::optional<std::vector<std::vector<double>>> pending;
};

/// In-place params += sign * epsilon * probe. A +1 call stashes the exact
/// original values; the matching -1 call with the same probe restores them
/// bit-for-bit. An unpaired -1 applies the plain subtraction.
void perturb_unit(ParamUnit& unit, std::span<const std::vector<double>> probe,
                  double epsilon, int sign);

struct UnitSnapshot {
  const void* model_tag = nullptr;
  std::vector<std::vector<std::vector<double>>> params;  // per unit, per tensor
};

/// Position of each class id within the candidate list; throws when a
/// class is missing from it.
std::vector<int> candidate_positions(std::span<const int> class_ids,
                                     std::span<const int> candidates);

/// Frozen dual-branch contrastive encoder with one trainable adapter unit
/// per layer per branch. Each layer computes h <- tanh(h W) + adapter(h);
/// the branch output is the L2-normalized projection of the last layer.
class Model {
 public:
  Model(ModelConfig cfg, std::vector<double> class_prototypes);

  const ModelConfig& config() const { return cfg_; }
  int num_classes() const { return num_classes_; }

  /// Forward one branch. `inputs` is [batch x input_dim]; a null tape means
  /// no recording. Returns [batch x embed_dim] with unit-norm rows.
  TensorPtr encode(Branch b, const TensorPtr& inputs, Tape* tape) const;

  /// Contrastive cross-entropy of a vision batch against the language
  /// embeddings of `candidates` (mean over the batch). Every class id in
  /// the batch must appear in `candidates`.
  TensorPtr loss_batch(const TensorPtr& vision_batch, std::span<const int> class_ids,
                       std::span<const int> candidates, Tape* tape) const;

  std::span<ParamUnit> units() { return units_; }
  std::span<const ParamUnit> units() const { return units_; }
  ParamUnit& unit(Branch b, int layer);  // layer is 1-based

  UnitSnapshot snapshot_units() const;
  void restore_units(const UnitSnapshot& snap);

  /// Leaf tensor of language-branch inputs for the given classes.
  TensorPtr prototype_batch(std::span<const int> class_ids) const;

  /// FNV-1a hash over every frozen value (backbone, projections,
  /// prototypes, logit scale). Training must never change it.
  std::uint64_t frozen_hash() const;

  // ---- fast evaluation path (no tensors, no tape) ----
  // Bit-identical to the graph path: both call the same kernels in the
  // same order.

  struct BranchActivations {
    int batch = 0;
    std::vector<std::vector<double>> h;  // h[0] = inputs, h[1..L] layer outputs
    std::vector<double> embed;           // [batch x embed_dim], L2-normalized
  };

  /// Recomputes layers [from_layer .. L] and the embedding, reading
  /// activations below `from_layer` from `base`. Writing into `base`
  /// itself (out == base) refreshes the cache in place.
  void eval_encode(Branch b, const BranchActivations& base, BranchActivations& out,
                   int from_layer) const;

  /// Seeds activations from raw input rows (h[0]) without computing layers.
  void eval_set_inputs(Branch b, std::span<const double> inputs, int batch,
                       BranchActivations& acts) const;

  double eval_loss_head(const std::vector<double>& v_embed, int batch,
                        const std::vector<double>& t_embed, int n_candidates,
                        std::span<const int> targets) const;

 private:
  TensorPtr adapter_forward(const ParamUnit& unit, const TensorPtr& h, Tape* tape) const;
  void eval_adapter(const ParamUnit& unit, const std::vector<double>& h, int batch,
                    int d_in, int width, std::vector<double>& out) const;

  ModelConfig cfg_;
  int num_classes_ = 0;
  std::vector<double> prototypes_;                     // [C x language_input]
  std::array<std::vector<TensorPtr>, 2> backbone_;     // per branch, per layer
  std::array<TensorPtr, 2> projection_;                // [width x embed_dim]
  std::vector<ParamUnit> units_;                       // vision 1..L, language 1..L
  TensorPtr scale_const_;                              // leaf scalar logit_scale
  std::array<TensorPtr, 2> ones_row_;                  // [1 x width] per branch
  std::vector<TensorPtr> expert_selectors_;            // [experts x 1] one-hots
};

}  // namespace mozolab
