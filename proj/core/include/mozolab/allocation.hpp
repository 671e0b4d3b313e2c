// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "mozolab/model.hpp"
#include "mozolab/optim.hpp"

namespace mozolab {

enum class PatternKind { kAll, kHopOdd, kHopEven, kPrefix, kSuffix };

/// Layer selection pattern over 1-based layer indices. "hop-odd" selects
/// layers {1,3,5,...}, "prefix:K" the first K layers (input side),
/// "suffix:K" the last K layers (output side).
struct LayerPattern {
  PatternKind kind = PatternKind::kAll;
  int k = 0;

  bool selects(int layer, int num_layers) const;
  void validate(int num_layers) const;
  std::string to_string() const;
};

/// Parses `all | hop-odd | hop-even | prefix:K | suffix:K`.
LayerPattern parse_pattern(const std::string& text);

struct BranchSet {
  bool vision = false;
  bool language = false;

  bool contains(Branch b) const { return b == Branch::kVision ? vision : language; }
  bool empty() const { return !vision && !language; }
  bool operator==(const BranchSet&) const = default;
};

/// Parses `dual | vision | language | none`.
BranchSet parse_branches(const std::string& text);
std::string branches_name(const BranchSet& set);

/// Total map from every unit of the model to its optimizer strategy.
/// Units outside the (branch, pattern) selection run first-order.
struct AllocationPolicy {
  BranchSet zo_branches;
  LayerPattern pattern;
  Strategy zo_strategy = Strategy::kFo;
  std::map<UnitId, Strategy> assignment;

  Strategy assigned(const UnitId& id) const;
  std::string to_string() const;  // "dual:hop-odd:zo-conservative"
};

AllocationPolicy make_policy(const ModelConfig& model_config, const BranchSet& branches,
                             const LayerPattern& pattern, Strategy zo_strategy);

}  // namespace mozolab
