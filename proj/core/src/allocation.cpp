// SPDX-License-Identifier: Apache-2.0
#include "mozolab/allocation.hpp"

#include <stdexcept>

namespace mozolab {

bool LayerPattern::selects(int layer, int num_layers) const {
  switch (kind) {
    case PatternKind::kAll: return true;
    case PatternKind::kHopOdd: return layer % 2 == 1;
    case PatternKind::kHopEven: return layer % 2 == 0;
    case PatternKind::kPrefix: return layer <= k;
    case PatternKind::kSuffix: return layer > num_layers - k;
  }
  return false;
}

void LayerPattern::validate(int num_layers) const {
  if (kind == PatternKind::kPrefix || kind == PatternKind::kSuffix) {
    if (k < 1 || k > num_layers) {
      throw std::invalid_argument("pattern " + to_string() + ": k must be in 1.." +
                                  std::to_string(num_layers));
    }
  }
}

std::string LayerPattern::to_string() const {
  switch (kind) {
    case PatternKind::kAll: return "all";
    case PatternKind::kHopOdd: return "hop-odd";
    case PatternKind::kHopEven: return "hop-even";
    case PatternKind::kPrefix: return "prefix:" + std::to_string(k);
    case PatternKind::kSuffix: return "suffix:" + std::to_string(k);
  }
  return "?";
}

LayerPattern parse_pattern(const std::string& text) {
  if (text == "all") return {PatternKind::kAll, 0};
  if (text == "hop-odd") return {PatternKind::kHopOdd, 0};
  if (text == "hop-even") return {PatternKind::kHopEven, 0};
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string head = text.substr(0, colon);
    const std::string tail = text.substr(colon + 1);
    int k;
    try {
      std::size_t used = 0;
      k = std::stoi(tail, &used);
      if (used != tail.size()) throw std::invalid_argument(tail);
    } catch (const std::exception&) {
      throw std::invalid_argument("pattern '" + text + "': expected an integer after ':'");
    }
    if (head == "prefix") return {PatternKind::kPrefix, k};
    if (head == "suffix") return {PatternKind::kSuffix, k};
  }
  throw std::invalid_argument("unknown pattern '" + text +
                              "' (expected all|hop-odd|hop-even|prefix:K|suffix:K)");
}

BranchSet parse_branches(const std::string& text) {
  if (text == "dual") return {true, true};
  if (text == "vision") return {true, false};
  if (text == "language") return {false, true};
  if (text == "none") return {false, false};
  throw std::invalid_argument("unknown branch set '" + text +
                              "' (expected dual|vision|language|none)");
}

std::string branches_name(const BranchSet& set) {
  if (set.vision && set.language) return "dual";
  if (set.vision) return "vision";
  if (set.language) return "language";
  return "none";
}

Strategy AllocationPolicy::assigned(const UnitId& id) const {
  auto it = assignment.find(id);
  if (it == assignment.end()) {
    throw std::invalid_argument("policy: unknown unit " + unit_name(id));
  }
  return it->second;
}

std::string AllocationPolicy::to_string() const {
  return branches_name(zo_branches) + ":" + pattern.to_string() + ":" +
         strategy_name(zo_strategy);
}

AllocationPolicy make_policy(const ModelConfig& model_config, const BranchSet& branches,
                             const LayerPattern& pattern, Strategy zo_strategy) {
  pattern.validate(model_config.num_layers);
  if (branches.empty() && pattern.kind != PatternKind::kAll) {
    throw std::invalid_argument("allocation: empty branch set requires pattern 'all'");
  }
  AllocationPolicy policy;
  policy.zo_branches = branches;
  policy.pattern = pattern;
  policy.zo_strategy = zo_strategy;
  for (Branch b : kBranches) {
    for (int layer = 1; layer <= model_config.num_layers; ++layer) {
      const UnitId id{b, layer, model_config.adapter};
      const bool zo = branches.contains(b) && pattern.selects(layer, model_config.num_layers);
      policy.assignment.emplace(id, zo ? zo_strategy : Strategy::kFo);
    }
  }
  return policy;
}

}  // namespace mozolab
