// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mozolab/model.hpp"
#include "mozolab/rng.hpp"

namespace mozolab {

enum class Strategy { kFo, kZoNaive, kZoConservative, kZoSign, kMozo };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);
bool is_zo(Strategy s);

enum class ProbeKind { kGaussian, kRademacher };

struct ZoConfig {
  double epsilon = 0.001;
  double epsilon_vision = 0.0005;
  double epsilon_language = 0.001;
  int candidates = 4;  // K for the conservative strategies
  bool sign_normalize = false;
  double lambda = 1.0;  // ZO learning rate = lambda * FO learning rate
  ProbeKind probe = ProbeKind::kGaussian;
  bool central_difference = false;
  bool mozo_naive = false;  // single-estimate MoZO instead of candidate selection

  void validate() const;
};

/// Perturbation direction for one unit; one buffer per param tensor.
struct Probe {
  std::vector<std::vector<double>> values;
  std::uint64_t id = 0;
};

Probe draw_probe(Rng& rng, const ParamUnit& unit, ProbeKind kind);

/// One unit's gradient estimate. A raw directional estimate is exactly
/// coefficient * probe; sign-transformed estimates hold elements in
/// {-1, 0, +1}.
struct GradEstimate {
  UnitId unit;
  std::vector<std::vector<double>> values;
  std::uint64_t probe_id = 0;
  double coefficient = 0.0;
  std::string strategy;
};

/// Loss oracle for one optimization step on a fixed minibatch. `probe*`
/// evaluations see the current (possibly perturbed) parameters but must not
/// disturb any caching of the committed state; `commit*` declares that
/// parameters changed for good.
class StepLoss {
 public:
  virtual ~StepLoss() = default;
  virtual double base() = 0;
  virtual double probe(const UnitId& changed) = 0;
  virtual double probe_all() = 0;
  virtual void commit(const UnitId& changed) = 0;
  virtual void commit_all() = 0;
};

/// Adapts a plain callable (full recomputation on every call) to StepLoss.
class LambdaStepLoss : public StepLoss {
 public:
  explicit LambdaStepLoss(std::function<double()> fn) : fn_(std::move(fn)) {}
  double base() override { return fn_(); }
  double probe(const UnitId&) override { return fn_(); }
  double probe_all() override { return fn_(); }
  void commit(const UnitId&) override {}
  void commit_all() override {}

 private:
  std::function<double()> fn_;
};

struct StepHooks {
  std::function<void(const UnitId&, double epsilon, int sign)> on_perturb;
  bool capture = false;  // retain pre-step params and probes in the report
};

struct StepCapture {
  std::vector<std::vector<std::vector<double>>> pre_params;  // per unit, per tensor
  std::vector<std::vector<Probe>> probes;                    // [candidate][unit]
};

struct StepReport {
  std::string strategy;
  double base_loss = 0.0;
  std::vector<double> candidate_losses;  // conservative/mozo only
  int committed = -1;                    // argmin candidate index
  std::vector<GradEstimate> estimates;   // as applied (post-transform if signed)
  std::vector<std::pair<UnitId, double>> epsilons;  // perturbation scale per unit
  std::unique_ptr<StepCapture> capture;
};

/// First-order SGD over the given units: theta <- theta - lr * grad, then
/// clears the grads. Errors if any unit parameter is missing its gradient.
void fo_step(std::span<ParamUnit* const> units, double learning_rate);

/// Forward-difference directional estimate at the current parameters:
/// [(L(theta + eps*probe) - L(theta)) / eps] * probe. Parameters are
/// restored bit-exactly; set `central` for the two-sided variant.
GradEstimate zo_estimate(ParamUnit& unit, const std::function<double()>& loss_fn,
                         const Probe& probe, double epsilon, bool central = false);

/// Element-wise sign of the estimate; keeps only direction information.
GradEstimate sign_transform(GradEstimate estimate);

/// Single estimate per unit, immediately applied (optionally
/// sign-normalized): the aggressive single-shot variant.
StepReport zo_step_naive(std::span<ParamUnit* const> units, StepLoss& loss,
                         const ZoConfig& cfg, Rng& rng, double learning_rate,
                         const StepHooks* hooks = nullptr);

/// Draws K candidate updates (independent probes per unit), evaluates each
/// tentative update on the batch, commits only the lowest-loss candidate
/// and rolls the rest back bit-exactly.
StepReport zo_step_conservative(std::span<ParamUnit* const> units, StepLoss& loss,
                                const ZoConfig& cfg, Rng& rng, double learning_rate,
                                const StepHooks* hooks = nullptr);

/// Modality-aware step: sign-normalized estimates with the vision-branch
/// perturbation scale epsilon_vision and language-branch epsilon_language;
/// candidate selection as in the conservative step unless mozo_naive.
StepReport mozo_step(std::span<ParamUnit* const> units, StepLoss& loss,
                     const ZoConfig& cfg, Rng& rng, double learning_rate,
                     const StepHooks* hooks = nullptr);

/// Dispatch by strategy (kFo is invalid here).
StepReport zo_step(Strategy strategy, std::span<ParamUnit* const> units, StepLoss& loss,
                   const ZoConfig& cfg, Rng& rng, double learning_rate,
                   const StepHooks* hooks = nullptr);

}  // namespace mozolab
