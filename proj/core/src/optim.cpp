// SPDX-License-Identifier: Apache-2.0
#include "mozolab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mozolab {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kFo: return "fo";
    case Strategy::kZoNaive: return "zo-naive";
    case Strategy::kZoConservative: return "zo-conservative";
    case Strategy::kZoSign: return "zo-sign";
    case Strategy::kMozo: return "mozo";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "fo") return Strategy::kFo;
  if (name == "zo-naive") return Strategy::kZoNaive;
  if (name == "zo-conservative") return Strategy::kZoConservative;
  if (name == "zo-sign") return Strategy::kZoSign;
  if (name == "mozo") return Strategy::kMozo;
  throw std::invalid_argument("unknown strategy: " + name);
}

bool is_zo(Strategy s) { return s != Strategy::kFo; }

void ZoConfig::validate() const {
  if (epsilon <= 0.0 || epsilon_vision <= 0.0 || epsilon_language <= 0.0) {
    throw std::invalid_argument("zo config: perturbation scales must be positive");
  }
  if (candidates < 1) throw std::invalid_argument("zo config: candidates must be >= 1");
  if (lambda < 0.0) throw std::invalid_argument("zo config: lambda must be non-negative");
}

Probe draw_probe(Rng& rng, const ParamUnit& unit, ProbeKind kind) {
  Probe p;
  p.values.reserve(unit.params.size());
  for (const auto& t : unit.params) {
    std::vector<double> v(t->size());
    if (kind == ProbeKind::kGaussian) {
      for (auto& x : v) x = rng.gaussian();
    } else {
      for (auto& x : v) x = rng.rademacher();
    }
    p.values.push_back(std::move(v));
  }
  return p;
}

void fo_step(std::span<ParamUnit* const> units, double learning_rate) {
  for (ParamUnit* u : units) {
    for (const auto& p : u->params) {
      if (!p->grad) {
        throw std::runtime_error("fo_step: missing gradient for unit " + unit_name(u->id));
      }
    }
  }
  for (ParamUnit* u : units) {
    for (const auto& p : u->params) {
      auto& d = p->data;
      const auto& g = *p->grad;
      for (std::size_t j = 0; j < d.size(); ++j) d[j] -= learning_rate * g[j];
      p->clear_grad();
    }
  }
}

namespace {

GradEstimate estimate_from(const ParamUnit& unit, const Probe& probe, double coefficient,
                           const char* tag) {
  GradEstimate e;
  e.unit = unit.id;
  e.probe_id = probe.id;
  e.coefficient = coefficient;
  e.strategy = tag;
  e.values.reserve(probe.values.size());
  for (const auto& pv : probe.values) {
    std::vector<double> v(pv.size());
    for (std::size_t j = 0; j < pv.size(); ++j) v[j] = coefficient * pv[j];
    e.values.push_back(std::move(v));
  }
  return e;
}

void check_finite(double v) {
  if (!std::isfinite(v)) throw std::runtime_error("zo_estimate: divergent loss");
}

std::vector<std::vector<double>> copy_params(const ParamUnit& unit) {
  std::vector<std::vector<double>> out;
  out.reserve(unit.params.size());
  for (const auto& p : unit.params) out.push_back(p->data);
  return out;
}

void assign_params(ParamUnit& unit, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < unit.params.size(); ++i) unit.params[i]->data = values[i];
}

void apply_plain(ParamUnit& unit, const Probe& probe, double epsilon, int sign) {
  for (std::size_t i = 0; i < probe.values.size(); ++i) {
    auto& d = unit.params[i]->data;
    const auto& pv = probe.values[i];
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += sign * epsilon * pv[j];
  }
}

void apply_update(ParamUnit& unit, const GradEstimate& est, double scale) {
  for (std::size_t i = 0; i < est.values.size(); ++i) {
    auto& d = unit.params[i]->data;
    const auto& ev = est.values[i];
    for (std::size_t j = 0; j < d.size(); ++j) d[j] -= scale * ev[j];
  }
}

double eps_for(const ZoConfig& cfg, Branch b, bool branch_eps) {
  if (!branch_eps) return cfg.epsilon;
  return b == Branch::kVision ? cfg.epsilon_vision : cfg.epsilon_language;
}

void notify(const StepHooks* hooks, const UnitId& id, double eps, int sign) {
  if (hooks && hooks->on_perturb) hooks->on_perturb(id, eps, sign);
}

// Directional estimate at the committed parameters. `base_loss` is the loss
// at those parameters (ignored in central mode). Restores bit-exactly.
GradEstimate directional_estimate(ParamUnit& unit, StepLoss& loss, const Probe& probe,
                                  double epsilon, bool central, double base_loss,
                                  const char* tag, const StepHooks* hooks) {
  if (epsilon <= 0.0) throw std::invalid_argument("zo_estimate: epsilon must be positive");
  double coeff;
  if (central) {
    const auto saved = copy_params(unit);
    apply_plain(unit, probe, epsilon, 1);
    notify(hooks, unit.id, epsilon, 1);
    const double l_plus = loss.probe(unit.id);
    assign_params(unit, saved);
    apply_plain(unit, probe, epsilon, -1);
    notify(hooks, unit.id, epsilon, -1);
    const double l_minus = loss.probe(unit.id);
    assign_params(unit, saved);
    check_finite(l_plus);
    check_finite(l_minus);
    coeff = (l_plus - l_minus) / (2.0 * epsilon);
  } else {
    check_finite(base_loss);
    perturb_unit(unit, probe.values, epsilon, 1);
    notify(hooks, unit.id, epsilon, 1);
    const double l_plus = loss.probe(unit.id);
    perturb_unit(unit, probe.values, epsilon, -1);
    notify(hooks, unit.id, epsilon, -1);
    check_finite(l_plus);
    coeff = (l_plus - base_loss) / epsilon;
  }
  return estimate_from(unit, probe, coeff, tag);
}

StepReport run_naive(std::span<ParamUnit* const> units, StepLoss& loss, const ZoConfig& cfg,
                     Rng& rng, double learning_rate, const StepHooks* hooks, bool signed_mode,
                     bool branch_eps, const char* tag) {
  cfg.validate();
  const double scale = cfg.lambda * learning_rate;
  StepReport r;
  r.strategy = tag;
  r.base_loss = loss.base();
  if (hooks && hooks->capture) {
    r.capture = std::make_unique<StepCapture>();
    for (const ParamUnit* u : units) r.capture->pre_params.push_back(copy_params(*u));
    r.capture->probes.resize(1);
  }
  double current_base = r.base_loss;
  for (std::size_t ui = 0; ui < units.size(); ++ui) {
    ParamUnit& u = *units[ui];
    Probe probe = draw_probe(rng, u, cfg.probe);
    probe.id = ui;
    const double eps = eps_for(cfg, u.id.branch, branch_eps);
    GradEstimate est = directional_estimate(u, loss, probe, eps, cfg.central_difference,
                                            current_base, tag, hooks);
    if (signed_mode) est = sign_transform(std::move(est));
    apply_update(u, est, scale);
    loss.commit(u.id);
    r.epsilons.emplace_back(u.id, eps);
    if (r.capture) r.capture->probes[0].push_back(probe);
    r.estimates.push_back(std::move(est));
    if (!cfg.central_difference && ui + 1 < units.size()) current_base = loss.base();
  }
  return r;
}

StepReport run_conservative(std::span<ParamUnit* const> units, StepLoss& loss,
                            const ZoConfig& cfg, Rng& rng, double learning_rate,
                            const StepHooks* hooks, bool signed_mode, bool branch_eps,
                            const char* tag) {
  cfg.validate();
  const double scale = cfg.lambda * learning_rate;
  const int K = cfg.candidates;
  StepReport r;
  r.strategy = tag;
  r.base_loss = loss.base();
  const std::size_t n_units = units.size();

  std::vector<std::vector<std::vector<double>>> pre;
  pre.reserve(n_units);
  for (const ParamUnit* u : units) pre.push_back(copy_params(*u));

  if (hooks && hooks->capture) {
    r.capture = std::make_unique<StepCapture>();
    r.capture->pre_params = pre;
    r.capture->probes.resize(K);
  }

  std::vector<std::vector<GradEstimate>> per_candidate(K);
  r.candidate_losses.resize(K);
  for (int k = 0; k < K; ++k) {
    auto& ests = per_candidate[k];
    ests.reserve(n_units);
    for (std::size_t ui = 0; ui < n_units; ++ui) {
      ParamUnit& u = *units[ui];
      Probe probe = draw_probe(rng, u, cfg.probe);
      probe.id = (static_cast<std::uint64_t>(k) << 32) | ui;
      const double eps = eps_for(cfg, u.id.branch, branch_eps);
      GradEstimate est = directional_estimate(u, loss, probe, eps, cfg.central_difference,
                                              r.base_loss, tag, hooks);
      if (signed_mode) est = sign_transform(std::move(est));
      if (r.capture) r.capture->probes[k].push_back(probe);
      ests.push_back(std::move(est));
    }
    for (std::size_t ui = 0; ui < n_units; ++ui) apply_update(*units[ui], ests[ui], scale);
    r.candidate_losses[k] = loss.probe_all();
    for (std::size_t ui = 0; ui < n_units; ++ui) assign_params(*units[ui], pre[ui]);
  }

  int best = -1;
  for (int k = 0; k < K; ++k) {
    if (!std::isfinite(r.candidate_losses[k])) continue;
    if (best < 0 || r.candidate_losses[k] < r.candidate_losses[best]) best = k;
  }
  if (best < 0) throw std::runtime_error("zo_step: all candidate losses are non-finite");

  for (std::size_t ui = 0; ui < n_units; ++ui) apply_update(*units[ui], per_candidate[best][ui], scale);
  loss.commit_all();
  r.committed = best;
  r.estimates = std::move(per_candidate[best]);
  for (std::size_t ui = 0; ui < n_units; ++ui) {
    r.epsilons.emplace_back(units[ui]->id, eps_for(cfg, units[ui]->id.branch, branch_eps));
  }
  return r;
}

}  // namespace

GradEstimate zo_estimate(ParamUnit& unit, const std::function<double()>& loss_fn,
                         const Probe& probe, double epsilon, bool central) {
  LambdaStepLoss loss(loss_fn);
  if (central) {
    return directional_estimate(unit, loss, probe, epsilon, true, 0.0, "zo-estimate", nullptr);
  }
  const double base = loss_fn();
  return directional_estimate(unit, loss, probe, epsilon, false, base, "zo-estimate", nullptr);
}

GradEstimate sign_transform(GradEstimate estimate) {
  for (auto& tensor_values : estimate.values) {
    for (auto& x : tensor_values) {
      x = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    }
  }
  return estimate;
}

StepReport zo_step_naive(std::span<ParamUnit* const> units, StepLoss& loss, const ZoConfig& cfg,
                         Rng& rng, double learning_rate, const StepHooks* hooks) {
  const char* tag = cfg.sign_normalize ? "zo-sign" : "zo-naive";
  return run_naive(units, loss, cfg, rng, learning_rate, hooks, cfg.sign_normalize, false, tag);
}

StepReport zo_step_conservative(std::span<ParamUnit* const> units, StepLoss& loss,
                                const ZoConfig& cfg, Rng& rng, double learning_rate,
                                const StepHooks* hooks) {
  return run_conservative(units, loss, cfg, rng, learning_rate, hooks, cfg.sign_normalize, false,
                          "zo-conservative");
}

StepReport mozo_step(std::span<ParamUnit* const> units, StepLoss& loss, const ZoConfig& cfg,
                     Rng& rng, double learning_rate, const StepHooks* hooks) {
  if (!(cfg.epsilon_vision < cfg.epsilon_language)) {
    throw std::invalid_argument(
        "mozo_step: epsilon_vision must be below epsilon_language");
  }
  if (cfg.mozo_naive) {
    return run_naive(units, loss, cfg, rng, learning_rate, hooks, true, true, "mozo");
  }
  return run_conservative(units, loss, cfg, rng, learning_rate, hooks, true, true, "mozo");
}

StepReport zo_step(Strategy strategy, std::span<ParamUnit* const> units, StepLoss& loss,
                   const ZoConfig& cfg, Rng& rng, double learning_rate, const StepHooks* hooks) {
  switch (strategy) {
    case Strategy::kZoNaive:
      return zo_step_naive(units, loss, cfg, rng, learning_rate, hooks);
    case Strategy::kZoSign: {
      ZoConfig signed_cfg = cfg;
      signed_cfg.sign_normalize = true;
      return zo_step_naive(units, loss, signed_cfg, rng, learning_rate, hooks);
    }
    case Strategy::kZoConservative:
      return zo_step_conservative(units, loss, cfg, rng, learning_rate, hooks);
    case Strategy::kMozo:
      return mozo_step(units, loss, cfg, rng, learning_rate, hooks);
    case Strategy::kFo:
      break;
  }
  throw std::invalid_argument("zo_step: not a zeroth-order strategy");
}

}  // namespace mozolab
