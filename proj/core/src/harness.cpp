// SPDX-License-Identifier: Apache-2.0
#include "mozolab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "kernels.hpp"

namespace mozolab {

namespace {

constexpr std::uint64_t kDatasetTag = 0xD4'7A;
constexpr std::uint64_t kModelTag = 0x30'DE'1;
constexpr std::uint64_t kShuffleTag = 0x5C'0F'F1;
constexpr std::uint64_t kProbeTag = 0x9B'0B'E5;

std::uint64_t fnv64(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t RunConfig::resolved_dataset_seed() const {
  return dataset_seed ? *dataset_seed : mix_seed(run_seed, kDatasetTag);
}

std::uint64_t RunConfig::resolved_model_seed() const {
  return model_seed ? *model_seed : mix_seed(run_seed, kModelTag);
}

std::uint64_t RunConfig::resolved_optimizer_seed() const {
  return optimizer_seed ? *optimizer_seed : run_seed;
}

double sample_variance(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return sq / static_cast<double>(n - 1);
}

double l2_norm(std::span<const double> values) {
  double sq = 0.0;
  for (double v : values) sq += v * v;
  return std::sqrt(sq);
}

namespace {

std::vector<double> flatten(const std::vector<std::vector<double>>& parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  std::vector<double> out;
  out.reserve(n);
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

double grad_variance(const GradEstimate& estimate) {
  return sample_variance(flatten(estimate.values));
}

// -------------------------------------------------------- CachedStepLoss

CachedStepLoss::CachedStepLoss(Model& model, const Batch& batch,
                               std::span<const int> candidates)
    : model_(model),
      targets_(candidate_positions(batch.class_ids, candidates)),
      batch_size_(batch.vision->shape[0]),
      n_candidates_(static_cast<int>(candidates.size())) {
  model_.eval_set_inputs(Branch::kVision, batch.vision->data, batch_size_,
                         base_[0]);
  TensorPtr protos = model_.prototype_batch(candidates);
  model_.eval_set_inputs(Branch::kLanguage, protos->data, n_candidates_, base_[1]);
}

void CachedStepLoss::ensure_clean(Branch b) {
  const int bi = b == Branch::kVision ? 0 : 1;
  if (dirty_from_[bi] != 0) {
    model_.eval_encode(b, base_[bi], base_[bi], dirty_from_[bi]);
    dirty_from_[bi] = 0;
  }
}

double CachedStepLoss::base() {
  ensure_clean(Branch::kVision);
  ensure_clean(Branch::kLanguage);
  if (!base_loss_) {
    base_loss_ = model_.eval_loss_head(base_[0].embed, batch_size_, base_[1].embed,
                                       n_candidates_, targets_);
  }
  return *base_loss_;
}

double CachedStepLoss::probe(const UnitId& changed) {
  ensure_clean(Branch::kVision);
  ensure_clean(Branch::kLanguage);
  const int bi = changed.branch == Branch::kVision ? 0 : 1;
  model_.eval_encode(changed.branch, base_[bi], scratch_[bi], changed.layer);
  const auto& v = bi == 0 ? scratch_[0].embed : base_[0].embed;
  const auto& t = bi == 1 ? scratch_[1].embed : base_[1].embed;
  return model_.eval_loss_head(v, batch_size_, t, n_candidates_, targets_);
}

double CachedStepLoss::probe_all() {
  model_.eval_encode(Branch::kVision, base_[0], scratch_[0], 1);
  model_.eval_encode(Branch::kLanguage, base_[1], scratch_[1], 1);
  return model_.eval_loss_head(scratch_[0].embed, batch_size_, scratch_[1].embed,
                               n_candidates_, targets_);
}

void CachedStepLoss::commit(const UnitId& changed) {
  const int bi = changed.branch == Branch::kVision ? 0 : 1;
  dirty_from_[bi] = dirty_from_[bi] == 0 ? changed.layer
                                         : std::min(dirty_from_[bi], changed.layer);
  base_loss_.reset();
}

void CachedStepLoss::commit_all() {
  dirty_from_[0] = 1;
  dirty_from_[1] = 1;
  base_loss_.reset();
}

// ------------------------------------------------------------ train loop

void train_task(Model& model, const SynthDataset& data, const Task& task, int task_index,
                const AllocationPolicy& policy, const RunConfig& cfg, Rng& shuffle_rng,
                Rng& probe_rng, RunMetrics& metrics, const RunHooks* hooks) {
  std::vector<ParamUnit*> fo_units;
  std::vector<ParamUnit*> zo_units;
  Strategy zo_strategy = Strategy::kFo;
  for (ParamUnit& u : model.units()) {
    const Strategy s = policy.assigned(u.id);
    if (s == Strategy::kFo) {
      fo_units.push_back(&u);
    } else {
      zo_units.push_back(&u);
      zo_strategy = s;
    }
  }
  const bool need_record = !fo_units.empty();

  StepHooks step_hooks;
  const StepHooks* step_hooks_ptr = nullptr;
  if (hooks && (hooks->on_perturb || hooks->capture_probes)) {
    step_hooks.on_perturb = hooks->on_perturb;
    step_hooks.capture = hooks->capture_probes;
    step_hooks_ptr = &step_hooks;
  }

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = epoch_batches(data, task, cfg.batch_size, shuffle_rng,
                                 hooks ? hooks->tap : SampleTap{});
    for (const Batch& batch : batches) {
      double batch_loss = 0.0;
      if (need_record) {
        Tape tape;
        TensorPtr loss = model.loss_batch(batch.vision, batch.class_ids, task.classes, &tape);
        batch_loss = loss->data[0];
        if (!std::isfinite(batch_loss)) {
          throw TrainAbort(task_index, step, "divergent loss in recorded forward");
        }
        metrics.observed_tape_peak = std::max(metrics.observed_tape_peak, tape.float_count());
        tape.backward(loss);
        ++metrics.backward_calls;
        for (ParamUnit* u : fo_units) {
          std::vector<double> flat;
          for (const auto& p : u->params) {
            flat.insert(flat.end(), p->grad->begin(), p->grad->end());
          }
          metrics.grad_vars.push_back({task_index, step, u->id.branch, u->id.layer,
                                       sample_variance(flat), l2_norm(flat)});
        }
        fo_step(fo_units, cfg.learning_rate);
      }
      if (!zo_units.empty()) {
        CachedStepLoss step_loss(model, batch, task.classes);
        StepReport report;
        try {
          report = zo_step(zo_strategy, zo_units, step_loss, cfg.zo, probe_rng,
                           cfg.learning_rate, step_hooks_ptr);
        } catch (const std::runtime_error& e) {
          throw TrainAbort(task_index, step, e.what());
        }
        if (!need_record) batch_loss = report.base_loss;
        for (const GradEstimate& est : report.estimates) {
          metrics.grad_vars.push_back({task_index, step, est.unit.branch, est.unit.layer,
                                       grad_variance(est), l2_norm(flatten(est.values))});
        }
        if (hooks && hooks->on_zo_step) {
          hooks->on_zo_step(StepObservation{&report, &model, &step_loss, zo_units, task_index,
                                            step});
        }
      }
      metrics.losses.push_back({task_index, epoch, step, batch_loss});
      ++step;
    }
  }
}

double evaluate_seen(const Model& model, const SynthDataset& data, const TaskStream& stream,
                     int through_task, const SampleTap& tap) {
  const std::vector<int> seen = stream.seen_classes(through_task);
  TensorPtr protos = model.prototype_batch(seen);
  Model::BranchActivations lang;
  model.eval_set_inputs(Branch::kLanguage, protos->data, static_cast<int>(seen.size()), lang);
  model.eval_encode(Branch::kLanguage, lang, lang, 1);
  const int embed = model.config().embed_dim;
  const int n_seen = static_cast<int>(seen.size());

  std::size_t correct = 0;
  std::size_t total = 0;
  constexpr int kChunk = 64;
  for (int t = 0; t <= through_task && t < static_cast<int>(stream.tasks().size()); ++t) {
    const Task& task = stream.tasks()[t];
    for (std::size_t pos = 0; pos < task.test.size(); pos += kChunk) {
      const std::size_t n = std::min<std::size_t>(kChunk, task.test.size() - pos);
      TensorPtr rows = gather_samples(data, {task.test.data() + pos, n}, false, tap);
      Model::BranchActivations vis;
      model.eval_set_inputs(Branch::kVision, rows->data, static_cast<int>(n), vis);
      model.eval_encode(Branch::kVision, vis, vis, 1);
      std::vector<double> logits(n * static_cast<std::size_t>(n_seen));
      kernels::matmul_nt(logits.data(), vis.embed.data(), lang.embed.data(),
                         n, embed, n_seen);
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * n_seen;
        int best = 0;
        for (int j = 1; j < n_seen; ++j) {
          if (row[j] > row[best]) best = j;
        }
        if (seen[best] == task.test[pos + i].class_id) ++correct;
        ++total;
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

MemoryReport memory_footprint(const ModelConfig& model_config, const AllocationPolicy& policy,
                              int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("memory_footprint: batch_size must be >= 1");
  MemoryReport report;

  // Probe model with placeholder prototypes; counts depend only on shapes.
  std::vector<double> protos(static_cast<std::size_t>(model_config.language_input), 0.0);
  Model probe(model_config, std::move(protos));
  for (ParamUnit& u : probe.units()) {
    const bool fo = policy.assigned(u.id) == Strategy::kFo;
    for (auto& p : u.params) p->requires_grad = fo;
    if (fo) {
      report.grad_floats += u.param_floats();
    } else {
      report.perturb_floats += u.param_floats();
    }
  }

  Tape tape;
  for (Branch b : kBranches) {
    const int d = probe.config().input_dim(b);
    TensorPtr x = full({batch_size, d}, 1.0);
    probe.encode(b, x, &tape);
  }
  report.tape_floats = tape.float_count();
  return report;
}

namespace {

std::string config_fingerprint(const RunConfig& cfg) {
  std::ostringstream os;
  const ModelConfig& m = cfg.model;
  const DataConfig& d = cfg.data;
  const ZoConfig& z = cfg.zo;
  os << "model:" << m.num_layers << ',' << m.vision_width << ',' << m.language_width << ','
     << m.vision_input << ',' << m.language_input << ',' << m.embed_dim << ','
     << adapter_name(m.adapter) << ',' << m.rank << ',' << m.experts << ',' << m.logit_scale
     << ";data:" << d.classes << ',' << d.latent_dim << ',' << d.vision_dim << ','
     << d.language_dim << ',' << d.train_per_class << ',' << d.test_per_class << ',' << d.sigma
     << ";zo:" << z.epsilon << ',' << z.epsilon_vision << ',' << z.epsilon_language << ','
     << z.candidates << ',' << z.sign_normalize << ',' << z.lambda << ','
     << (z.probe == ProbeKind::kGaussian ? "gaussian" : "rademacher") << ','
     << z.central_difference << ',' << z.mozo_naive << ";policy:" << branches_name(cfg.branches)
     << ',' << cfg.pattern.to_string() << ',' << strategy_name(cfg.strategy)
     << ";run:" << cfg.inc_size << ',' << cfg.epochs << ',' << cfg.batch_size << ','
     << cfg.learning_rate << ',' << (cfg.stream_shuffle_seed ? 1 : 0);
  return os.str();
}

}  // namespace

std::uint64_t config_digest(const RunConfig& cfg) { return fnv64(config_fingerprint(cfg)); }

RunMetrics run_stream(const RunConfig& cfg, const RunHooks* hooks) {
  if (cfg.epochs < 1 || cfg.batch_size < 1) {
    throw std::invalid_argument("run: epochs and batch_size must be >= 1");
  }
  cfg.zo.validate();

  DataConfig data_cfg = cfg.data;
  data_cfg.seed = cfg.resolved_dataset_seed();
  const SynthDataset dataset = SynthDataset::generate(data_cfg);
  const TaskStream stream = build_task_stream(dataset, cfg.inc_size, cfg.stream_shuffle_seed);

  ModelConfig model_cfg = cfg.model;
  model_cfg.seed = cfg.resolved_model_seed();
  if (model_cfg.language_input != data_cfg.language_dim ||
      model_cfg.vision_input != data_cfg.vision_dim) {
    throw std::invalid_argument("run: model input dims must match dataset dims");
  }
  Model model(model_cfg, dataset.prototype_matrix());

  const AllocationPolicy policy =
      make_policy(model_cfg, cfg.branches, cfg.pattern, cfg.strategy);
  for (ParamUnit& u : model.units()) {
    const bool fo = policy.assigned(u.id) == Strategy::kFo;
    for (auto& p : u.params) p->requires_grad = fo;
  }

  RunMetrics metrics;
  metrics.policy_string = policy.to_string();
  metrics.seed = cfg.run_seed;
  metrics.config_digest = config_digest(cfg);
  metrics.memory = memory_footprint(model_cfg, policy, cfg.batch_size);

  const std::uint64_t opt_seed = cfg.resolved_optimizer_seed();
  Rng shuffle_rng(mix_seed(opt_seed, kShuffleTag));
  Rng probe_rng(mix_seed(opt_seed, kProbeTag));

  for (int t = 0; t < static_cast<int>(stream.tasks().size()); ++t) {
    try {
      train_task(model, dataset, stream.tasks()[t], t, policy, cfg, shuffle_rng, probe_rng,
                 metrics, hooks);
    } catch (const TrainAbort& abort) {
      metrics.partial = true;
      metrics.abort_reason = abort.what();
      metrics.abort_task = abort.task;
      metrics.abort_step = abort.step;
      break;
    }
    metrics.per_task_accuracy.push_back(
        evaluate_seen(model, dataset, stream, t, hooks ? hooks->tap : SampleTap{}));
  }

  if (!metrics.per_task_accuracy.empty()) {
    metrics.last_acc = metrics.per_task_accuracy.back();
    double sum = 0.0;
    for (double a : metrics.per_task_accuracy) sum += a;
    metrics.avg_acc = sum / static_cast<double>(metrics.per_task_accuracy.size());
  }
  return metrics;
}

namespace {

SeedStat stat_over(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  SeedStat s;
  s.min = values.front();
  s.max = values.back();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std_dev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  return s;
}

}  // namespace

SeedAggregate aggregate_seeds(std::span<const RunMetrics> runs) {
  if (runs.size() < 2) {
    throw std::invalid_argument("aggregate_seeds: need at least 2 runs");
  }
  for (const RunMetrics& r : runs) {
    if (r.config_digest != runs.front().config_digest ||
        r.policy_string != runs.front().policy_string) {
      throw std::invalid_argument("aggregate_seeds: mixed configurations");
    }
  }
  SeedAggregate agg;
  agg.runs = static_cast<int>(runs.size());
  std::vector<double> last, avg;
  for (const RunMetrics& r : runs) {
    last.push_back(r.last_acc);
    avg.push_back(r.avg_acc);
  }
  agg.last_acc = stat_over(std::move(last));
  agg.avg_acc = stat_over(std::move(avg));
  return agg;
}

}  // namespace mozolab
