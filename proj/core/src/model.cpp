// SPDX-License-Identifier: Apache-2.0
#include "mozolab/model.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "kernels.hpp"
#include "mozolab/rng.hpp"

namespace mozolab {

const char* branch_name(Branch b) {
  return b == Branch::kVision ? "vision" : "language";
}

Branch parse_branch(const std::string& name) {
  if (name == "vision") return Branch::kVision;
  if (name == "language") return Branch::kLanguage;
  throw std::invalid_argument("unknown branch: " + name);
}

const char* adapter_name(AdapterKind k) {
  return k == AdapterKind::kLora ? "lora" : "moe";
}

AdapterKind parse_adapter(const std::string& name) {
  if (name == "lora") return AdapterKind::kLora;
  if (name == "moe") return AdapterKind::kMoe;
  throw std::invalid_argument("unknown adapter kind: " + name);
}

std::string unit_name(const UnitId& id) {
  return std::string(branch_name(id.branch)) + "/" + std::to_string(id.layer);
}

std::size_t ParamUnit::param_floats() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p->size();
  return n;
}

void perturb_unit(ParamUnit& unit, std::span<const std::vector<double>> probe,
                  double epsilon, int sign) {
  if (probe.size() != unit.params.size()) {
    throw std::invalid_argument("perturb_unit: probe count " + std::to_string(probe.size()) +
                                " != param count " + std::to_string(unit.params.size()) +
                                " for unit " + unit_name(unit.id));
  }
  for (std::size_t i = 0; i < probe.size(); ++i) {
    if (probe[i].size() != unit.params[i]->size()) {
      throw std::invalid_argument("perturb_unit: probe shape mismatch on tensor " +
                                  std::to_string(i) + " of unit " + unit_name(unit.id));
    }
  }
  if (sign == 1) {
    std::vector<std::vector<double>> stash(unit.params.size());
    for (std::size_t i = 0; i < unit.params.size(); ++i) stash[i] = unit.params[i]->data;
    unit.pending = std::move(stash);
    for (std::size_t i = 0; i < probe.size(); ++i) {
      auto& d = unit.params[i]->data;
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += epsilon * probe[i][j];
    }
  } else if (sign == -1) {
    if (unit.pending) {
      for (std::size_t i = 0; i < unit.params.size(); ++i) {
        unit.params[i]->data = (*unit.pending)[i];
      }
      unit.pending.reset();
    } else {
      for (std::size_t i = 0; i < probe.size(); ++i) {
        auto& d = unit.params[i]->data;
        for (std::size_t j = 0; j < d.size(); ++j) d[j] -= epsilon * probe[i][j];
      }
    }
  } else {
    throw std::invalid_argument("perturb_unit: sign must be +1 or -1");
  }
}

namespace {

int branch_index(Branch b) { return b == Branch::kVision ? 0 : 1; }

// Gaussian matrix with orthonormalized columns (modified Gram-Schmidt).
// Falls back to scaled Gaussian when rows < cols.
std::vector<double> orthonormal_init(Rng& rng, int rows, int cols) {
  std::vector<double> w(static_cast<std::size_t>(rows) * cols);
  for (auto& x : w) x = rng.gaussian();
  if (rows < cols) {
    const double s = 1.0 / std::sqrt(static_cast<double>(rows));
    for (auto& x : w) x *= s;
    return w;
  }
  for (int j = 0; j < cols; ++j) {
    for (int p = 0; p < j; ++p) {
      double dot = 0.0;
      for (int i = 0; i < rows; ++i) dot += w[i * cols + j] * w[i * cols + p];
      for (int i = 0; i < rows; ++i) w[i * cols + j] -= dot * w[i * cols + p];
    }
    double sq = 0.0;
    for (int i = 0; i < rows; ++i) sq += w[i * cols + j] * w[i * cols + j];
    const double inv = 1.0 / std::sqrt(sq);
    for (int i = 0; i < rows; ++i) w[i * cols + j] *= inv;
  }
  return w;
}

constexpr double kAdapterInitStd = 0.02;

std::vector<double> gaussian_scaled(Rng& rng, std::size_t n, double std_dev) {
  std::vector<double> v(n);
  for (auto& x : v) x = std_dev * rng.gaussian();
  return v;
}

void fnv_bytes(std::uint64_t& h, const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001B3ULL;
  }
}

void fnv_doubles(std::uint64_t& h, const std::vector<double>& v) {
  fnv_bytes(h, v.data(), v.size() * sizeof(double));
}

}  // namespace

Model::Model(ModelConfig cfg, std::vector<double> class_prototypes) : cfg_(cfg) {
  if (cfg_.num_layers < 1 || cfg_.rank < 1 || cfg_.experts < 1) {
    throw std::invalid_argument("model: num_layers, rank and experts must be >= 1");
  }
  if (cfg_.rank >= cfg_.language_width || cfg_.rank >= cfg_.vision_width) {
    throw std::invalid_argument("model: rank must be below both branch widths");
  }
  if (class_prototypes.empty() ||
      class_prototypes.size() % static_cast<std::size_t>(cfg_.language_input) != 0) {
    throw std::invalid_argument("model: prototype matrix must be [C x language_input]");
  }
  num_classes_ = static_cast<int>(class_prototypes.size() / cfg_.language_input);
  prototypes_ = std::move(class_prototypes);

  Rng rng(cfg_.seed);
  // The frozen branches share their semantic subspace: each language layer
  // is the leading diagonal block of the corresponding vision layer, and
  // both projections read the embedding out of that block. Combined with
  // the dataset's shared projection this makes the frozen system
  // cross-modally aligned before any training, which is the desk-scale
  // analogue of starting from a pretrained contrastive encoder pair.
  const int s = cfg_.language_width;
  const bool aligned = cfg_.vision_input == cfg_.vision_width &&
                       cfg_.language_input == cfg_.language_width &&
                       cfg_.vision_width >= s && cfg_.embed_dim <= s;
  if (aligned) {
    const int rest = cfg_.vision_width - s;
    for (int l = 1; l <= cfg_.num_layers; ++l) {
      const std::vector<double> q = orthonormal_init(rng, s, s);
      std::vector<double> q_rest;
      if (rest > 0) q_rest = orthonormal_init(rng, rest, rest);
      std::vector<double> w(static_cast<std::size_t>(cfg_.vision_width) * cfg_.vision_width, 0.0);
      for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
          w[static_cast<std::size_t>(i) * cfg_.vision_width + j] =
              q[static_cast<std::size_t>(i) * s + j];
        }
      }
      for (int i = 0; i < rest; ++i) {
        for (int j = 0; j < rest; ++j) {
          w[static_cast<std::size_t>(s + i) * cfg_.vision_width + (s + j)] =
              q_rest[static_cast<std::size_t>(i) * rest + j];
        }
      }
      backbone_[0].push_back(make_tensor({cfg_.vision_width, cfg_.vision_width}, std::move(w)));
      backbone_[1].push_back(make_tensor({s, s}, q));
    }
    const std::vector<double> e = orthonormal_init(rng, s, cfg_.embed_dim);
    std::vector<double> pv(static_cast<std::size_t>(cfg_.vision_width) * cfg_.embed_dim, 0.0);
    for (int i = 0; i < s; ++i) {
      for (int j = 0; j < cfg_.embed_dim; ++j) {
        pv[static_cast<std::size_t>(i) * cfg_.embed_dim + j] =
            e[static_cast<std::size_t>(i) * cfg_.embed_dim + j];
      }
    }
    projection_[0] = make_tensor({cfg_.vision_width, cfg_.embed_dim}, std::move(pv));
    projection_[1] = make_tensor({s, cfg_.embed_dim}, e);
  } else {
    for (Branch b : kBranches) {
      const int bi = branch_index(b);
      const int width = cfg_.width(b);
      backbone_[bi].reserve(cfg_.num_layers);
      for (int l = 1; l <= cfg_.num_layers; ++l) {
        const int d_in = l == 1 ? cfg_.input_dim(b) : width;
        backbone_[bi].push_back(
            make_tensor({d_in, width}, orthonormal_init(rng, d_in, width)));
      }
      projection_[bi] =
          make_tensor({width, cfg_.embed_dim}, orthonormal_init(rng, width, cfg_.embed_dim));
    }
  }

  for (Branch b : kBranches) {
    const int width = cfg_.width(b);
    for (int l = 1; l <= cfg_.num_layers; ++l) {
      const int d_in = l == 1 ? cfg_.input_dim(b) : width;
      ParamUnit unit;
      unit.id = UnitId{b, l, cfg_.adapter};
      if (cfg_.adapter == AdapterKind::kLora) {
        unit.params.push_back(make_tensor(
            {d_in, cfg_.rank},
            gaussian_scaled(rng, static_cast<std::size_t>(d_in) * cfg_.rank, kAdapterInitStd)));
        unit.params.push_back(zeros({cfg_.rank, width}));
      } else {
        for (int e = 0; e < cfg_.experts; ++e) {
          unit.params.push_back(make_tensor(
              {d_in, cfg_.rank},
              gaussian_scaled(rng, static_cast<std::size_t>(d_in) * cfg_.rank, kAdapterInitStd)));
          unit.params.push_back(zeros({cfg_.rank, width}));
        }
        unit.params.push_back(make_tensor(
            {d_in, cfg_.experts},
            gaussian_scaled(rng, static_cast<std::size_t>(d_in) * cfg_.experts, kAdapterInitStd)));
      }
      units_.push_back(std::move(unit));
    }
  }

  scale_const_ = scalar(cfg_.logit_scale);
  for (Branch b : kBranches) {
    ones_row_[branch_index(b)] = full({1, cfg_.width(b)}, 1.0);
  }
  for (int e = 0; e < cfg_.experts; ++e) {
    auto sel = zeros({cfg_.experts, 1});
    sel->data[e] = 1.0;
    expert_selectors_.push_back(std::move(sel));
  }
}

ParamUnit& Model::unit(Branch b, int layer) {
  if (layer < 1 || layer > cfg_.num_layers) {
    throw std::invalid_argument("model: layer " + std::to_string(layer) + " out of range 1.." +
                                std::to_string(cfg_.num_layers));
  }
  return units_[static_cast<std::size_t>(branch_index(b)) * cfg_.num_layers + (layer - 1)];
}

TensorPtr Model::adapter_forward(const ParamUnit& unit, const TensorPtr& h, Tape* tape) const {
  if (unit.id.kind == AdapterKind::kLora) {
    TensorPtr t = ops::matmul(tape, h, unit.params[0]);
    return ops::matmul(tape, t, unit.params[1]);
  }
  const int bi = branch_index(unit.id.branch);
  const TensorPtr& gate = unit.params.back();
  TensorPtr g = ops::softmax(tape, ops::matmul(tape, h, gate));
  TensorPtr out;
  for (int e = 0; e < cfg_.experts; ++e) {
    TensorPtr t = ops::matmul(tape, h, unit.params[2 * e]);
    TensorPtr ue = ops::matmul(tape, t, unit.params[2 * e + 1]);
    TensorPtr gcol = ops::matmul(tape, g, expert_selectors_[e]);
    TensorPtr spread = ops::matmul(tape, gcol, ones_row_[bi]);
    TensorPtr term = ops::mul(tape, spread, ue);
    out = out ? ops::add(tape, out, term) : term;
  }
  return out;
}

TensorPtr Model::encode(Branch b, const TensorPtr& inputs, Tape* tape) const {
  const int bi = branch_index(b);
  if (inputs->shape.size() != 2 || inputs->shape[1] != cfg_.input_dim(b)) {
    throw std::invalid_argument(std::string("encode: ") + branch_name(b) + " inputs must be [batch x " +
                                std::to_string(cfg_.input_dim(b)) + "], got " +
                                shape_str(inputs->shape));
  }
  TensorPtr h = inputs;
  for (int l = 1; l <= cfg_.num_layers; ++l) {
    TensorPtr z = ops::matmul(tape, h, backbone_[bi][l - 1]);
    TensorPtr a = ops::tanh(tape, z);
    TensorPtr u = adapter_forward(units_[static_cast<std::size_t>(bi) * cfg_.num_layers + (l - 1)],
                                  h, tape);
    h = ops::add(tape, a, u);
  }
  TensorPtr emb = ops::matmul(tape, h, projection_[bi]);
  return ops::l2_normalize(tape, emb);
}

std::vector<int> candidate_positions(std::span<const int> class_ids,
                                     std::span<const int> candidates) {
  std::unordered_map<int, int> pos;
  for (std::size_t i = 0; i < candidates.size(); ++i) pos.emplace(candidates[i], static_cast<int>(i));
  std::vector<int> out(class_ids.size());
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    auto it = pos.find(class_ids[i]);
    if (it == pos.end()) {
      throw std::invalid_argument("loss_batch: class " + std::to_string(class_ids[i]) +
                                  " not in candidate set");
    }
    out[i] = it->second;
  }
  return out;
}

TensorPtr Model::loss_batch(const TensorPtr& vision_batch, std::span<const int> class_ids,
                            std::span<const int> candidates, Tape* tape) const {
  if (candidates.empty()) throw std::invalid_argument("loss_batch: empty candidate set");
  if (vision_batch->shape.size() != 2 ||
      static_cast<std::size_t>(vision_batch->shape[0]) != class_ids.size()) {
    throw std::invalid_argument("loss_batch: batch/labels size mismatch");
  }
  const std::vector<int> targets = candidate_positions(class_ids, candidates);
  const int batch = vision_batch->shape[0];
  const int n_cand = static_cast<int>(candidates.size());

  TensorPtr v = encode(Branch::kVision, vision_batch, tape);
  TensorPtr t = encode(Branch::kLanguage, prototype_batch(candidates), tape);
  TensorPtr logits = ops::mul(tape, ops::matmul_nt(tape, v, t), scale_const_);
  TensorPtr lp = ops::log(tape, ops::softmax(tape, logits));

  auto onehot = zeros({batch, n_cand});
  for (int i = 0; i < batch; ++i) onehot->data[static_cast<std::size_t>(i) * n_cand + targets[i]] = 1.0;
  TensorPtr picked = ops::mul(tape, lp, onehot);
  return ops::mul(tape, ops::sum(tape, picked), scalar(-1.0 / batch));
}

TensorPtr Model::prototype_batch(std::span<const int> class_ids) const {
  const int d = cfg_.language_input;
  std::vector<double> rows(class_ids.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    const int c = class_ids[i];
    if (c < 0 || c >= num_classes_) {
      throw std::invalid_argument("prototype_batch: class " + std::to_string(c) + " out of range");
    }
    const double* src = prototypes_.data() + static_cast<std::size_t>(c) * d;
    std::copy(src, src + d, rows.begin() + i * d);
  }
  return make_tensor({static_cast<int>(class_ids.size()), d}, std::move(rows));
}

UnitSnapshot Model::snapshot_units() const {
  UnitSnapshot snap;
  snap.model_tag = this;
  snap.params.reserve(units_.size());
  for (const auto& u : units_) {
    std::vector<std::vector<double>> copy;
    copy.reserve(u.params.size());
    for (const auto& p : u.params) copy.push_back(p->data);
    snap.params.push_back(std::move(copy));
  }
  return snap;
}

void Model::restore_units(const UnitSnapshot& snap) {
  if (snap.model_tag != this || snap.params.size() != units_.size()) {
    throw std::invalid_argument("restore_units: snapshot does not belong to this model");
  }
  for (std::size_t i = 0; i < units_.size(); ++i) {
    auto& u = units_[i];
    if (snap.params[i].size() != u.params.size()) {
      throw std::invalid_argument("restore_units: snapshot shape mismatch");
    }
    for (std::size_t j = 0; j < u.params.size(); ++j) u.params[j]->data = snap.params[i][j];
    u.pending.reset();
  }
}

std::uint64_t Model::frozen_hash() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (int bi = 0; bi < 2; ++bi) {
    for (const auto& w : backbone_[bi]) fnv_doubles(h, w->data);
    fnv_doubles(h, projection_[bi]->data);
  }
  fnv_doubles(h, prototypes_);
  fnv_doubles(h, scale_const_->data);
  return h;
}

// ------------------------------------------------------------ eval path

void Model::eval_set_inputs(Branch b, std::span<const double> inputs, int batch,
                            BranchActivations& acts) const {
  const int d = cfg_.input_dim(b);
  if (inputs.size() != static_cast<std::size_t>(batch) * d) {
    throw std::invalid_argument("eval_set_inputs: input size mismatch");
  }
  acts.batch = batch;
  acts.h.assign(cfg_.num_layers + 1, {});
  acts.h[0].assign(inputs.begin(), inputs.end());
  acts.embed.clear();
}

void Model::eval_adapter(const ParamUnit& unit, const std::vector<double>& h, int batch,
                         int d_in, int width, std::vector<double>& out) const {
  if (unit.id.kind == AdapterKind::kLora) {
    std::vector<double> t(static_cast<std::size_t>(batch) * cfg_.rank);
    kernels::matmul(t.data(), h.data(), unit.params[0]->data.data(), batch, d_in, cfg_.rank);
    out.resize(static_cast<std::size_t>(batch) * width);
    kernels::matmul(out.data(), t.data(), unit.params[1]->data.data(), batch, cfg_.rank, width);
    return;
  }
  const int bi = branch_index(unit.id.branch);
  const int E = cfg_.experts;
  std::vector<double> glogits(static_cast<std::size_t>(batch) * E);
  kernels::matmul(glogits.data(), h.data(), unit.params.back()->data.data(), batch, d_in, E);
  std::vector<double> g(glogits.size());
  kernels::softmax_rows(g.data(), glogits.data(), batch, E);
  std::vector<double> t(static_cast<std::size_t>(batch) * cfg_.rank);
  std::vector<double> ue(static_cast<std::size_t>(batch) * width);
  std::vector<double> gcol(batch);
  std::vector<double> spread(static_cast<std::size_t>(batch) * width);
  std::vector<double> term(static_cast<std::size_t>(batch) * width);
  out.assign(static_cast<std::size_t>(batch) * width, 0.0);
  for (int e = 0; e < E; ++e) {
    kernels::matmul(t.data(), h.data(), unit.params[2 * e]->data.data(), batch, d_in, cfg_.rank);
    kernels::matmul(ue.data(), t.data(), unit.params[2 * e + 1]->data.data(), batch, cfg_.rank, width);
    kernels::matmul(gcol.data(), g.data(), expert_selectors_[e]->data.data(), batch, E, 1);
    kernels::matmul(spread.data(), gcol.data(), ones_row_[bi]->data.data(), batch, 1, width);
    kernels::mul(term.data(), spread.data(), ue.data(), term.size());
    if (e == 0) {
      out = term;
    } else {
      kernels::add(out.data(), out.data(), term.data(), out.size());
    }
  }
}

void Model::eval_encode(Branch b, const BranchActivations& base, BranchActivations& out,
                        int from_layer) const {
  const int bi = branch_index(b);
  const int L = cfg_.num_layers;
  const int width = cfg_.width(b);
  const int batch = base.batch;
  if (&out != &base) {
    out.batch = batch;
    out.h.resize(L + 1);
  }
  std::vector<double> z(static_cast<std::size_t>(batch) * width);
  std::vector<double> a(z.size());
  std::vector<double> u;
  for (int l = std::max(1, from_layer); l <= L; ++l) {
    const std::vector<double>& hin = (l - 1 < from_layer) ? base.h[l - 1] : out.h[l - 1];
    const int d_in = l == 1 ? cfg_.input_dim(b) : width;
    kernels::matmul(z.data(), hin.data(), backbone_[bi][l - 1]->data.data(), batch, d_in, width);
    kernels::tanh_vec(a.data(), z.data(), z.size());
    eval_adapter(units_[static_cast<std::size_t>(bi) * L + (l - 1)], hin, batch, d_in, width, u);
    out.h[l].resize(z.size());
    kernels::add(out.h[l].data(), a.data(), u.data(), z.size());
  }
  std::vector<double> emb(static_cast<std::size_t>(batch) * cfg_.embed_dim);
  kernels::matmul(emb.data(), ((L < from_layer) ? base.h[L] : out.h[L]).data(),
                  projection_[bi]->data.data(), batch, width, cfg_.embed_dim);
  out.embed.resize(emb.size());
  std::vector<double> norms(batch);
  kernels::l2_normalize_rows(out.embed.data(), norms.data(), emb.data(), batch, cfg_.embed_dim);
}

double Model::eval_loss_head(const std::vector<double>& v_embed, int batch,
                             const std::vector<double>& t_embed, int n_candidates,
                             std::span<const int> targets) const {
  std::vector<double> logits(static_cast<std::size_t>(batch) * n_candidates);
  kernels::matmul_nt(logits.data(), v_embed.data(), t_embed.data(), batch, cfg_.embed_dim,
                     n_candidates);
  const double scale = scale_const_->data[0];
  for (auto& x : logits) x = x * scale;
  std::vector<double> probs(logits.size());
  kernels::softmax_rows(probs.data(), logits.data(), batch, n_candidates);
  double acc = 0.0;
  for (int i = 0; i < batch; ++i) {
    acc += std::log(probs[static_cast<std::size_t>(i) * n_candidates + targets[i]]);
  }
  return acc * (-1.0 / batch);
}

}  // namespace mozolab
