// SPDX-License-Identifier: Apache-2.0
#include "mozolab/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mozolab/data.hpp"
#include "mozolab/rng.hpp"

namespace mozolab {
namespace {

ModelConfig tiny_config(AdapterKind kind = AdapterKind::kLora) {
  ModelConfig cfg;
  cfg.num_layers = 3;
  cfg.vision_width = 12;
  cfg.language_width = 8;
  cfg.vision_input = 12;
  cfg.language_input = 8;
  cfg.embed_dim = 8;
  cfg.adapter = kind;
  cfg.rank = 2;
  cfg.experts = 2;
  cfg.logit_scale = 10.0;
  cfg.seed = 21;
  return cfg;
}

std::vector<double> random_protos(int classes, int dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> p(static_cast<std::size_t>(classes) * dim);
  for (auto& x : p) x = rng.gaussian();
  return p;
}

TensorPtr random_batch(int rows, int dim, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian_probe(rng, {rows, dim});
}

TEST(Model, UnitAddressingIsTotalAndUnique) {
  Model m(tiny_config(), random_protos(4, 8, 1));
  std::set<std::pair<int, int>> ids;
  for (const ParamUnit& u : m.units()) {
    EXPECT_GE(u.id.layer, 1);
    EXPECT_LE(u.id.layer, 3);
    EXPECT_TRUE(ids.insert({u.id.branch == Branch::kVision ? 0 : 1, u.id.layer}).second);
  }
  EXPECT_EQ(ids.size(), 6u);
}

TEST(Model, AdapterZeroIdentity) {
  // With lora B = 0 (the initialization), encode must equal the
  // frozen-backbone-only forward exactly.
  ModelConfig cfg = tiny_config();
  Model m(cfg, random_protos(4, 8, 1));
  TensorPtr x = random_batch(5, cfg.vision_input, 9);
  TensorPtr out = m.encode(Branch::kVision, x, nullptr);

  // Frozen-only forward replicated through the graph ops, adapters omitted.
  // (Frozen weights aren't exposed; reuse encode after zeroing the lora A
  // matrices too, which cannot change a zero adapter output.)
  for (ParamUnit& u : m.units()) {
    for (auto& p : u.params) {
      for (auto& v : p->data) v = 0.0;
    }
  }
  TensorPtr frozen_only = m.encode(Branch::kVision, x, nullptr);
  EXPECT_EQ(out->data, frozen_only->data);
}

TEST(Model, NonZeroAdapterChangesOutput) {
  ModelConfig cfg = tiny_config();
  Model m(cfg, random_protos(4, 8, 1));
  TensorPtr x = random_batch(5, cfg.vision_input, 9);
  TensorPtr before = m.encode(Branch::kVision, x, nullptr);
  ParamUnit& u = m.unit(Branch::kVision, 2);
  for (auto& v : u.params[1]->data) v = 0.3;
  TensorPtr after = m.encode(Branch::kVision, x, nullptr);
  EXPECT_NE(before->data, after->data);
}

TEST(Model, EncodeShapeAndRowNorms) {
  ModelConfig cfg = tiny_config();
  Model m(cfg, random_protos(4, 8, 1));
  TensorPtr x = random_batch(16, cfg.vision_input, 13);
  TensorPtr out = m.encode(Branch::kVision, x, nullptr);
  EXPECT_EQ(out->shape, (std::vector<int>{16, 8}));
  for (int i = 0; i < 16; ++i) {
    double sq = 0.0;
    for (int j = 0; j < 8; ++j) sq += out->data[i * 8 + j] * out->data[i * 8 + j];
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-12);
  }
}

TEST(Model, EncodeRejectsWrongInputDim) {
  Model m(tiny_config(), random_protos(4, 8, 1));
  TensorPtr bad = random_batch(3, 5, 2);
  EXPECT_THROW(m.encode(Branch::kVision, bad, nullptr), std::invalid_argument);
}

TEST(Model, SingletonCandidateLossIsExactlyZero) {
  ModelConfig cfg = tiny_config();
  Model m(cfg, random_protos(4, 8, 1));
  TensorPtr x = random_batch(3, cfg.vision_input, 17);
  const std::vector<int> ids = {2, 2, 2};
  const std::vector<int> cand = {2};
  TensorPtr loss = m.loss_batch(x, ids, cand, nullptr);
  EXPECT_EQ(loss->data[0], 0.0);
}

TEST(Model, AlignedTwoClassHighScaleLossIsTiny) {
  // Closed-form check on the loss head: v identical to the target row and
  // orthogonal to the other candidate, scale 100:
  // loss = log(1 + e^{-100}) < 1e-3.
  ModelConfig cfg = tiny_config();
  cfg.logit_scale = 100.0;
  Model m(cfg, random_protos(4, 8, 1));
  std::vector<double> v = {1, 0, 0, 0, 0, 0, 0, 0};
  std::vector<double> t = {1, 0, 0, 0, 0, 0, 0, 0,
                           0, 1, 0, 0, 0, 0, 0, 0};
  const std::vector<int> targets = {0};
  const double loss = m.eval_loss_head(v, 1, t, 2, targets);
  EXPECT_LT(loss, 1e-3);
  EXPECT_GE(loss, 0.0);
}

TEST(Model, RandomInitLossMatchesRandomEmbeddingOracle) {
  // At init the adapters are zero, so embeddings are generic unit vectors.
  // Independent oracle: Monte-Carlo cross-entropy of random unit embeddings
  // at the same scale and candidate count. (With logit scale s and embed
  // dim d the logits spread s/sqrt(d), so the expected loss sits above
  // ln C by roughly half that variance; ln C itself is the uniform floor.)
  const int C = 20;
  const int kEmbed = 32;
  ModelConfig cfg;  // reference widths, embed 32, scale 10
  cfg.seed = 7;
  Model m(cfg, random_protos(C, cfg.language_input, 3));
  TensorPtr x = random_batch(32, cfg.vision_input, 23);
  std::vector<int> ids(32);
  for (int i = 0; i < 32; ++i) ids[i] = i % C;
  std::vector<int> cand(C);
  for (int i = 0; i < C; ++i) cand[i] = i;
  TensorPtr loss = m.loss_batch(x, ids, cand, nullptr);

  Rng mc(4242);
  auto unit_vec = [&mc] {
    std::vector<double> v(kEmbed);
    double sq = 0.0;
    for (auto& e : v) {
      e = mc.gaussian();
      sq += e * e;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& e : v) e *= inv;
    return v;
  };
  double expected = 0.0;
  const int kTrials = 4000;
  for (int trial = 0; trial < kTrials; ++trial) {
    const auto v = unit_vec();
    double denom = 0.0;
    double target = 0.0;
    for (int j = 0; j < C; ++j) {
      const auto t = unit_vec();
      double dot = 0.0;
      for (int e = 0; e < kEmbed; ++e) dot += v[e] * t[e];
      const double z = std::exp(cfg.logit_scale * dot);
      denom += z;
      if (j == 0) target = z;
    }
    expected += -std::log(target / denom);
  }
  expected /= kTrials;

  EXPECT_NEAR(loss->data[0], expected, 0.5);
  EXPECT_GT(loss->data[0], std::log(20.0) - 0.3);  // uniform-logit floor
}

TEST(Model, LossRejectsMissingCandidate) {
  Model m(tiny_config(), random_protos(4, 8, 1));
  TensorPtr x = random_batch(2, 12, 2);
  const std::vector<int> ids = {0, 3};
  const std::vector<int> cand = {0, 1};
  EXPECT_THROW(m.loss_batch(x, ids, cand, nullptr), std::invalid_argument);
}

TEST(Perturb, ZeroEpsilonLeavesParams) {
  Model m(tiny_config(), random_protos(4, 8, 1));
  ParamUnit& u = m.unit(Branch::kVision, 1);
  const auto before = u.params[0]->data;
  std::vector<std::vector<double>> probe;
  for (const auto& p : u.params) probe.emplace_back(p->size(), 1.0);
  perturb_unit(u, probe, 0.0, 1);
  EXPECT_EQ(u.params[0]->data, before);
  perturb_unit(u, probe, 0.0, -1);
  EXPECT_EQ(u.params[0]->data, before);
}

TEST(Perturb, PlusThenMinusRestoresBitExactly) {
  Model m(tiny_config(), random_protos(4, 8, 1));
  ParamUnit& u = m.unit(Branch::kLanguage, 2);
  std::vector<std::vector<double>> before;
  for (const auto& p : u.params) before.push_back(p->data);
  Rng rng(4);
  std::vector<std::vector<double>> probe;
  for (const auto& p : u.params) {
    std::vector<double> v(p->size());
    for (auto& x : v) x = rng.gaussian();
    probe.push_back(std::move(v));
  }
  perturb_unit(u, probe, 0.137, 1);
  EXPECT_NE(u.params[0]->data, before[0]);
  perturb_unit(u, probe, 0.137, -1);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(u.params[i]->data, before[i]);
  }
}

TEST(Perturb, ArithmeticExample) {
  Model m(tiny_config(), random_protos(4, 8, 1));
  ParamUnit& u = m.unit(Branch::kVision, 1);
  u.params[0]->data[0] = 1.0;
  u.params[0]->data[1] = 2.0;
  std::vector<std::vector<double>> probe;
  for (const auto& p : u.params) probe.emplace_back(p->size(), 0.0);
  probe[0][0] = 1.0;
  probe[0][1] = -1.0;
  perturb_unit(u, probe, 0.001, 1);
  EXPECT_DOUBLE_EQ(u.params[0]->data[0], 1.001);
  EXPECT_DOUBLE_EQ(u.params[0]->data[1], 1.999);
}

TEST(Perturb, ShapeMismatchErrors) {
  Model m(tiny_config(), random_protos(4, 8, 1));
  ParamUnit& u = m.unit(Branch::kVision, 1);
  std::vector<std::vector<double>> probe = {{1.0, 2.0}};
  EXPECT_THROW(perturb_unit(u, probe, 0.1, 1), std::invalid_argument);
}

TEST(Snapshot, RestoreIsBitExactAndDoubleSnapshotIdentical) {
  Model m(tiny_config(), random_protos(4, 8, 1));
  const UnitSnapshot s1 = m.snapshot_units();
  const UnitSnapshot s2 = m.snapshot_units();
  EXPECT_EQ(s1.params, s2.params);
  for (ParamUnit& u : m.units()) {
    for (auto& p : u.params) {
      for (auto& v : p->data) v += 0.5;
    }
  }
  m.restore_units(s1);
  const UnitSnapshot s3 = m.snapshot_units();
  EXPECT_EQ(s1.params, s3.params);
}

TEST(Snapshot, RejectsForeignSnapshot) {
  Model a(tiny_config(), random_protos(4, 8, 1));
  Model b(tiny_config(), random_protos(4, 8, 1));
  const UnitSnapshot snap = a.snapshot_units();
  EXPECT_THROW(b.restore_units(snap), std::invalid_argument);
}

TEST(Model, FrozenHashUnchangedByAdapterMutation) {
  Model m(tiny_config(), random_protos(4, 8, 1));
  const std::uint64_t h0 = m.frozen_hash();
  for (ParamUnit& u : m.units()) {
    for (auto& p : u.params) {
      for (auto& v : p->data) v += 1.0;
    }
  }
  EXPECT_EQ(m.frozen_hash(), h0);
}

// The cached fast path must be bit-identical to the graph path.
TEST(EvalPath, LossMatchesGraphPathBitwise) {
  for (AdapterKind kind : {AdapterKind::kLora, AdapterKind::kMoe}) {
    ModelConfig cfg = tiny_config(kind);
    const int C = 6;
    Model m(cfg, random_protos(C, 8, 31));
    // Give the adapters nonzero output so the test exercises them.
    Rng jitter(8);
    for (ParamUnit& u : m.units()) {
      for (auto& p : u.params) {
        for (auto& v : p->data) v += 0.05 * jitter.gaussian();
      }
    }
    TensorPtr x = random_batch(7, cfg.vision_input, 41);
    std::vector<int> ids = {0, 1, 2, 3, 4, 5, 0};
    std::vector<int> cand = {0, 1, 2, 3, 4, 5};
    TensorPtr graph_loss = m.loss_batch(x, ids, cand, nullptr);

    Model::BranchActivations vis, lang;
    m.eval_set_inputs(Branch::kVision, x->data, 7, vis);
    m.eval_encode(Branch::kVision, vis, vis, 1);
    TensorPtr protos = m.prototype_batch(cand);
    m.eval_set_inputs(Branch::kLanguage, protos->data, C, lang);
    m.eval_encode(Branch::kLanguage, lang, lang, 1);
    const std::vector<int> targets = candidate_positions(ids, cand);
    const double eval_loss = m.eval_loss_head(vis.embed, 7, lang.embed, C, targets);

    EXPECT_EQ(graph_loss->data[0], eval_loss)
        << "paths diverged for adapter kind " << adapter_name(kind);
  }
}

TEST(EvalPath, PartialRecomputeMatchesFullRecompute) {
  ModelConfig cfg = tiny_config();
  Model m(cfg, random_protos(4, 8, 31));
  TensorPtr x = random_batch(5, cfg.vision_input, 43);
  Model::BranchActivations base;
  m.eval_set_inputs(Branch::kVision, x->data, 5, base);
  m.eval_encode(Branch::kVision, base, base, 1);

  // Perturb layer 2's unit, recompute from layer 2 against a full pass.
  ParamUnit& u = m.unit(Branch::kVision, 2);
  for (auto& v : u.params[1]->data) v += 0.01;
  Model::BranchActivations partial;
  m.eval_encode(Branch::kVision, base, partial, 2);
  Model::BranchActivations full;
  m.eval_set_inputs(Branch::kVision, x->data, 5, full);
  m.eval_encode(Branch::kVision, full, full, 1);
  EXPECT_EQ(partial.embed, full.embed);
}

TEST(Model, GoldenEncodeRegressionPin) {
  // Reference configuration, fixed seed and input; values recorded from the
  // first verified run and pinned against drift.
  ModelConfig cfg;  // defaults
  cfg.seed = 2024;
  Model m(cfg, random_protos(4, cfg.language_input, 77));
  Rng in_rng(31337);
  TensorPtr x = gaussian_probe(in_rng, {2, cfg.vision_input});
  TensorPtr out = m.encode(Branch::kVision, x, nullptr);
  ASSERT_EQ(out->shape, (std::vector<int>{2, 32}));
  const std::vector<double> expected_head = {
      -0.1075857501174817,
      -0.035043609829114947,
      -0.093779148815556379,
      0.010039867713835774,
      -0.16326700644504644,
      0.12384235120266146,
      0.28615163626391954,
      -0.020375261949922698,
      -0.17603713541643226,
      -0.16787628793796047,
      0.11874451481236395,
      0.13616166688639864,
  };
  for (std::size_t i = 0; i < expected_head.size(); ++i) {
    EXPECT_EQ(out->data[i], expected_head[i]) << "index " << i;
  }
}

}  // namespace
}  // namespace mozolab
