// SPDX-License-Identifier: Apache-2.0
#include "mozolab/data.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

namespace mozolab {
namespace {

DataConfig small_config() {
  DataConfig cfg;
  cfg.classes = 10;
  cfg.latent_dim = 8;
  cfg.vision_dim = 16;
  cfg.language_dim = 8;
  cfg.train_per_class = 6;
  cfg.test_per_class = 4;
  cfg.sigma = 0.1;
  cfg.seed = 5;
  return cfg;
}

TEST(TaskStream, Inc20YieldsFiveTasks) {
  DataConfig cfg;
  cfg.classes = 100;
  cfg.train_per_class = 2;
  cfg.test_per_class = 1;
  cfg.seed = 1;
  const SynthDataset data = SynthDataset::generate(cfg);
  const TaskStream stream = build_task_stream(data, 20);
  ASSERT_EQ(stream.tasks().size(), 5u);
  std::vector<int> expected(20);
  for (int i = 0; i < 20; ++i) expected[i] = i;
  EXPECT_EQ(stream.tasks()[0].classes, expected);
  EXPECT_EQ(build_task_stream(data, 10).tasks().size(), 10u);
  EXPECT_THROW(build_task_stream(data, 30), std::invalid_argument);
}

TEST(TaskStream, ClassSetsArePairwiseDisjoint) {
  const SynthDataset data = SynthDataset::generate(small_config());
  for (int inc : {1, 2, 5}) {
    const TaskStream stream = build_task_stream(data, inc);
    std::set<int> seen;
    for (const Task& t : stream.tasks()) {
      for (int c : t.classes) {
        EXPECT_TRUE(seen.insert(c).second) << "class " << c << " appears twice";
      }
    }
    EXPECT_EQ(seen.size(), static_cast<std::size_t>(data.config().classes));
  }
}

TEST(TaskStream, ShuffledVariantKeepsDisjointness) {
  const SynthDataset data = SynthDataset::generate(small_config());
  const TaskStream plain = build_task_stream(data, 5);
  const TaskStream shuffled = build_task_stream(data, 5, 99);
  EXPECT_NE(plain.tasks()[0].classes, shuffled.tasks()[0].classes);
  std::set<int> seen;
  for (const Task& t : shuffled.tasks()) {
    for (int c : t.classes) EXPECT_TRUE(seen.insert(c).second);
  }
  const TaskStream shuffled2 = build_task_stream(data, 5, 99);
  EXPECT_EQ(shuffled.tasks()[0].classes, shuffled2.tasks()[0].classes);
}

TEST(Batches, CountsAndFinalPartialBatch) {
  DataConfig cfg = small_config();
  cfg.classes = 20;
  cfg.train_per_class = 50;  // 1000 samples in one inc-20 task
  const SynthDataset data = SynthDataset::generate(cfg);
  const TaskStream stream = build_task_stream(data, 20);
  Rng rng(3);
  const auto batches = epoch_batches(data, stream.tasks()[0], 16, rng);
  ASSERT_EQ(batches.size(), 63u);
  EXPECT_EQ(batches.back().class_ids.size(), 8u);
  for (std::size_t i = 0; i + 1 < batches.size(); ++i) {
    EXPECT_EQ(batches[i].class_ids.size(), 16u);
  }
}

TEST(Batches, SameSeedSameOrder) {
  const SynthDataset data = SynthDataset::generate(small_config());
  const TaskStream stream = build_task_stream(data, 5);
  Rng a(7), b(7);
  const auto ba = epoch_batches(data, stream.tasks()[0], 4, a);
  const auto bb = epoch_batches(data, stream.tasks()[0], 4, b);
  ASSERT_EQ(ba.size(), bb.size());
  for (std::size_t i = 0; i < ba.size(); ++i) {
    EXPECT_EQ(ba[i].class_ids, bb[i].class_ids);
    EXPECT_EQ(ba[i].vision->data, bb[i].vision->data);
  }
}

TEST(Batches, EpochIsExactPermutationOfSplit) {
  const SynthDataset data = SynthDataset::generate(small_config());
  const TaskStream stream = build_task_stream(data, 5);
  const Task& task = stream.tasks()[1];
  Rng rng(11);
  std::multiset<std::pair<int, int>> emitted;
  const auto batches = epoch_batches(data, task, 7, rng,
                                     [&](int c, int s, bool train) {
                                       ASSERT_TRUE(train);
                                       emitted.insert({c, s});
                                     });
  std::multiset<std::pair<int, int>> expected;
  for (const SampleRef& r : task.train) expected.insert({r.class_id, r.index});
  EXPECT_EQ(emitted, expected);
  std::size_t total = 0;
  for (const auto& b : batches) total += b.class_ids.size();
  EXPECT_EQ(total, task.train.size());
}

TEST(Dataset, RegenerationIsBitIdentical) {
  const SynthDataset a = SynthDataset::generate(small_config());
  const SynthDataset b = SynthDataset::generate(small_config());
  EXPECT_TRUE(a == b);
}

TEST(Dataset, ZeroSigmaIsNearestPrototypeSeparable) {
  DataConfig cfg = small_config();
  cfg.sigma = 0.0;
  const SynthDataset data = SynthDataset::generate(cfg);
  // Exhaustively classify every sample against the vision-space class means.
  std::vector<std::vector<double>> means;
  for (int c = 0; c < cfg.classes; ++c) means.push_back(data.vision_class_mean(c));
  auto nearest = [&](std::span<const double> x) {
    int best = -1;
    double best_d = 0.0;
    for (int c = 0; c < cfg.classes; ++c) {
      double d = 0.0;
      for (int i = 0; i < cfg.vision_dim; ++i) {
        const double diff = x[i] - means[c][i];
        d += diff * diff;
      }
      if (best < 0 || d < best_d) {
        best = c;
        best_d = d;
      }
    }
    return best;
  };
  for (int c = 0; c < cfg.classes; ++c) {
    for (int s = 0; s < cfg.train_per_class; ++s) {
      ASSERT_EQ(nearest(data.train_sample(c, s)), c);
    }
    for (int s = 0; s < cfg.test_per_class; ++s) {
      ASSERT_EQ(nearest(data.test_sample(c, s)), c);
    }
  }
}

TEST(Dataset, BinaryRoundTripIsBitExact) {
  const SynthDataset a = SynthDataset::generate(small_config());
  const std::string path = ::testing::TempDir() + "mozolab_dataset.bin";
  a.save(path);
  const SynthDataset b = SynthDataset::load(path);
  EXPECT_TRUE(a == b);
  std::remove(path.c_str());
}

TEST(Dataset, LoadRejectsBadMagic) {
  const std::string path = ::testing::TempDir() + "mozolab_bogus.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE garbage";
  }
  EXPECT_THROW(SynthDataset::load(path), std::runtime_error);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace mozolab
