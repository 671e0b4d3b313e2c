// SPDX-License-Identifier: Apache-2.0
#include "mozolab/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "kernels.hpp"

namespace mozolab {

namespace {

void fill_gaussian(Rng& rng, std::vector<double>& v) {
  for (auto& x : v) x = rng.gaussian();
}

}  // namespace

SynthDataset SynthDataset::generate(const DataConfig& cfg) {
  if (cfg.classes <= 0 || cfg.latent_dim <= 0 || cfg.vision_dim <= 0 ||
      cfg.language_dim <= 0 || cfg.train_per_class <= 0 || cfg.test_per_class <= 0) {
    throw std::invalid_argument("dataset: all counts and dims must be positive");
  }
  if (cfg.language_dim > cfg.vision_dim) {
    throw std::invalid_argument("dataset: language_dim must not exceed vision_dim");
  }
  SynthDataset d;
  d.cfg_ = cfg;
  Rng rng(cfg.seed);

  // The language projection is the leading column block of the vision
  // projection, so the language prototype equals the first language_dim
  // coordinates of the clean vision sample. This gives the two modalities
  // a shared semantic subspace, standing in for a pretrained aligned
  // encoder pair.
  d.w_vision_.resize(static_cast<std::size_t>(cfg.latent_dim) * cfg.vision_dim);
  fill_gaussian(rng, d.w_vision_);
  d.w_language_.resize(static_cast<std::size_t>(cfg.latent_dim) * cfg.language_dim);
  for (int i = 0; i < cfg.latent_dim; ++i) {
    for (int j = 0; j < cfg.language_dim; ++j) {
      d.w_language_[static_cast<std::size_t>(i) * cfg.language_dim + j] =
          d.w_vision_[static_cast<std::size_t>(i) * cfg.vision_dim + j];
    }
  }

  d.latents_.resize(static_cast<std::size_t>(cfg.classes) * cfg.latent_dim);
  for (int c = 0; c < cfg.classes; ++c) {
    double* z = d.latents_.data() + static_cast<std::size_t>(c) * cfg.latent_dim;
    double sq = 0.0;
    for (int i = 0; i < cfg.latent_dim; ++i) {
      z[i] = rng.gaussian();
      sq += z[i] * z[i];
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (int i = 0; i < cfg.latent_dim; ++i) z[i] *= inv;
  }

  d.prototypes_.resize(static_cast<std::size_t>(cfg.classes) * cfg.language_dim);
  kernels::matmul(d.prototypes_.data(), d.latents_.data(), d.w_language_.data(),
                  cfg.classes, cfg.latent_dim, cfg.language_dim);

  d.train_.resize(static_cast<std::size_t>(cfg.classes) * cfg.train_per_class * cfg.vision_dim);
  d.test_.resize(static_cast<std::size_t>(cfg.classes) * cfg.test_per_class * cfg.vision_dim);
  std::vector<double> base(cfg.vision_dim);
  for (int c = 0; c < cfg.classes; ++c) {
    kernels::matmul(base.data(), d.latents_.data() + static_cast<std::size_t>(c) * cfg.latent_dim,
                    d.w_vision_.data(), 1, cfg.latent_dim, cfg.vision_dim);
    for (int s = 0; s < cfg.train_per_class; ++s) {
      double* out = d.train_.data() +
                    (static_cast<std::size_t>(c) * cfg.train_per_class + s) * cfg.vision_dim;
      for (int i = 0; i < cfg.vision_dim; ++i) out[i] = base[i] + cfg.sigma * rng.gaussian();
    }
    for (int s = 0; s < cfg.test_per_class; ++s) {
      double* out = d.test_.data() +
                    (static_cast<std::size_t>(c) * cfg.test_per_class + s) * cfg.vision_dim;
      for (int i = 0; i < cfg.vision_dim; ++i) out[i] = base[i] + cfg.sigma * rng.gaussian();
    }
  }
  return d;
}

std::span<const double> SynthDataset::latent(int class_id) const {
  return {latents_.data() + static_cast<std::size_t>(class_id) * cfg_.latent_dim,
          static_cast<std::size_t>(cfg_.latent_dim)};
}

std::span<const double> SynthDataset::prototype(int class_id) const {
  return {prototypes_.data() + static_cast<std::size_t>(class_id) * cfg_.language_dim,
          static_cast<std::size_t>(cfg_.language_dim)};
}

std::span<const double> SynthDataset::train_sample(int class_id, int index) const {
  return {train_.data() +
              (static_cast<std::size_t>(class_id) * cfg_.train_per_class + index) * cfg_.vision_dim,
          static_cast<std::size_t>(cfg_.vision_dim)};
}

std::span<const double> SynthDataset::test_sample(int class_id, int index) const {
  return {test_.data() +
              (static_cast<std::size_t>(class_id) * cfg_.test_per_class + index) * cfg_.vision_dim,
          static_cast<std::size_t>(cfg_.vision_dim)};
}

std::vector<double> SynthDataset::vision_class_mean(int class_id) const {
  std::vector<double> out(cfg_.vision_dim);
  kernels::matmul(out.data(), latents_.data() + static_cast<std::size_t>(class_id) * cfg_.latent_dim,
                  w_vision_.data(), 1, cfg_.latent_dim, cfg_.vision_dim);
  return out;
}

bool SynthDataset::operator==(const SynthDataset& o) const {
  return cfg_.classes == o.cfg_.classes && cfg_.latent_dim == o.cfg_.latent_dim &&
         cfg_.vision_dim == o.cfg_.vision_dim && cfg_.language_dim == o.cfg_.language_dim &&
         cfg_.train_per_class == o.cfg_.train_per_class &&
         cfg_.test_per_class == o.cfg_.test_per_class && cfg_.sigma == o.cfg_.sigma &&
         cfg_.seed == o.cfg_.seed && latents_ == o.latents_ && w_vision_ == o.w_vision_ &&
         w_language_ == o.w_language_ && prototypes_ == o.prototypes_ && train_ == o.train_ &&
         test_ == o.test_;
}

// --------------------------------------------------------- binary format

namespace {

constexpr char kMagic[4] = {'M', 'Z', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

void put_f64_array(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) put_f64(os, x);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

void get_f64_array(std::istream& is, std::vector<double>& v) {
  for (auto& x : v) x = get_f64(is);
}

}  // namespace

void SynthDataset::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dataset save: cannot open " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(cfg_.classes));
  put_u32(os, static_cast<std::uint32_t>(cfg_.latent_dim));
  put_u32(os, static_cast<std::uint32_t>(cfg_.vision_dim));
  put_u32(os, static_cast<std::uint32_t>(cfg_.language_dim));
  put_u32(os, static_cast<std::uint32_t>(cfg_.train_per_class));
  put_u32(os, static_cast<std::uint32_t>(cfg_.test_per_class));
  put_u64(os, cfg_.seed);
  put_f64(os, cfg_.sigma);
  put_f64_array(os, latents_);
  put_f64_array(os, w_vision_);
  put_f64_array(os, w_language_);
  put_f64_array(os, prototypes_);
  put_f64_array(os, train_);
  put_f64_array(os, test_);
  if (!os) throw std::runtime_error("dataset save: write failed for " + path);
}

SynthDataset SynthDataset::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset load: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("dataset load: bad magic in " + path);
  }
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw std::runtime_error("dataset load: unsupported version " + std::to_string(version));
  }
  SynthDataset d;
  d.cfg_.classes = static_cast<int>(get_u32(is));
  d.cfg_.latent_dim = static_cast<int>(get_u32(is));
  d.cfg_.vision_dim = static_cast<int>(get_u32(is));
  d.cfg_.language_dim = static_cast<int>(get_u32(is));
  d.cfg_.train_per_class = static_cast<int>(get_u32(is));
  d.cfg_.test_per_class = static_cast<int>(get_u32(is));
  d.cfg_.seed = get_u64(is);
  d.cfg_.sigma = get_f64(is);
  const auto& c = d.cfg_;
  d.latents_.resize(static_cast<std::size_t>(c.classes) * c.latent_dim);
  d.w_vision_.resize(static_cast<std::size_t>(c.latent_dim) * c.vision_dim);
  d.w_language_.resize(static_cast<std::size_t>(c.latent_dim) * c.language_dim);
  d.prototypes_.resize(static_cast<std::size_t>(c.classes) * c.language_dim);
  d.train_.resize(static_cast<std::size_t>(c.classes) * c.train_per_class * c.vision_dim);
  d.test_.resize(static_cast<std::size_t>(c.classes) * c.test_per_class * c.vision_dim);
  get_f64_array(is, d.latents_);
  get_f64_array(is, d.w_vision_);
  get_f64_array(is, d.w_language_);
  get_f64_array(is, d.prototypes_);
  get_f64_array(is, d.train_);
  get_f64_array(is, d.test_);
  if (!is) throw std::runtime_error("dataset load: truncated file " + path);
  return d;
}

// ------------------------------------------------------------ task stream

std::vector<int> TaskStream::seen_classes(int through_task) const {
  std::vector<int> out;
  for (int t = 0; t <= through_task && t < static_cast<int>(tasks_.size()); ++t) {
    out.insert(out.end(), tasks_[t].classes.begin(), tasks_[t].classes.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

TaskStream build_task_stream(const SynthDataset& data, int inc_size,
                             std::optional<std::uint64_t> shuffle_seed) {
  const DataConfig& cfg = data.config();
  if (inc_size <= 0 || cfg.classes % inc_size != 0) {
    throw std::invalid_argument("task stream: inc_size " + std::to_string(inc_size) +
                                " does not divide class count " + std::to_string(cfg.classes));
  }
  std::vector<int> order(cfg.classes);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    for (int i = cfg.classes - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.below(static_cast<std::uint32_t>(i + 1)));
      std::swap(order[i], order[j]);
    }
  }
  const int num_tasks = cfg.classes / inc_size;
  std::vector<Task> tasks(num_tasks);
  for (int t = 0; t < num_tasks; ++t) {
    Task& task = tasks[t];
    task.classes.assign(order.begin() + static_cast<std::size_t>(t) * inc_size,
                        order.begin() + static_cast<std::size_t>(t + 1) * inc_size);
    for (int c : task.classes) {
      for (int s = 0; s < cfg.train_per_class; ++s) task.train.push_back({c, s});
      for (int s = 0; s < cfg.test_per_class; ++s) task.test.push_back({c, s});
    }
  }
  return TaskStream(std::move(tasks), inc_size);
}

std::vector<Batch> epoch_batches(const SynthDataset& data, const Task& task,
                                 int batch_size, Rng& rng, const SampleTap& tap) {
  if (batch_size < 1) throw std::invalid_argument("batches: batch_size must be >= 1");
  std::vector<SampleRef> order = task.train;
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint32_t>(i + 1)));
    std::swap(order[i], order[j]);
  }
  const int vd = data.config().vision_dim;
  std::vector<Batch> batches;
  for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, order.size() - pos);
    std::vector<double> rows(n * vd);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const SampleRef& ref = order[pos + i];
      auto src = data.train_sample(ref.class_id, ref.index);
      std::copy(src.begin(), src.end(), rows.begin() + i * vd);
      labels[i] = ref.class_id;
      if (tap) tap(ref.class_id, ref.index, true);
    }
    batches.push_back({make_tensor({static_cast<int>(n), vd}, std::move(rows)), std::move(labels)});
  }
  return batches;
}

TensorPtr gather_samples(const SynthDataset& data, std::span<const SampleRef> refs,
                         bool from_train, const SampleTap& tap) {
  const int vd = data.config().vision_dim;
  std::vector<double> rows(refs.size() * vd);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    auto src = from_train ? data.train_sample(refs[i].class_id, refs[i].index)
                          : data.test_sample(refs[i].class_id, refs[i].index);
    std::copy(src.begin(), src.end(), rows.begin() + i * vd);
    if (tap) tap(refs[i].class_id, refs[i].index, from_train);
  }
  return make_tensor({static_cast<int>(refs.size()), vd}, std::move(rows));
}

}  // namespace mozolab
