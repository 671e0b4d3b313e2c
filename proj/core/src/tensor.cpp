// SPDX-License-Identifier: Apache-2.0
#include "mozolab/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "kernels.hpp"
#include "mozolab/rng.hpp"

namespace mozolab {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (!requires_grad) return;
  if (!grad) grad.emplace(data.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += g[i];
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data,
                      bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(shape));
  }
  if (shape_size(shape) != data.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                std::to_string(data.size()));
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  t->leaf = true;
  return t;
}

TensorPtr zeros(std::vector<int> shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

TensorPtr full(std::vector<int> shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

TensorPtr scalar(double value) { return make_tensor({}, {value}); }

TensorPtr gaussian_probe(Rng& rng, std::vector<int> shape) {
  const std::size_t n = shape_size(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = rng.gaussian();
  return make_tensor(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------- Tape

Tape::Saved Tape::save(const TensorPtr& t) {
  Saved s;
  if (t->leaf) {
    s.ref_ = &t->data;
  } else {
    s.owned_ = std::make_shared<const std::vector<double>>(t->data);
    float_count_ += t->data.size();
  }
  return s;
}

Tape::Saved Tape::save_values(std::vector<double> values) {
  Saved s;
  float_count_ += values.size();
  s.owned_ = std::make_shared<const std::vector<double>>(std::move(values));
  return s;
}

void Tape::record(const TensorPtr& output, std::vector<TensorPtr> inputs,
                  BackwardFn backward) {
  outputs_.insert(output.get());
  nodes_.push_back(Node{output, std::move(inputs), std::move(backward)});
}

void Tape::backward(const TensorPtr& loss) {
  if (loss->size() != 1 || !loss->shape.empty()) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(loss->shape));
  }
  if (!produced(loss.get())) {
    throw std::runtime_error("backward: no tape (loss was not recorded)");
  }
  if (!loss->grad) loss->grad.emplace(1, 0.0);
  (*loss->grad)[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output->grad) continue;  // not on the path to the loss
    it->backward(*it->output->grad);
  }
}

void Tape::clear() {
  nodes_.clear();
  outputs_.clear();
  float_count_ = 0;
}

// ----------------------------------------------------------------- ops

namespace ops {
namespace {

[[noreturn]] void shape_error(const char* op, const TensorPtr& a, const TensorPtr& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a->shape) +
                              " x " + shape_str(b->shape));
}

TensorPtr result(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  t->leaf = false;
  return t;
}

bool recording(Tape* tape, const TensorPtr& out) {
  return tape != nullptr && out->requires_grad;
}

enum class Broadcast { kSame, kRow, kScalar };

Broadcast broadcast_mode(const char* op, const TensorPtr& a, const TensorPtr& b) {
  if (b->size() == 1 && b->shape.size() <= 1) return Broadcast::kScalar;
  if (a->shape == b->shape) return Broadcast::kSame;
  if (a->shape.size() == 2 && b->shape.size() == 1 && a->shape[1] == b->shape[0]) {
    return Broadcast::kRow;
  }
  shape_error(op, a, b);
}

}  // namespace

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0]) {
    shape_error("matmul", a, b);
  }
  const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  std::vector<double> data(m * n);
  kernels::matmul(data.data(), a->data.data(), b->data.data(), m, k, n);
  auto out = result({static_cast<int>(m), static_cast<int>(n)}, std::move(data),
                    a->requires_grad || b->requires_grad);
  if (recording(tape, out)) {
    Tape::Saved sa, sb;
    if (b->requires_grad) sa = tape->save(a);
    if (a->requires_grad) sb = tape->save(b);
    tape->record(out, {a, b}, [a, b, sa, sb, m, k, n](const std::vector<double>& g) {
      if (a->requires_grad) {
        if (!a->grad) a->grad.emplace(a->data.size(), 0.0);
        kernels::matmul_nt_acc(a->grad->data(), g.data(), sb.values().data(), m, n, k);
      }
      if (b->requires_grad) {
        if (!b->grad) b->grad.emplace(b->data.size(), 0.0);
        kernels::matmul_tn_acc(b->grad->data(), sa.values().data(), g.data(), m, k, n);
      }
    });
  }
  return out;
}

TensorPtr matmul_nt(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[1]) {
    shape_error("matmul_nt", a, b);
  }
  const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
  std::vector<double> data(m * n);
  kernels::matmul_nt(data.data(), a->data.data(), b->data.data(), m, k, n);
  auto out = result({static_cast<int>(m), static_cast<int>(n)}, std::move(data),
                    a->requires_grad || b->requires_grad);
  if (recording(tape, out)) {
    Tape::Saved sa, sb;
    if (b->requires_grad) sa = tape->save(a);
    if (a->requires_grad) sb = tape->save(b);
    tape->record(out, {a, b}, [a, b, sa, sb, m, k, n](const std::vector<double>& g) {
      if (a->requires_grad) {
        // dA[m,k] += g[m,n] * B[n,k]
        if (!a->grad) a->grad.emplace(a->data.size(), 0.0);
        kernels::matmul_nn_acc(a->grad->data(), g.data(), sb.values().data(), m, n, k);
      }
      if (b->requires_grad) {
        // dB[n,k] += g[m,n]^T * A[m,k]
        if (!b->grad) b->grad.emplace(b->data.size(), 0.0);
        kernels::matmul_tn_acc(b->grad->data(), g.data(), sa.values().data(), m, n, k);
      }
    });
  }
  return out;
}

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  const Broadcast mode = broadcast_mode("add", a, b);
  std::vector<double> data(a->size());
  if (mode == Broadcast::kSame) {
    kernels::add(data.data(), a->data.data(), b->data.data(), a->size());
  } else if (mode == Broadcast::kScalar) {
    const double bv = b->data[0];
    for (std::size_t i = 0; i < a->size(); ++i) data[i] = a->data[i] + bv;
  } else {
    const std::size_t rows = a->shape[0], cols = a->shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
      kernels::add(data.data() + i * cols, a->data.data() + i * cols, b->data.data(), cols);
    }
  }
  auto out = result(a->shape, std::move(data), a->requires_grad || b->requires_grad);
  if (recording(tape, out)) {
    tape->record(out, {a, b}, [a, b, mode](const std::vector<double>& g) {
      if (a->requires_grad) a->accumulate_grad(g);
      if (b->requires_grad) {
        if (!b->grad) b->grad.emplace(b->data.size(), 0.0);
        if (mode == Broadcast::kSame) {
          for (std::size_t i = 0; i < g.size(); ++i) (*b->grad)[i] += g[i];
        } else if (mode == Broadcast::kScalar) {
          double s = 0.0;
          for (double v : g) s += v;
          (*b->grad)[0] += s;
        } else {
          const std::size_t cols = b->data.size();
          for (std::size_t i = 0; i < g.size(); ++i) (*b->grad)[i % cols] += g[i];
        }
      }
    });
  }
  return out;
}

TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  const Broadcast mode = broadcast_mode("mul", a, b);
  std::vector<double> data(a->size());
  if (mode == Broadcast::kSame) {
    kernels::mul(data.data(), a->data.data(), b->data.data(), a->size());
  } else if (mode == Broadcast::kScalar) {
    const double bv = b->data[0];
    for (std::size_t i = 0; i < a->size(); ++i) data[i] = a->data[i] * bv;
  } else {
    const std::size_t rows = a->shape[0], cols = a->shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
      kernels::mul(data.data() + i * cols, a->data.data() + i * cols, b->data.data(), cols);
    }
  }
  auto out = result(a->shape, std::move(data), a->requires_grad || b->requires_grad);
  if (recording(tape, out)) {
    Tape::Saved sa, sb;
    if (b->requires_grad) sa = tape->save(a);
    if (a->requires_grad) sb = tape->save(b);
    tape->record(out, {a, b}, [a, b, sa, sb, mode](const std::vector<double>& g) {
      if (a->requires_grad) {
        if (!a->grad) a->grad.emplace(a->data.size(), 0.0);
        const auto& bv = sb.values();
        if (mode == Broadcast::kSame) {
          for (std::size_t i = 0; i < g.size(); ++i) (*a->grad)[i] += g[i] * bv[i];
        } else if (mode == Broadcast::kScalar) {
          for (std::size_t i = 0; i < g.size(); ++i) (*a->grad)[i] += g[i] * bv[0];
        } else {
          const std::size_t cols = bv.size();
          for (std::size_t i = 0; i < g.size(); ++i) (*a->grad)[i] += g[i] * bv[i % cols];
        }
      }
      if (b->requires_grad) {
        if (!b->grad) b->grad.emplace(b->data.size(), 0.0);
        const auto& av = sa.values();
        if (mode == Broadcast::kSame) {
          for (std::size_t i = 0; i < g.size(); ++i) (*b->grad)[i] += g[i] * av[i];
        } else if (mode == Broadcast::kScalar) {
          double s = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * av[i];
          (*b->grad)[0] += s;
        } else {
          const std::size_t cols = b->data.size();
          for (std::size_t i = 0; i < g.size(); ++i) (*b->grad)[i % cols] += g[i] * av[i];
        }
      }
    });
  }
  return out;
}

TensorPtr relu(Tape* tape, const TensorPtr& x) {
  std::vector<double> data(x->size());
  kernels::relu_vec(data.data(), x->data.data(), x->size());
  auto out = result(x->shape, std::move(data), x->requires_grad);
  if (recording(tape, out)) {
    Tape::Saved sy = tape->save(out);
    tape->record(out, {x}, [x, sy](const std::vector<double>& g) {
      if (!x->grad) x->grad.emplace(x->data.size(), 0.0);
      const auto& y = sy.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (y[i] > 0.0) (*x->grad)[i] += g[i];
      }
    });
  }
  return out;
}

TensorPtr tanh(Tape* tape, const TensorPtr& x) {
  std::vector<double> data(x->size());
  kernels::tanh_vec(data.data(), x->data.data(), x->size());
  auto out = result(x->shape, std::move(data), x->requires_grad);
  if (recording(tape, out)) {
    Tape::Saved sy = tape->save(out);
    tape->record(out, {x}, [x, sy](const std::vector<double>& g) {
      if (!x->grad) x->grad.emplace(x->data.size(), 0.0);
      const auto& y = sy.values();
      for (std::size_t i = 0; i < g.size(); ++i) (*x->grad)[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  }
  return out;
}

TensorPtr softmax(Tape* tape, const TensorPtr& x) {
  if (x->shape.empty() || x->shape.size() > 2) {
    throw std::invalid_argument("softmax: expected rank 1 or 2, got " + shape_str(x->shape));
  }
  const std::size_t rows = x->shape.size() == 2 ? x->shape[0] : 1;
  const std::size_t cols = x->shape.size() == 2 ? x->shape[1] : x->shape[0];
  std::vector<double> data(x->size());
  kernels::softmax_rows(data.data(), x->data.data(), rows, cols);
  auto out = result(x->shape, std::move(data), x->requires_grad);
  if (recording(tape, out)) {
    Tape::Saved sy = tape->save(out);
    tape->record(out, {x}, [x, sy, rows, cols](const std::vector<double>& g) {
      if (!x->grad) x->grad.emplace(x->data.size(), 0.0);
      const auto& y = sy.values();
      for (std::size_t i = 0; i < rows; ++i) {
        const double* yr = y.data() + i * cols;
        const double* gr = g.data() + i * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < cols; ++j) {
          (*x->grad)[i * cols + j] += yr[j] * (gr[j] - dot);
        }
      }
    });
  }
  return out;
}

TensorPtr log(Tape* tape, const TensorPtr& x) {
  std::vector<double> data(x->size());
  kernels::log_vec(data.data(), x->data.data(), x->size());
  auto out = result(x->shape, std::move(data), x->requires_grad);
  if (recording(tape, out)) {
    Tape::Saved sx = tape->save(x);
    tape->record(out, {x}, [x, sx](const std::vector<double>& g) {
      if (!x->grad) x->grad.emplace(x->data.size(), 0.0);
      const auto& xv = sx.values();
      for (std::size_t i = 0; i < g.size(); ++i) (*x->grad)[i] += g[i] / xv[i];
    });
  }
  return out;
}

TensorPtr sum(Tape* tape, const TensorPtr& x) {
  double s = 0.0;
  for (double v : x->data) s += v;
  auto out = result({}, {s}, x->requires_grad);
  if (recording(tape, out)) {
    tape->record(out, {x}, [x](const std::vector<double>& g) {
      if (!x->grad) x->grad.emplace(x->data.size(), 0.0);
      for (auto& gv : *x->grad) gv += g[0];
    });
  }
  return out;
}

TensorPtr mean(Tape* tape, const TensorPtr& x) {
  double s = 0.0;
  for (double v : x->data) s += v;
  const double n = static_cast<double>(x->size());
  auto out = result({}, {s / n}, x->requires_grad);
  if (recording(tape, out)) {
    tape->record(out, {x}, [x, n](const std::vector<double>& g) {
      if (!x->grad) x->grad.emplace(x->data.size(), 0.0);
      const double gv = g[0] / n;
      for (auto& gg : *x->grad) gg += gv;
    });
  }
  return out;
}

TensorPtr l2_normalize(Tape* tape, const TensorPtr& x) {
  if (x->shape.empty() || x->shape.size() > 2) {
    throw std::invalid_argument("l2_normalize: expected rank 1 or 2, got " + shape_str(x->shape));
  }
  const std::size_t rows = x->shape.size() == 2 ? x->shape[0] : 1;
  const std::size_t cols = x->shape.size() == 2 ? x->shape[1] : x->shape[0];
  std::vector<double> data(x->size());
  std::vector<double> norms(rows);
  kernels::l2_normalize_rows(data.data(), norms.data(), x->data.data(), rows, cols);
  auto out = result(x->shape, std::move(data), x->requires_grad);
  if (recording(tape, out)) {
    Tape::Saved sy = tape->save(out);
    Tape::Saved snorms = tape->save_values(std::move(norms));
    tape->record(out, {x}, [x, sy, snorms, rows, cols](const std::vector<double>& g) {
      if (!x->grad) x->grad.emplace(x->data.size(), 0.0);
      const auto& y = sy.values();
      const auto& nv = snorms.values();
      for (std::size_t i = 0; i < rows; ++i) {
        const double* yr = y.data() + i * cols;
        const double* gr = g.data() + i * cols;
        const double inv = 1.0 / nv[i];
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < cols; ++j) {
          (*x->grad)[i * cols + j] += (gr[j] - yr[j] * dot) * inv;
        }
      }
    });
  }
  return out;
}

}  // namespace ops

}  // namespace mozolab
