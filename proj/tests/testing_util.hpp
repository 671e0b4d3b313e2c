// SPDX-License-Identifier: Apache-2.0
//
// Shared test-only helpers: a random 3-layer graph generator over the
// supported primitives and a central-difference oracle for gradients.
#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "mozolab/rng.hpp"
#include "mozolab/tensor.hpp"

namespace mozolab::testing {

struct RandomNet {
  std::vector<TensorPtr> params;              // requires_grad leaves
  std::function<TensorPtr(Tape*)> forward;    // loss from current leaf data
};

inline TensorPtr leaf(Rng& rng, std::vector<int> shape, double scale, bool rg) {
  TensorPtr t = gaussian_probe(rng, std::move(shape));
  for (auto& x : t->data) x *= scale;
  t->requires_grad = rg;
  return t;
}

/// Random 3-layer net mixing every supported primitive. Keeps relu inputs
/// away from the kink so finite differences stay valid: returns nullopt
/// behavior via the `valid` flag, in which case the caller should draw a
/// fresh net.
inline RandomNet make_random_net(Rng& rng, bool* valid) {
  const int batch = 3 + static_cast<int>(rng.below(3));
  const int d0 = 4 + static_cast<int>(rng.below(3));
  const int d1 = 4 + static_cast<int>(rng.below(3));
  const int d2 = 4 + static_cast<int>(rng.below(3));
  const int d3 = 3 + static_cast<int>(rng.below(3));
  const int act1 = static_cast<int>(rng.below(2));  // 0: tanh, 1: relu
  const int act2 = static_cast<int>(rng.below(2));

  RandomNet net;
  TensorPtr x = leaf(rng, {batch, d0}, 1.0, false);
  TensorPtr w1 = leaf(rng, {d0, d1}, 0.7, true);
  TensorPtr b1 = leaf(rng, {d1}, 0.3, true);
  TensorPtr w2 = leaf(rng, {d1, d2}, 0.7, true);
  TensorPtr w3 = leaf(rng, {d2, d3}, 0.7, true);
  TensorPtr gain = leaf(rng, {}, 1.0, true);
  net.params = {w1, b1, w2, w3, gain};

  auto onehot = zeros({batch, d3});
  for (int i = 0; i < batch; ++i) {
    onehot->data[static_cast<std::size_t>(i) * d3 + rng.below(static_cast<std::uint32_t>(d3))] =
        1.0;
  }

  net.forward = [=](Tape* tape) {
    TensorPtr h1 = ops::add(tape, ops::matmul(tape, x, w1), b1);
    h1 = act1 == 0 ? ops::tanh(tape, h1) : ops::relu(tape, h1);
    TensorPtr h2 = ops::matmul(tape, h1, w2);
    h2 = act2 == 0 ? ops::tanh(tape, h2) : ops::relu(tape, h2);
    TensorPtr h3 = ops::l2_normalize(tape, ops::matmul(tape, h2, w3));
    TensorPtr scaled = ops::mul(tape, h3, gain);
    TensorPtr lp = ops::log(tape, ops::softmax(tape, scaled));
    TensorPtr picked = ops::mul(tape, lp, onehot);
    return ops::add(tape, ops::mean(tape, picked), ops::sum(tape, ops::mul(tape, h3, h3)));
  };

  // Reject nets whose relu pre-activations sit near the kink.
  *valid = true;
  if (act1 == 1 || act2 == 1) {
    TensorPtr h1 = ops::add(nullptr, ops::matmul(nullptr, x, w1), b1);
    if (act1 == 1) {
      for (double v : h1->data) {
        if (std::abs(v) < 1e-3) *valid = false;
      }
    }
    TensorPtr h1a = act1 == 0 ? ops::tanh(nullptr, h1) : ops::relu(nullptr, h1);
    TensorPtr h2 = ops::matmul(nullptr, h1a, w2);
    if (act2 == 1) {
      for (double v : h2->data) {
        if (std::abs(v) < 1e-3) *valid = false;
      }
    }
  }
  return net;
}

/// Central difference d loss / d params[t][j] at step h.
inline double central_difference(const RandomNet& net, std::size_t tensor_idx, std::size_t j,
                                 double h) {
  double& slot = net.params[tensor_idx]->data[j];
  const double original = slot;
  slot = original + h;
  const double up = net.forward(nullptr)->data[0];
  slot = original - h;
  const double down = net.forward(nullptr)->data[0];
  slot = original;
  return (up - down) / (2.0 * h);
}

/// Max relative error between backward gradients and central differences
/// over `samples` randomly chosen coordinates.
inline double max_grad_rel_error(const RandomNet& net, Rng& rng, int samples, double h) {
  Tape tape;
  TensorPtr loss = net.forward(&tape);
  tape.backward(loss);
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const std::size_t t = rng.below(static_cast<std::uint32_t>(net.params.size()));
    const std::size_t j =
        rng.below(static_cast<std::uint32_t>(net.params[t]->size()));
    const double ad = (*net.params[t]->grad)[j];
    const double fd = central_difference(net, t, j, h);
    const double rel = std::abs(ad - fd) / std::max(std::abs(fd), 1e-5);
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace mozolab::testing
