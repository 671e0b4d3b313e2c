// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace mozolab {

/// Dense 64-bit tensor. Scalars have an empty shape and one data element.
///
/// `requires_grad` is user-set on leaves and propagated ("any input requires
/// grad") on op outputs. `leaf` distinguishes tensors created directly
/// (parameters, inputs, constants) from op results; only non-leaf values
/// count toward saved-activation accounting when a backward pass needs them.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  std::optional<std::vector<double>> grad;

  std::size_t size() const { return data.size(); }

  void accumulate_grad(std::span<const double> g);
  void clear_grad() { grad.reset(); }
};

using TensorPtr = std::shared_ptr<Tensor>;

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data,
                      bool requires_grad = false);
TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
TensorPtr full(std::vector<int> shape, double value, bool requires_grad = false);
TensorPtr scalar(double value);

class Rng;
/// I.i.d. standard-normal tensor drawn from `rng`; requires_grad = false.
TensorPtr gaussian_probe(Rng& rng, std::vector<int> shape);

/// Records the primitives of a forward computation so the loss can be
/// differentiated by replaying them in strict reverse order. Saved
/// activations are the only per-node payload; `float_count()` is the exact
/// number of activation scalars retained for backward, with leaf tensors
/// (parameters, inputs, constants) referenced for free.
class Tape {
 public:
  /// Either an owned copy of activation data (counted) or a pointer to a
  /// leaf tensor's storage (not counted).
  class Saved {
   public:
    Saved() = default;
    const std::vector<double>& values() const {
      return owned_ ? *owned_ : *ref_;
    }

   private:
    friend class Tape;
    std::shared_ptr<const std::vector<double>> owned_;
    const std::vector<double>* ref_ = nullptr;
  };

  using BackwardFn = std::function<void(const std::vector<double>& out_grad)>;

  /// Copies `t`'s data if it is an op result (counted into float_count);
  /// returns a zero-cost reference if `t` is a leaf.
  Saved save(const TensorPtr& t);

  /// Saves a raw buffer produced by the forward pass (always counted).
  Saved save_values(std::vector<double> values);

  void record(const TensorPtr& output, std::vector<TensorPtr> inputs,
              BackwardFn backward);

  std::size_t float_count() const { return float_count_; }
  std::size_t node_count() const { return nodes_.size(); }
  bool produced(const Tensor* t) const { return outputs_.count(t) > 0; }

  /// Reverse pass from a scalar loss recorded on this tape. Every
  /// requires_grad tensor reachable from the loss receives d(loss)/d(t).
  void backward(const TensorPtr& loss);

  void clear();

 private:
  struct Node {
    TensorPtr output;
    std::vector<TensorPtr> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const Tensor*> outputs_;
  std::size_t float_count_ = 0;
};

// Graph primitives. A null tape means "do not record"; recording also
// requires the output to be grad-connected. Shape errors name the
// primitive and both operand shapes.
namespace ops {

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
/// a[m,k] x b[n,k]^T -> [m,n]; matmul with the second operand transposed.
TensorPtr matmul_nt(Tape* tape, const TensorPtr& a, const TensorPtr& b);
/// Elementwise; b may also be a scalar or a row vector broadcast over the
/// leading batch axis of a.
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr relu(Tape* tape, const TensorPtr& x);
TensorPtr tanh(Tape* tape, const TensorPtr& x);
/// Softmax over the last axis (rank 1 or 2).
TensorPtr softmax(Tape* tape, const TensorPtr& x);
TensorPtr log(Tape* tape, const TensorPtr& x);
TensorPtr sum(Tape* tape, const TensorPtr& x);
TensorPtr mean(Tape* tape, const TensorPtr& x);
/// Unit-L2 rows (rank 2) or whole vector (rank 1).
TensorPtr l2_normalize(Tape* tape, const TensorPtr& x);

}  // namespace ops

}  // namespace mozolab
