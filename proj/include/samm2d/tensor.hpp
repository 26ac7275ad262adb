#pragma once

// Dense row-major f32 tensor with reverse-mode autodiff. Define-by-run: each
// primitive records its inputs and a backward closure on the output node, so
// the graph is rebuilt on every forward pass. backward() walks the recorded
// nodes in reverse creation order (a valid reverse topological order, since
// an output is always created after its inputs), resets reachable gradients,
// then accumulates -- calling backward() twice on the same loss yields the
// same gradients, not doubled ones.
//
// Gradients are propagated into every recorded intermediate, not just leaf
// parameters; saliency mapping reads them off stage activations.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "samm2d/errors.hpp"
#include "samm2d/rng.hpp"

namespace samm2d {

namespace detail {

struct Node {
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;  // sized lazily by backward()
  bool requires_grad = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;  // tracked parents only
  std::function<void(Node&)> backward_fn;

  size_t count() const { return value.size(); }
  bool tracked() const { return requires_grad || backward_fn != nullptr; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int ndim() const { return (int)node_->shape.size(); }
  int dim(int i) const { return node_->shape[(size_t)i]; }
  size_t size() const { return node_->value.size(); }

  const std::vector<float>& values() const { return node_->value; }
  // Mutable access is for leaf tensors (parameter updates, input staging);
  // mutating an interior node between forward and backward is undefined.
  std::vector<float>& values_mut() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const std::vector<float>& grad() const;
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0f); }

  float item() const;

  // Reverse-mode sweep from a scalar (size-1) tensor.
  void backward() const;

  detail::NodePtr node() const { return node_; }
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

 private:
  detail::NodePtr node_;
};

// While alive on a thread, primitives skip graph recording (pure inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

namespace detail {
// Factory used by modules that define their own primitives (e.g. the loss):
// wraps a computed value into a node, recording parents/backward only when
// grad mode is on and at least one parent is tracked.
Tensor make_op(std::vector<int> shape, std::vector<float> value,
               std::vector<NodePtr> inputs, std::function<void(Node&)> backward_fn,
               const char* op_name);
// Throws NumericError naming `op` if any value is non-finite.
void check_finite(const char* op, const std::vector<float>& values);
}  // namespace detail

// ---- primitives -----------------------------------------------------------

// input [N,Cin,H,W] * kernel [Cout,Cin,K,K] + bias [Cout] -> [N,Cout,OH,OW]
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor maxpool2d(const Tensor& x, int window, int stride);
Tensor adaptive_avg_pool_grid(const Tensor& x, int grid);
// input [N,D] * weight [D,M] + bias [M] -> [N,M]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
// [N,D1] ++ [N,D2] -> [N,D1+D2]
Tensor concat(const Tensor& a, const Tensor& b);
// Inverted dropout: train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); eval mode is the bit-exact identity.
Tensor dropout(const Tensor& x, float rate, bool train, Rng& rng);
Tensor add(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, std::vector<int> new_shape);
// [N,C,H,W] -> [N,C*times,H,W], channel-axis tiling (grayscale -> RGB).
Tensor replicate_channels(const Tensor& x, int times);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- gradient checking ----------------------------------------------------

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  int worst_param = -1;     // index into the params span
  int worst_elem = -1;      // flat element index within that parameter
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central-difference check of the analytic gradients already stored on
// `params` (caller runs forward+backward first). `f` re-evaluates the
// objective after each in-place perturbation; difference quotients are formed
// in f64. Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
FiniteDiffReport finite_diff_check(const std::function<double()>& f,
                                   std::span<Tensor> params, double h);

}  // namespace samm2d
