#include "samm2d/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "samm2d/kernels.hpp"
#include "samm2d/kernels_ref.hpp"

namespace samm2d {

namespace {

std::atomic<uint64_t> g_seq{1};
thread_local bool t_grad_enabled = true;

size_t shape_count(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("tensor: negative dimension");
    n *= (size_t)d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

detail::NodePtr new_leaf(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  size_t n = shape_count(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<float>(n, 0.0f), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
  size_t n = shape_count(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<float>(n, value), requires_grad));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
  if (shape_count(shape) != data.size())
    throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  return Tensor(new_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return Tensor(new_leaf({1}, {value}, requires_grad));
}

const std::vector<float>& Tensor::grad() const {
  if (!has_grad()) throw NumericError("tensor: gradient not populated; run backward() first");
  return node_->grad;
}

float Tensor::item() const {
  if (size() != 1) throw ShapeError("item(): tensor has " + std::to_string(size()) + " elements");
  return node_->value[0];
}

void Tensor::backward() const {
  if (!node_) throw ShapeError("backward: undefined tensor");
  if (size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(node_->shape));

  // Collect reachable tracked nodes (iterative DFS over recorded parents).
  std::vector<detail::Node*> reachable;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    detail::Node* cur = stack.back();
    stack.pop_back();
    reachable.push_back(cur);
    for (auto& p : cur->parents)
      if (seen.insert(p.get()).second) stack.push_back(p.get());
  }

  // Reverse creation order is a reverse topological order.
  std::sort(reachable.begin(), reachable.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  // Reset-then-accumulate policy.
  for (detail::Node* n : reachable) {
    n->ensure_grad();
    std::fill(n->grad.begin(), n->grad.end(), 0.0f);
  }
  node_->grad[0] = 1.0f;

  for (detail::Node* n : reachable)
    if (n->backward_fn) n->backward_fn(*n);
}

namespace detail {

void check_finite(const char* op, const std::vector<float>& values) {
  for (float v : values)
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite value produced");
}

Tensor make_op(std::vector<int> shape, std::vector<float> value, std::vector<NodePtr> inputs,
               std::function<void(Node&)> backward_fn, const char* op_name) {
  check_finite(op_name, value);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  if (t_grad_enabled) {
    bool any_tracked = false;
    for (auto& in : inputs)
      if (in->tracked()) {
        any_tracked = true;
        n->parents.push_back(in);
      }
    if (any_tracked) n->backward_fn = std::move(backward_fn);
  }
  return Tensor(n);
}

}  // namespace detail

// ---- primitives -----------------------------------------------------------

namespace {

// Gradient accumulation helper: adds `piece` into the parent's grad buffer.
void accum(detail::Node& parent, const std::vector<float>& piece) {
  parent.ensure_grad();
  for (size_t i = 0; i < piece.size(); ++i) parent.grad[i] += piece[i];
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
  require(input.ndim() == 4, "conv2d: input must be NCHW, got " + std::to_string(input.ndim()) + "d");
  require(kernel.ndim() == 4, "conv2d: kernel must be OIKK");
  require(bias.ndim() == 1, "conv2d: bias must be 1d");
  const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = kernel.dim(0), K = kernel.dim(2);
  require(kernel.dim(2) == kernel.dim(3), "conv2d: kernel must be square");
  require(kernel.dim(1) == Cin, "conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                    " input channels, input has " + std::to_string(Cin));
  require(bias.dim(0) == Cout, "conv2d: bias size mismatch");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(padding >= 0, "conv2d: padding must be >= 0");
  const int OH = ref::conv_out_dim(H, K, stride, padding);
  const int OW = ref::conv_out_dim(W, K, stride, padding);
  require(OH >= 1 && OW >= 1, "conv2d: kernel larger than padded input");

  std::vector<float> out((size_t)N * Cout * OH * OW);
  kernels::conv2d_forward(input.values().data(), kernel.values().data(), bias.values().data(),
                          out.data(), N, Cin, H, W, Cout, K, stride, padding);

  auto in_n = input.node(), k_n = kernel.node(), b_n = bias.node();
  auto bw = [in_n, k_n, b_n, N, Cin, H, W, Cout, K, OH, OW, stride, padding](detail::Node& self) {
    if (in_n->tracked()) {
      std::vector<float> gi((size_t)N * Cin * H * W);
      kernels::conv2d_backward_input(self.grad.data(), k_n->value.data(), gi.data(),
                                     N, Cin, H, W, Cout, K, stride, padding);
      accum(*in_n, gi);
    }
    if (k_n->tracked()) {
      std::vector<float> gk((size_t)Cout * Cin * K * K);
      kernels::conv2d_backward_kernel(self.grad.data(), in_n->value.data(), gk.data(),
                                      N, Cin, H, W, Cout, K, stride, padding);
      accum(*k_n, gk);
    }
    if (b_n->tracked()) {
      std::vector<float> gb((size_t)Cout);
      kernels::conv2d_backward_bias(self.grad.data(), gb.data(), N, Cout, OH, OW);
      accum(*b_n, gb);
    }
  };
  return detail::make_op({N, Cout, OH, OW}, std::move(out), {in_n, k_n, b_n}, std::move(bw),
                         "conv2d");
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.size());
  kernels::relu_forward(x.values().data(), out.data(), x.size());
  auto x_n = x.node();
  auto bw = [x_n](detail::Node& self) {
    std::vector<float> gi(self.grad.size());
    kernels::relu_backward(self.grad.data(), x_n->value.data(), gi.data(), gi.size());
    accum(*x_n, gi);
  };
  return detail::make_op(x.shape(), std::move(out), {x_n}, std::move(bw), "relu");
}

Tensor sigmoid(const Tensor& x) {
  std::vector<float> out(x.size());
  kernels::sigmoid_forward(x.values().data(), out.data(), x.size());
  auto x_n = x.node();
  auto bw = [x_n](detail::Node& self) {
    std::vector<float> gi(self.grad.size());
    kernels::sigmoid_backward(self.grad.data(), self.value.data(), gi.data(), gi.size());
    accum(*x_n, gi);
  };
  return detail::make_op(x.shape(), std::move(out), {x_n}, std::move(bw), "sigmoid");
}

Tensor maxpool2d(const Tensor& x, int window, int stride) {
  require(x.ndim() == 4, "maxpool2d: input must be NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(window >= 1 && stride >= 1, "maxpool2d: window and stride must be >= 1");
  require(window <= H && window <= W,
          "maxpool2d: window " + std::to_string(window) + " larger than input " +
              std::to_string(H) + "x" + std::to_string(W));
  const int OH = ref::pool_out_dim(H, window, stride);
  const int OW = ref::pool_out_dim(W, window, stride);

  std::vector<float> out((size_t)N * C * OH * OW);
  auto argmax = std::make_shared<std::vector<int64_t>>((size_t)N * C * OH * OW);
  kernels::maxpool2d_forward(x.values().data(), out.data(), argmax->data(), N, C, H, W, window,
                             stride);
  auto x_n = x.node();
  auto bw = [x_n, argmax, N, C, H, W, window, stride](detail::Node& self) {
    std::vector<float> gi(x_n->value.size());
    kernels::maxpool2d_backward(self.grad.data(), argmax->data(), gi.data(), N, C, H, W, window,
                                stride);
    accum(*x_n, gi);
  };
  return detail::make_op({N, C, OH, OW}, std::move(out), {x_n}, std::move(bw), "maxpool2d");
}

Tensor adaptive_avg_pool_grid(const Tensor& x, int grid) {
  require(x.ndim() == 4, "adaptive_avg_pool_grid: input must be NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(grid >= 1, "adaptive_avg_pool_grid: grid must be >= 1");
  require(grid <= H && grid <= W, "adaptive_avg_pool_grid: grid " + std::to_string(grid) +
                                      " exceeds spatial dims " + std::to_string(H) + "x" +
                                      std::to_string(W));
  std::vector<float> out((size_t)N * C * grid * grid);
  kernels::avgpool_grid_forward(x.values().data(), out.data(), N, C, H, W, grid);
  auto x_n = x.node();
  auto bw = [x_n, N, C, H, W, grid](detail::Node& self) {
    std::vector<float> gi(x_n->value.size());
    kernels::avgpool_grid_backward(self.grad.data(), gi.data(), N, C, H, W, grid);
    accum(*x_n, gi);
  };
  return detail::make_op({N, C, grid, grid}, std::move(out), {x_n}, std::move(bw),
                         "adaptive_avg_pool_grid");
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.ndim() == 2, "linear: input must be [N,D]");
  require(weight.ndim() == 2, "linear: weight must be [D,M]");
  require(bias.ndim() == 1, "linear: bias must be [M]");
  const int N = input.dim(0), D = input.dim(1), M = weight.dim(1);
  require(weight.dim(0) == D, "linear: input feature dim " + std::to_string(D) +
                                  " != weight rows " + std::to_string(weight.dim(0)));
  require(bias.dim(0) == M, "linear: bias size mismatch");

  std::vector<float> out((size_t)N * M);
  kernels::linear_forward(input.values().data(), weight.values().data(), bias.values().data(),
                          out.data(), N, D, M);
  auto in_n = input.node(), w_n = weight.node(), b_n = bias.node();
  auto bw = [in_n, w_n, b_n, N, D, M](detail::Node& self) {
    if (in_n->tracked()) {
      std::vector<float> gi((size_t)N * D);
      kernels::linear_backward_input(self.grad.data(), w_n->value.data(), gi.data(), N, D, M);
      accum(*in_n, gi);
    }
    if (w_n->tracked()) {
      std::vector<float> gw((size_t)D * M);
      kernels::linear_backward_weight(self.grad.data(), in_n->value.data(), gw.data(), N, D, M);
      accum(*w_n, gw);
    }
    if (b_n->tracked()) {
      std::vector<float> gb((size_t)M);
      kernels::linear_backward_bias(self.grad.data(), gb.data(), N, M);
      accum(*b_n, gb);
    }
  };
  return detail::make_op({N, M}, std::move(out), {in_n, w_n, b_n}, std::move(bw), "linear");
}

Tensor concat(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2, "concat: inputs must be [N,D]");
  require(a.dim(0) == b.dim(0), "concat: leading dims differ, " + std::to_string(a.dim(0)) +
                                    " vs " + std::to_string(b.dim(0)));
  const int N = a.dim(0), D1 = a.dim(1), D2 = b.dim(1);
  std::vector<float> out((size_t)N * (D1 + D2));
  for (int n = 0; n < N; ++n) {
    std::copy_n(a.values().data() + (size_t)n * D1, D1, out.data() + (size_t)n * (D1 + D2));
    std::copy_n(b.values().data() + (size_t)n * D2, D2, out.data() + (size_t)n * (D1 + D2) + D1);
  }
  auto a_n = a.node(), b_n = b.node();
  auto bw = [a_n, b_n, N, D1, D2](detail::Node& self) {
    if (a_n->tracked()) {
      a_n->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int d = 0; d < D1; ++d)
          a_n->grad[(size_t)n * D1 + d] += self.grad[(size_t)n * (D1 + D2) + d];
    }
    if (b_n->tracked()) {
      b_n->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int d = 0; d < D2; ++d)
          b_n->grad[(size_t)n * D2 + d] += self.grad[(size_t)n * (D1 + D2) + D1 + d];
    }
  };
  return detail::make_op({N, D1 + D2}, std::move(out), {a_n, b_n}, std::move(bw), "concat");
}

Tensor dropout(const Tensor& x, float rate, bool train, Rng& rng) {
  if (rate < 0.0f || rate >= 1.0f)
    throw ShapeError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (!train || rate == 0.0f) {
    // Identity, but still a node so gradients flow.
    auto x_n = x.node();
    auto bw = [x_n](detail::Node& self) { accum(*x_n, self.grad); };
    return detail::make_op(x.shape(), x.values(), {x_n}, std::move(bw), "dropout");
  }
  const float scale = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<float>>(x.size());
  for (auto& m : *mask) m = rng.next_double() < rate ? 0.0f : scale;
  std::vector<float> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * (*mask)[i];
  auto x_n = x.node();
  auto bw = [x_n, mask](detail::Node& self) {
    x_n->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) x_n->grad[i] += self.grad[i] * (*mask)[i];
  };
  return detail::make_op(x.shape(), std::move(out), {x_n}, std::move(bw), "dropout");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch");
  std::vector<float> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto a_n = a.node(), b_n = b.node();
  auto bw = [a_n, b_n](detail::Node& self) {
    if (a_n->tracked()) accum(*a_n, self.grad);
    if (b_n->tracked()) accum(*b_n, self.grad);
  };
  return detail::make_op(a.shape(), std::move(out), {a_n, b_n}, std::move(bw), "add");
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
  size_t n = 1;
  for (int d : new_shape) n *= (size_t)d;
  require(n == x.size(), "reshape: element count mismatch");
  auto x_n = x.node();
  auto bw = [x_n](detail::Node& self) { accum(*x_n, self.grad); };
  return detail::make_op(std::move(new_shape), x.values(), {x_n}, std::move(bw), "reshape");
}

Tensor replicate_channels(const Tensor& x, int times) {
  require(x.ndim() == 4, "replicate_channels: input must be NCHW");
  require(times >= 1, "replicate_channels: times must be >= 1");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const size_t plane = (size_t)C * H * W;
  std::vector<float> out((size_t)N * times * plane);
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < times; ++t)
      std::copy_n(x.values().data() + n * plane, plane,
                  out.data() + ((size_t)n * times + t) * plane);
  auto x_n = x.node();
  auto bw = [x_n, N, times, plane](detail::Node& self) {
    x_n->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int t = 0; t < times; ++t)
        for (size_t p = 0; p < plane; ++p)
          x_n->grad[n * plane + p] += self.grad[((size_t)n * times + t) * plane + p];
  };
  return detail::make_op({N, C * times, H, W}, std::move(out), {x_n}, std::move(bw),
                         "replicate_channels");
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += (double)v;
  auto x_n = x.node();
  auto bw = [x_n](detail::Node& self) {
    x_n->ensure_grad();
    for (auto& g : x_n->grad) g += self.grad[0];
  };
  return detail::make_op({1}, {(float)acc}, {x_n}, std::move(bw), "sum_all");
}

Tensor mean_all(const Tensor& x) {
  require(x.size() > 0, "mean_all: empty tensor");
  double acc = 0.0;
  for (float v : x.values()) acc += (double)v;
  const float inv = 1.0f / (float)x.size();
  auto x_n = x.node();
  auto bw = [x_n, inv](detail::Node& self) {
    x_n->ensure_grad();
    for (auto& g : x_n->grad) g += self.grad[0] * inv;
  };
  return detail::make_op({1}, {(float)(acc / x.size())}, {x_n}, std::move(bw), "mean_all");
}

FiniteDiffReport finite_diff_check(const std::function<double()>& f, std::span<Tensor> params,
                                   double h) {
  if (h <= 0.0) throw NumericError("finite_diff_check: h must be > 0");
  FiniteDiffReport report;
  for (int pi = 0; pi < (int)params.size(); ++pi) {
    Tensor& p = params[pi];
    const std::vector<float>& analytic = p.grad();
    std::vector<float>& vals = p.values_mut();
    for (int e = 0; e < (int)vals.size(); ++e) {
      const float saved = vals[e];
      // Parameters are f32, so the nominal step quantizes; divide by the
      // realized step instead of 2h.
      vals[e] = (float)((double)saved + h);
      const double p_plus = (double)vals[e];
      const double f_plus = f();
      vals[e] = (float)((double)saved - h);
      const double p_minus = (double)vals[e];
      const double f_minus = f();
      vals[e] = saved;
      const double numeric = (f_plus - f_minus) / (p_plus - p_minus);
      const double a = (double)analytic[e];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = pi;
        report.worst_elem = e;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace samm2d
