#pragma once

// Serial reference kernels: direct nested-loop implementations, templated on
// the scalar type. These are the ground truth the OpenMP kernels are tested
// against, and the double instantiation is what the finite-difference harness
// evaluates to keep precision noise out of gradient checks. No parallelism,
// no tricks -- keep these boring.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace samm2d::ref {

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline int pool_out_dim(int in, int window, int stride) {
  return (in - window) / stride + 1;
}

// input [N,Cin,H,W], kernel [Cout,Cin,K,K], bias [Cout] -> out [N,Cout,OH,OW]
template <typename T>
void conv2d_forward(const T* input, const T* kernel, const T* bias, T* out,
                    int N, int Cin, int H, int W, int Cout, int K, int stride, int pad) {
  const int OH = conv_out_dim(H, K, stride, pad);
  const int OW = conv_out_dim(W, K, stride, pad);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Cout; ++o)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          T acc = bias ? bias[o] : T(0);
          for (int i = 0; i < Cin; ++i)
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw) {
                const int h = oh * stride - pad + kh;
                const int w = ow * stride - pad + kw;
                if (h < 0 || h >= H || w < 0 || w >= W) continue;
                acc += input[((size_t)(n * Cin + i) * H + h) * W + w] *
                       kernel[((size_t)(o * Cin + i) * K + kh) * K + kw];
              }
          out[((size_t)(n * Cout + o) * OH + oh) * OW + ow] = acc;
        }
}

template <typename T>
void conv2d_backward_input(const T* grad_out, const T* kernel, T* grad_in,
                           int N, int Cin, int H, int W, int Cout, int K, int stride, int pad) {
  const int OH = conv_out_dim(H, K, stride, pad);
  const int OW = conv_out_dim(W, K, stride, pad);
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < Cin; ++i)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          T acc = T(0);
          for (int o = 0; o < Cout; ++o)
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw) {
                const int num_h = h + pad - kh;
                const int num_w = w + pad - kw;
                if (num_h % stride != 0 || num_w % stride != 0) continue;
                const int oh = num_h / stride;
                const int ow = num_w / stride;
                if (oh < 0 || oh >= OH || ow < 0 || ow >= OW) continue;
                acc += grad_out[((size_t)(n * Cout + o) * OH + oh) * OW + ow] *
                       kernel[((size_t)(o * Cin + i) * K + kh) * K + kw];
              }
          grad_in[((size_t)(n * Cin + i) * H + h) * W + w] = acc;
        }
}

template <typename T>
void conv2d_backward_kernel(const T* grad_out, const T* input, T* grad_kernel,
                            int N, int Cin, int H, int W, int Cout, int K, int stride, int pad) {
  const int OH = conv_out_dim(H, K, stride, pad);
  const int OW = conv_out_dim(W, K, stride, pad);
  for (int o = 0; o < Cout; ++o)
    for (int i = 0; i < Cin; ++i)
      for (int kh = 0; kh < K; ++kh)
        for (int kw = 0; kw < K; ++kw) {
          T acc = T(0);
          for (int n = 0; n < N; ++n)
            for (int oh = 0; oh < OH; ++oh)
              for (int ow = 0; ow < OW; ++ow) {
                const int h = oh * stride - pad + kh;
                const int w = ow * stride - pad + kw;
                if (h < 0 || h >= H || w < 0 || w >= W) continue;
                acc += grad_out[((size_t)(n * Cout + o) * OH + oh) * OW + ow] *
                       input[((size_t)(n * Cin + i) * H + h) * W + w];
              }
          grad_kernel[((size_t)(o * Cin + i) * K + kh) * K + kw] = acc;
        }
}

template <typename T>
void conv2d_backward_bias(const T* grad_out, T* grad_bias, int N, int Cout, int OH, int OW) {
  for (int o = 0; o < Cout; ++o) {
    T acc = T(0);
    for (int n = 0; n < N; ++n)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow)
          acc += grad_out[((size_t)(n * Cout + o) * OH + oh) * OW + ow];
    grad_bias[o] = acc;
  }
}

// out [N,C,OH,OW]; argmax (optional) records the flat input offset of the
// winning element, first occurrence in scan order on ties.
template <typename T>
void maxpool2d_forward(const T* input, T* out, int64_t* argmax,
                       int N, int C, int H, int W, int window, int stride) {
  const int OH = pool_out_dim(H, window, stride);
  const int OW = pool_out_dim(W, window, stride);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          T best{};
          int64_t best_idx = -1;
          for (int kh = 0; kh < window; ++kh)
            for (int kw = 0; kw < window; ++kw) {
              const int h = oh * stride + kh;
              const int w = ow * stride + kw;
              const int64_t idx = ((int64_t)(n * C + c) * H + h) * W + w;
              if (best_idx < 0 || input[idx] > best) {
                best = input[idx];
                best_idx = idx;
              }
            }
          const size_t oidx = ((size_t)(n * C + c) * OH + oh) * OW + ow;
          out[oidx] = best;
          if (argmax) argmax[oidx] = best_idx;
        }
}

template <typename T>
void maxpool2d_backward(const T* grad_out, const int64_t* argmax, T* grad_in,
                        size_t in_count, size_t out_count) {
  std::fill(grad_in, grad_in + in_count, T(0));
  for (size_t i = 0; i < out_count; ++i) grad_in[argmax[i]] += grad_out[i];
}

// Bin i spans [floor(i*H/g), floor((i+1)*H/g)) per axis.
template <typename T>
void avgpool_grid_forward(const T* input, T* out, int N, int C, int H, int W, int g) {
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
          const int h0 = gy * H / g, h1 = (gy + 1) * H / g;
          const int w0 = gx * W / g, w1 = (gx + 1) * W / g;
          T acc = T(0);
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w)
              acc += input[((size_t)(n * C + c) * H + h) * W + w];
          out[((size_t)(n * C + c) * g + gy) * g + gx] = acc / T((h1 - h0) * (w1 - w0));
        }
}

template <typename T>
void avgpool_grid_backward(const T* grad_out, T* grad_in, int N, int C, int H, int W, int g) {
  std::fill(grad_in, grad_in + (size_t)N * C * H * W, T(0));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
          const int h0 = gy * H / g, h1 = (gy + 1) * H / g;
          const int w0 = gx * W / g, w1 = (gx + 1) * W / g;
          const T share = grad_out[((size_t)(n * C + c) * g + gy) * g + gx] /
                          T((h1 - h0) * (w1 - w0));
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w)
              grad_in[((size_t)(n * C + c) * H + h) * W + w] += share;
        }
}

// input [N,D], weight [D,M], bias [M] -> out [N,M]
template <typename T>
void linear_forward(const T* input, const T* weight, const T* bias, T* out,
                    int N, int D, int M) {
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m) {
      T acc = bias ? bias[m] : T(0);
      for (int d = 0; d < D; ++d) acc += input[(size_t)n * D + d] * weight[(size_t)d * M + m];
      out[(size_t)n * M + m] = acc;
    }
}

template <typename T>
void linear_backward(const T* grad_out, const T* input, const T* weight,
                     T* grad_in, T* grad_weight, T* grad_bias, int N, int D, int M) {
  if (grad_in)
    for (int n = 0; n < N; ++n)
      for (int d = 0; d < D; ++d) {
        T acc = T(0);
        for (int m = 0; m < M; ++m) acc += grad_out[(size_t)n * M + m] * weight[(size_t)d * M + m];
        grad_in[(size_t)n * D + d] = acc;
      }
  if (grad_weight)
    for (int d = 0; d < D; ++d)
      for (int m = 0; m < M; ++m) {
        T acc = T(0);
        for (int n = 0; n < N; ++n) acc += input[(size_t)n * D + d] * grad_out[(size_t)n * M + m];
        grad_weight[(size_t)d * M + m] = acc;
      }
  if (grad_bias)
    for (int m = 0; m < M; ++m) {
      T acc = T(0);
      for (int n = 0; n < N; ++n) acc += grad_out[(size_t)n * M + m];
      grad_bias[m] = acc;
    }
}

template <typename T>
void relu_forward(const T* input, T* out, size_t count) {
  for (size_t i = 0; i < count; ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
}

// Numerically stable two-branch form.
template <typename T>
void sigmoid_forward(const T* input, T* out, size_t count) {
  for (size_t i = 0; i < count; ++i) {
    const T x = input[i];
    if (x >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      out[i] = e / (T(1) + e);
    }
  }
}

}  // namespace samm2d::ref
