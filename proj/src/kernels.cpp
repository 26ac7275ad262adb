#include "samm2d/kernels.hpp"

#include <cmath>

#include "samm2d/kernels_ref.hpp"

namespace samm2d::kernels {

using ref::conv_out_dim;
using ref::pool_out_dim;

void conv2d_forward(const float* input, const float* kernel, const float* bias, float* out,
                    int N, int Cin, int H, int W, int Cout, int K, int stride, int pad) {
  const int OH = conv_out_dim(H, K, stride, pad);
  const int OW = conv_out_dim(W, K, stride, pad);
  const int64_t rows = (int64_t)N * Cout * OH;
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < rows; ++row) {
    const int oh = (int)(row % OH);
    const int o = (int)((row / OH) % Cout);
    const int n = (int)(row / ((int64_t)OH * Cout));
    for (int ow = 0; ow < OW; ++ow) {
      double acc = bias ? (double)bias[o] : 0.0;
      for (int i = 0; i < Cin; ++i) {
        const float* in_plane = input + (size_t)(n * Cin + i) * H * W;
        const float* ker = kernel + (size_t)(o * Cin + i) * K * K;
        for (int kh = 0; kh < K; ++kh) {
          const int h = oh * stride - pad + kh;
          if (h < 0 || h >= H) continue;
          for (int kw = 0; kw < K; ++kw) {
            const int w = ow * stride - pad + kw;
            if (w < 0 || w >= W) continue;
            acc += (double)in_plane[(size_t)h * W + w] * (double)ker[kh * K + kw];
          }
        }
      }
      out[((size_t)(n * Cout + o) * OH + oh) * OW + ow] = (float)acc;
    }
  }
}

void conv2d_backward_input(const float* grad_out, const float* kernel, float* grad_in,
                           int N, int Cin, int H, int W, int Cout, int K, int stride, int pad) {
  const int OH = conv_out_dim(H, K, stride, pad);
  const int OW = conv_out_dim(W, K, stride, pad);
  const int64_t rows = (int64_t)N * Cin * H;
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < rows; ++row) {
    const int h = (int)(row % H);
    const int i = (int)((row / H) % Cin);
    const int n = (int)(row / ((int64_t)H * Cin));
    for (int w = 0; w < W; ++w) {
      double acc = 0.0;
      for (int o = 0; o < Cout; ++o) {
        const float* go_plane = grad_out + (size_t)(n * Cout + o) * OH * OW;
        const float* ker = kernel + (size_t)(o * Cin + i) * K * K;
        for (int kh = 0; kh < K; ++kh) {
          const int num_h = h + pad - kh;
          if (num_h % stride != 0) continue;
          const int oh = num_h / stride;
          if (oh < 0 || oh >= OH) continue;
          for (int kw = 0; kw < K; ++kw) {
            const int num_w = w + pad - kw;
            if (num_w % stride != 0) continue;
            const int ow = num_w / stride;
            if (ow < 0 || ow >= OW) continue;
            acc += (double)go_plane[(size_t)oh * OW + ow] * (double)ker[kh * K + kw];
          }
        }
      }
      grad_in[((size_t)(n * Cin + i) * H + h) * W + w] = (float)acc;
    }
  }
}

void conv2d_backward_kernel(const float* grad_out, const float* input, float* grad_kernel,
                            int N, int Cin, int H, int W, int Cout, int K, int stride, int pad) {
  const int OH = conv_out_dim(H, K, stride, pad);
  const int OW = conv_out_dim(W, K, stride, pad);
  const int64_t cells = (int64_t)Cout * Cin * K * K;
#pragma omp parallel for schedule(static)
  for (int64_t cell = 0; cell < cells; ++cell) {
    const int kw = (int)(cell % K);
    const int kh = (int)((cell / K) % K);
    const int i = (int)((cell / ((int64_t)K * K)) % Cin);
    const int o = (int)(cell / ((int64_t)K * K * Cin));
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const float* go_plane = grad_out + (size_t)(n * Cout + o) * OH * OW;
      const float* in_plane = input + (size_t)(n * Cin + i) * H * W;
      for (int oh = 0; oh < OH; ++oh) {
        const int h = oh * stride - pad + kh;
        if (h < 0 || h >= H) continue;
        for (int ow = 0; ow < OW; ++ow) {
          const int w = ow * stride - pad + kw;
          if (w < 0 || w >= W) continue;
          acc += (double)go_plane[(size_t)oh * OW + ow] * (double)in_plane[(size_t)h * W + w];
        }
      }
    }
    grad_kernel[cell] = (float)acc;
  }
}

void conv2d_backward_bias(const float* grad_out, float* grad_bias, int N, int Cout, int OH, int OW) {
#pragma omp parallel for schedule(static)
  for (int o = 0; o < Cout; ++o) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const float* go_plane = grad_out + (size_t)(n * Cout + o) * OH * OW;
      for (int p = 0; p < OH * OW; ++p) acc += (double)go_plane[p];
    }
    grad_bias[o] = (float)acc;
  }
}

void maxpool2d_forward(const float* input, float* out, int64_t* argmax,
                       int N, int C, int H, int W, int window, int stride) {
  const int OH = pool_out_dim(H, window, stride);
  const int OW = pool_out_dim(W, window, stride);
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < N * C; ++plane) {
    const float* in_plane = input + (size_t)plane * H * W;
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        float best = 0.0f;
        int best_local = -1;
        for (int kh = 0; kh < window; ++kh)
          for (int kw = 0; kw < window; ++kw) {
            const int h = oh * stride + kh;
            const int w = ow * stride + kw;
            const int local = h * W + w;
            if (best_local < 0 || in_plane[local] > best) {
              best = in_plane[local];
              best_local = local;
            }
          }
        const size_t oidx = ((size_t)plane * OH + oh) * OW + ow;
        out[oidx] = best;
        if (argmax) argmax[oidx] = (int64_t)plane * H * W + best_local;
      }
  }
}

void maxpool2d_backward(const float* grad_out, const int64_t* argmax, float* grad_in,
                        int N, int C, int H, int W, int window, int stride) {
  const int OH = pool_out_dim(H, window, stride);
  const int OW = pool_out_dim(W, window, stride);
  // Argmax offsets stay inside their own (n,c) plane, so per-plane scatter
  // never collides across threads.
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < N * C; ++plane) {
    float* gi = grad_in + (size_t)plane * H * W;
    for (int p = 0; p < H * W; ++p) gi[p] = 0.0f;
    const size_t base = (size_t)plane * OH * OW;
    for (size_t p = 0; p < (size_t)OH * OW; ++p)
      grad_in[argmax[base + p]] += grad_out[base + p];
  }
}

void avgpool_grid_forward(const float* input, float* out, int N, int C, int H, int W, int g) {
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < N * C; ++plane) {
    const float* in_plane = input + (size_t)plane * H * W;
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx) {
        const int h0 = gy * H / g, h1 = (gy + 1) * H / g;
        const int w0 = gx * W / g, w1 = (gx + 1) * W / g;
        double acc = 0.0;
        for (int h = h0; h < h1; ++h)
          for (int w = w0; w < w1; ++w) acc += (double)in_plane[(size_t)h * W + w];
        out[((size_t)plane * g + gy) * g + gx] = (float)(acc / ((h1 - h0) * (w1 - w0)));
      }
  }
}

void avgpool_grid_backward(const float* grad_out, float* grad_in, int N, int C, int H, int W, int g) {
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < N * C; ++plane) {
    float* gi = grad_in + (size_t)plane * H * W;
    for (int p = 0; p < H * W; ++p) gi[p] = 0.0f;
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx) {
        const int h0 = gy * H / g, h1 = (gy + 1) * H / g;
        const int w0 = gx * W / g, w1 = (gx + 1) * W / g;
        const float share = grad_out[((size_t)plane * g + gy) * g + gx] /
                            (float)((h1 - h0) * (w1 - w0));
        for (int h = h0; h < h1; ++h)
          for (int w = w0; w < w1; ++w) gi[(size_t)h * W + w] += share;
      }
  }
}

void linear_forward(const float* input, const float* weight, const float* bias, float* out,
                    int N, int D, int M) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m) {
      double acc = bias ? (double)bias[m] : 0.0;
      const float* in_row = input + (size_t)n * D;
      for (int d = 0; d < D; ++d) acc += (double)in_row[d] * (double)weight[(size_t)d * M + m];
      out[(size_t)n * M + m] = (float)acc;
    }
}

void linear_backward_input(const float* grad_out, const float* weight, float* grad_in,
                           int N, int D, int M) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int d = 0; d < D; ++d) {
      double acc = 0.0;
      const float* go_row = grad_out + (size_t)n * M;
      const float* w_row = weight + (size_t)d * M;
      for (int m = 0; m < M; ++m) acc += (double)go_row[m] * (double)w_row[m];
      grad_in[(size_t)n * D + d] = (float)acc;
    }
}

void linear_backward_weight(const float* grad_out, const float* input, float* grad_weight,
                            int N, int D, int M) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int d = 0; d < D; ++d)
    for (int m = 0; m < M; ++m) {
      double acc = 0.0;
      for (int n = 0; n < N; ++n)
        acc += (double)input[(size_t)n * D + d] * (double)grad_out[(size_t)n * M + m];
      grad_weight[(size_t)d * M + m] = (float)acc;
    }
}

void linear_backward_bias(const float* grad_out, float* grad_bias, int N, int M) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) acc += (double)grad_out[(size_t)n * M + m];
    grad_bias[m] = (float)acc;
  }
}

void relu_forward(const float* input, float* out, size_t count) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < (int64_t)count; ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
}

void relu_backward(const float* grad_out, const float* input, float* grad_in, size_t count) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < (int64_t)count; ++i)
    grad_in[i] = input[i] > 0.0f ? grad_out[i] : 0.0f;
}

void sigmoid_forward(const float* input, float* out, size_t count) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < (int64_t)count; ++i) {
    const float x = input[i];
    if (x >= 0.0f) {
      out[i] = 1.0f / (1.0f + std::exp(-x));
    } else {
      const float e = std::exp(x);
      out[i] = e / (1.0f + e);
    }
  }
}

void sigmoid_backward(const float* grad_out, const float* output, float* grad_in, size_t count) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < (int64_t)count; ++i)
    grad_in[i] = grad_out[i] * output[i] * (1.0f - output[i]);
}

}  // namespace samm2d::kernels
