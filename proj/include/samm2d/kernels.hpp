#pragma once

// OpenMP kernels used by the autodiff primitives. Every output element is
// produced by exactly one thread with a fixed accumulation order, so results
// are bit-identical to a single-threaded run for any OMP_NUM_THREADS.
// Backward passes are written in gather form for the same reason.
// Dot products accumulate in double and store float.
//
// The serial ground truth lives in kernels_ref.hpp; tests and the benchmark
// compare the two.

#include <cstddef>
#include <cstdint>

namespace samm2d::kernels {

void conv2d_forward(const float* input, const float* kernel, const float* bias, float* out,
                    int N, int Cin, int H, int W, int Cout, int K, int stride, int pad);
void conv2d_backward_input(const float* grad_out, const float* kernel, float* grad_in,
                           int N, int Cin, int H, int W, int Cout, int K, int stride, int pad);
void conv2d_backward_kernel(const float* grad_out, const float* input, float* grad_kernel,
                            int N, int Cin, int H, int W, int Cout, int K, int stride, int pad);
void conv2d_backward_bias(const float* grad_out, float* grad_bias, int N, int Cout, int OH, int OW);

void maxpool2d_forward(const float* input, float* out, int64_t* argmax,
                       int N, int C, int H, int W, int window, int stride);
void maxpool2d_backward(const float* grad_out, const int64_t* argmax, float* grad_in,
                        int N, int C, int H, int W, int window, int stride);

void avgpool_grid_forward(const float* input, float* out, int N, int C, int H, int W, int g);
void avgpool_grid_backward(const float* grad_out, float* grad_in, int N, int C, int H, int W, int g);

void linear_forward(const float* input, const float* weight, const float* bias, float* out,
                    int N, int D, int M);
void linear_backward_input(const float* grad_out, const float* weight, float* grad_in,
                           int N, int D, int M);
void linear_backward_weight(const float* grad_out, const float* input, float* grad_weight,
                            int N, int D, int M);
void linear_backward_bias(const float* grad_out, float* grad_bias, int N, int M);

void relu_forward(const float* input, float* out, size_t count);
void relu_backward(const float* grad_out, const float* input, float* grad_in, size_t count);
void sigmoid_forward(const float* input, float* out, size_t count);
void sigmoid_backward(const float* grad_out, const float* output, float* grad_in, size_t count);

}  // namespace samm2d::kernels
