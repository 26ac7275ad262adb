// Benchmarks the OpenMP kernels against the serial reference implementations
// and checks they agree while at it. Wall-clock medians over a few reps.
//
//   ./bench_kernels [reps]

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "samm2d/kernels.hpp"
#include "samm2d/kernels_ref.hpp"
#include "samm2d/rng.hpp"

using namespace samm2d;

namespace {

double time_median(const std::function<void()>& fn, int reps) {
  std::vector<double> ms;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  return ms[ms.size() / 2];
}

std::vector<float> random_vec(size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = (float)rng.uniform(-1.0, 1.0);
  return v;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  float worst = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void row(const char* name, double serial_ms, double parallel_ms, float diff) {
  std::printf("%-28s %10.2f ms %10.2f ms %8.2fx   max|d|=%.2e\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, (double)diff);
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
  std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  Rng rng(42);

  {  // conv2d forward + backward, toy-training shape
    const int N = 16, Cin = 16, H = 32, W = 32, Cout = 32, K = 3, stride = 1, pad = 1;
    const auto input = random_vec((size_t)N * Cin * H * W, rng);
    const auto kernel = random_vec((size_t)Cout * Cin * K * K, rng);
    const auto bias = random_vec(Cout, rng);
    const int OH = ref::conv_out_dim(H, K, stride, pad), OW = OH;
    std::vector<float> out_s((size_t)N * Cout * OH * OW), out_p(out_s.size());

    const double s = time_median(
        [&] {
          ref::conv2d_forward(input.data(), kernel.data(), bias.data(), out_s.data(), N, Cin, H,
                              W, Cout, K, stride, pad);
        },
        reps);
    const double p = time_median(
        [&] {
          kernels::conv2d_forward(input.data(), kernel.data(), bias.data(), out_p.data(), N, Cin,
                                  H, W, Cout, K, stride, pad);
        },
        reps);
    row("conv2d_forward", s, p, max_abs_diff(out_s, out_p));

    const auto grad_out = random_vec(out_s.size(), rng);
    std::vector<float> gi_s(input.size()), gi_p(input.size());
    const double sbi = time_median(
        [&] {
          ref::conv2d_backward_input(grad_out.data(), kernel.data(), gi_s.data(), N, Cin, H, W,
                                     Cout, K, stride, pad);
        },
        reps);
    const double pbi = time_median(
        [&] {
          kernels::conv2d_backward_input(grad_out.data(), kernel.data(), gi_p.data(), N, Cin, H,
                                         W, Cout, K, stride, pad);
        },
        reps);
    row("conv2d_backward_input", sbi, pbi, max_abs_diff(gi_s, gi_p));

    std::vector<float> gk_s(kernel.size()), gk_p(kernel.size());
    const double sbk = time_median(
        [&] {
          ref::conv2d_backward_kernel(grad_out.data(), input.data(), gk_s.data(), N, Cin, H, W,
                                      Cout, K, stride, pad);
        },
        reps);
    const double pbk = time_median(
        [&] {
          kernels::conv2d_backward_kernel(grad_out.data(), input.data(), gk_p.data(), N, Cin, H,
                                          W, Cout, K, stride, pad);
        },
        reps);
    row("conv2d_backward_kernel", sbk, pbk, max_abs_diff(gk_s, gk_p));
  }

  {  // linear, pyramid-head shape
    const int N = 32, D = 5040, M = 64;
    const auto input = random_vec((size_t)N * D, rng);
    const auto weight = random_vec((size_t)D * M, rng);
    const auto bias = random_vec(M, rng);
    std::vector<float> out_s((size_t)N * M), out_p(out_s.size());
    const double s = time_median(
        [&] {
          ref::linear_forward(input.data(), weight.data(), bias.data(), out_s.data(), N, D, M);
        },
        reps);
    const double p = time_median(
        [&] {
          kernels::linear_forward(input.data(), weight.data(), bias.data(), out_p.data(), N, D, M);
        },
        reps);
    row("linear_forward", s, p, max_abs_diff(out_s, out_p));

    const auto grad_out = random_vec(out_s.size(), rng);
    std::vector<float> gw_s(weight.size()), gw_p(weight.size());
    const double sb = time_median(
        [&] {
          ref::linear_backward<float>(grad_out.data(), input.data(), weight.data(), nullptr,
                                      gw_s.data(), nullptr, N, D, M);
        },
        reps);
    const double pb = time_median(
        [&] { kernels::linear_backward_weight(grad_out.data(), input.data(), gw_p.data(), N, D, M); },
        reps);
    row("linear_backward_weight", sb, pb, max_abs_diff(gw_s, gw_p));
  }

  {  // pooling
    const int N = 16, C = 32, H = 64, W = 64;
    const auto input = random_vec((size_t)N * C * H * W, rng);
    std::vector<float> out_s((size_t)N * C * 32 * 32), out_p(out_s.size());
    std::vector<int64_t> am_s(out_s.size()), am_p(out_s.size());
    const double s = time_median(
        [&] { ref::maxpool2d_forward(input.data(), out_s.data(), am_s.data(), N, C, H, W, 2, 2); },
        reps);
    const double p = time_median(
        [&] {
          kernels::maxpool2d_forward(input.data(), out_p.data(), am_p.data(), N, C, H, W, 2, 2);
        },
        reps);
    row("maxpool2d_forward", s, p, max_abs_diff(out_s, out_p));

    std::vector<float> pool_s((size_t)N * C * 4 * 4), pool_p(pool_s.size());
    const double sg = time_median(
        [&] { ref::avgpool_grid_forward(input.data(), pool_s.data(), N, C, H, W, 4); }, reps);
    const double pg = time_median(
        [&] { kernels::avgpool_grid_forward(input.data(), pool_p.data(), N, C, H, W, 4); }, reps);
    row("avgpool_grid_forward", sg, pg, max_abs_diff(pool_s, pool_p));
  }

  return 0;
}
