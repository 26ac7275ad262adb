#include <doctest.h>

#include <cmath>
#include <vector>

#include "samm2d/kernels.hpp"
#include "samm2d/kernels_ref.hpp"
#include "samm2d/rng.hpp"

using namespace samm2d;

namespace {

std::vector<float> random_vec(size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = (float)rng.uniform(lo, hi);
  return v;
}

void check_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs((double)a[i] - b[i]));
  CHECK(worst < tol);
}

}  // namespace

TEST_CASE("conv2d forward and backward match the serial reference across fuzzed shapes") {
  Rng rng(2024);
  for (int it = 0; it < 120; ++it) {
    const int N = 1 + (int)rng.next_index(3);
    const int Cin = 1 + (int)rng.next_index(4);
    const int Cout = 1 + (int)rng.next_index(4);
    const int K = 1 + (int)rng.next_index(3);
    const int stride = 1 + (int)rng.next_index(2);
    const int pad = (int)rng.next_index(2);
    const int H = K + (int)rng.next_index(8);
    const int W = K + (int)rng.next_index(8);
    const int OH = ref::conv_out_dim(H, K, stride, pad);
    const int OW = ref::conv_out_dim(W, K, stride, pad);
    if (OH < 1 || OW < 1) continue;

    const auto input = random_vec((size_t)N * Cin * H * W, rng);
    const auto kernel = random_vec((size_t)Cout * Cin * K * K, rng);
    const auto bias = random_vec(Cout, rng);

    std::vector<float> out_p((size_t)N * Cout * OH * OW), out_s(out_p.size());
    kernels::conv2d_forward(input.data(), kernel.data(), bias.data(), out_p.data(), N, Cin, H, W,
                            Cout, K, stride, pad);
    ref::conv2d_forward(input.data(), kernel.data(), bias.data(), out_s.data(), N, Cin, H, W,
                        Cout, K, stride, pad);
    check_close(out_p, out_s, 1e-5);

    const auto grad_out = random_vec(out_p.size(), rng);
    std::vector<float> gi_p(input.size()), gi_s(input.size());
    kernels::conv2d_backward_input(grad_out.data(), kernel.data(), gi_p.data(), N, Cin, H, W,
                                   Cout, K, stride, pad);
    ref::conv2d_backward_input(grad_out.data(), kernel.data(), gi_s.data(), N, Cin, H, W, Cout, K,
                               stride, pad);
    check_close(gi_p, gi_s, 1e-5);

    std::vector<float> gk_p(kernel.size()), gk_s(kernel.size());
    kernels::conv2d_backward_kernel(grad_out.data(), input.data(), gk_p.data(), N, Cin, H, W,
                                    Cout, K, stride, pad);
    ref::conv2d_backward_kernel(grad_out.data(), input.data(), gk_s.data(), N, Cin, H, W, Cout, K,
                                stride, pad);
    check_close(gk_p, gk_s, 1e-5);

    std::vector<float> gb_p(Cout), gb_s(Cout);
    kernels::conv2d_backward_bias(grad_out.data(), gb_p.data(), N, Cout, OH, OW);
    ref::conv2d_backward_bias(grad_out.data(), gb_s.data(), N, Cout, OH, OW);
    check_close(gb_p, gb_s, 1e-5);
  }
}

TEST_CASE("maxpool2d matches the serial reference and routes ties to the first occurrence") {
  Rng rng(7);
  for (int it = 0; it < 120; ++it) {
    const int N = 1 + (int)rng.next_index(3);
    const int C = 1 + (int)rng.next_index(4);
    const int window = 1 + (int)rng.next_index(3);
    const int stride = 1 + (int)rng.next_index(3);
    const int H = window + (int)rng.next_index(8);
    const int W = window + (int)rng.next_index(8);
    const int OH = ref::pool_out_dim(H, window, stride);
    const int OW = ref::pool_out_dim(W, window, stride);

    const auto input = random_vec((size_t)N * C * H * W, rng);
    std::vector<float> out_p((size_t)N * C * OH * OW), out_s(out_p.size());
    std::vector<int64_t> am_p(out_p.size()), am_s(out_p.size());
    kernels::maxpool2d_forward(input.data(), out_p.data(), am_p.data(), N, C, H, W, window, stride);
    ref::maxpool2d_forward(input.data(), out_s.data(), am_s.data(), N, C, H, W, window, stride);
    check_close(out_p, out_s, 1e-6);
    CHECK(am_p == am_s);

    const auto grad_out = random_vec(out_p.size(), rng);
    std::vector<float> gi_p(input.size()), gi_s(input.size());
    kernels::maxpool2d_backward(grad_out.data(), am_p.data(), gi_p.data(), N, C, H, W, window,
                                stride);
    ref::maxpool2d_backward(grad_out.data(), am_s.data(), gi_s.data(), input.size(), out_s.size());
    check_close(gi_p, gi_s, 1e-6);
  }

  // Tie: constant plane, first-scanned element wins.
  std::vector<float> flat(16, 1.0f);
  std::vector<float> out(4);
  std::vector<int64_t> am(4);
  kernels::maxpool2d_forward(flat.data(), out.data(), am.data(), 1, 1, 4, 4, 2, 2);
  CHECK(am[0] == 0);
  CHECK(am[1] == 2);
  CHECK(am[2] == 8);
  CHECK(am[3] == 10);
}

TEST_CASE("adaptive average pooling matches the bin-boundary reference") {
  Rng rng(5);
  for (int it = 0; it < 120; ++it) {
    const int N = 1 + (int)rng.next_index(2);
    const int C = 1 + (int)rng.next_index(4);
    const int H = 1 + (int)rng.next_index(12);
    const int W = 1 + (int)rng.next_index(12);
    const int g = 1 + (int)rng.next_index((uint64_t)std::min(H, W));

    const auto input = random_vec((size_t)N * C * H * W, rng);
    std::vector<float> out_p((size_t)N * C * g * g), out_s(out_p.size());
    kernels::avgpool_grid_forward(input.data(), out_p.data(), N, C, H, W, g);
    ref::avgpool_grid_forward(input.data(), out_s.data(), N, C, H, W, g);
    check_close(out_p, out_s, 1e-6);

    const auto grad_out = random_vec(out_p.size(), rng);
    std::vector<float> gi_p(input.size()), gi_s(input.size());
    kernels::avgpool_grid_backward(grad_out.data(), gi_p.data(), N, C, H, W, g);
    ref::avgpool_grid_backward(grad_out.data(), gi_s.data(), N, C, H, W, g);
    check_close(gi_p, gi_s, 1e-6);
  }
}

TEST_CASE("pool bins partition with floor boundaries (7x7 at g=4)") {
  Rng rng(99);
  const auto input = random_vec(3 * 7 * 7, rng);
  std::vector<float> out(3 * 16);
  kernels::avgpool_grid_forward(input.data(), out.data(), 1, 3, 7, 7, 4);
  for (int c = 0; c < 3; ++c)
    for (int gy = 0; gy < 4; ++gy)
      for (int gx = 0; gx < 4; ++gx) {
        const int h0 = gy * 7 / 4, h1 = (gy + 1) * 7 / 4;
        const int w0 = gx * 7 / 4, w1 = (gx + 1) * 7 / 4;
        double acc = 0.0;
        for (int h = h0; h < h1; ++h)
          for (int w = w0; w < w1; ++w) acc += input[(size_t)c * 49 + h * 7 + w];
        acc /= (h1 - h0) * (w1 - w0);
        CHECK((double)out[(size_t)c * 16 + gy * 4 + gx] == doctest::Approx(acc).epsilon(1e-6));
      }
}

TEST_CASE("linear matches the triple-loop reference across fuzzed shapes") {
  Rng rng(13);
  for (int it = 0; it < 120; ++it) {
    const int N = 1 + (int)rng.next_index(5);
    const int D = 1 + (int)rng.next_index(12);
    const int M = 1 + (int)rng.next_index(9);
    const auto input = random_vec((size_t)N * D, rng);
    const auto weight = random_vec((size_t)D * M, rng);
    const auto bias = random_vec(M, rng);

    std::vector<float> out_p((size_t)N * M), out_s(out_p.size());
    kernels::linear_forward(input.data(), weight.data(), bias.data(), out_p.data(), N, D, M);
    ref::linear_forward(input.data(), weight.data(), bias.data(), out_s.data(), N, D, M);
    check_close(out_p, out_s, 1e-5);

    const auto grad_out = random_vec(out_p.size(), rng);
    std::vector<float> gi_p(input.size()), gi_s(input.size()), gw_p(weight.size()),
        gw_s(weight.size()), gb_p(M), gb_s(M);
    kernels::linear_backward_input(grad_out.data(), weight.data(), gi_p.data(), N, D, M);
    kernels::linear_backward_weight(grad_out.data(), input.data(), gw_p.data(), N, D, M);
    kernels::linear_backward_bias(grad_out.data(), gb_p.data(), N, M);
    ref::linear_backward(grad_out.data(), input.data(), weight.data(), gi_s.data(), gw_s.data(),
                         gb_s.data(), N, D, M);
    check_close(gi_p, gi_s, 1e-5);
    check_close(gw_p, gw_s, 1e-5);
    check_close(gb_p, gb_s, 1e-5);
  }
}
