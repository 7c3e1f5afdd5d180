// Times the OpenMP kernels against the serial reference loops on a few
// shapes and reports speedup plus max |diff| as a sanity check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "hcd/kernels.hpp"
#include "hcd/reference.hpp"
#include "hcd/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> randorm(hcd::Rng& rng, size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void report(const char* name, double serial_ms, double parallel_ms, double diff) {
  std::printf("%-28s serial %8.2f ms   parallel %8.2f ms   speedup %4.2fx   max|diff| %.2e\n",
              name, serial_ms, parallel_ms, serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; both columns run serial code\n");
#endif
  hcd::Rng rng(7);

  {  // matmul 256x512 * 512x256
    const int64_t B = 256, p = 512, q = 256;
    auto x = randorm(rng, size_t(B * p));
    auto w = randorm(rng, size_t(p * q));
    std::vector<double> ys(size_t(B * q)), yp(size_t(B * q));
    const double ts = time_ms([&] { hcd::ref::matmul(x.data(), w.data(), ys.data(), B, p, q); }, 3);
    const double tp = time_ms([&] { hcd::kernels::matmul(x.data(), w.data(), yp.data(), B, p, q); }, 3);
    report("matmul 256x512x256", ts, tp, max_diff(ys, yp));
  }
  {  // conv2d 16x32x32x32 -> 64 channels
    const int64_t B = 16, C = 32, H = 32, W = 32, O = 64;
    auto x = randorm(rng, size_t(B * C * H * W));
    auto k = randorm(rng, size_t(O * C * 9));
    std::vector<double> ys(size_t(B * O * H * W)), yp(ys.size());
    const double ts = time_ms([&] { hcd::ref::conv2d(x.data(), k.data(), ys.data(), B, C, H, W, O); }, 2);
    const double tp = time_ms([&] { hcd::kernels::conv2d(x.data(), k.data(), yp.data(), B, C, H, W, O); }, 2);
    report("conv2d 16x32x32x32 -> 64", ts, tp, max_diff(ys, yp));
  }
  {  // conv2d backward w.r.t. kernel on the same shape
    const int64_t B = 16, C = 32, H = 32, W = 32, O = 64;
    auto x = randorm(rng, size_t(B * C * H * W));
    auto gy = randorm(rng, size_t(B * O * H * W));
    std::vector<double> gs(size_t(O * C * 9), 0.0), gp(gs.size(), 0.0);
    const double ts = time_ms([&] {
      std::fill(gs.begin(), gs.end(), 0.0);
      hcd::ref::conv2d_grad_k(x.data(), gy.data(), gs.data(), B, C, H, W, O);
    }, 2);
    const double tp = time_ms([&] {
      std::fill(gp.begin(), gp.end(), 0.0);
      hcd::kernels::conv2d_grad_k(x.data(), gy.data(), gp.data(), B, C, H, W, O);
    }, 2);
    report("conv2d_grad_k", ts, tp, max_diff(gs, gp));
  }
  {  // 2x2 pooling on a large plane
    const int64_t B = 64, C = 64, H = 64, W = 64;
    auto x = randorm(rng, size_t(B * C * H * W));
    std::vector<double> ys(size_t(B * C * H * W / 4)), yp(ys.size());
    const double ts = time_ms([&] { hcd::ref::avg_pool2x2(x.data(), ys.data(), B, C, H, W); }, 5);
    const double tp = time_ms([&] { hcd::kernels::avg_pool2x2(x.data(), yp.data(), B, C, H, W); }, 5);
    report("avg_pool2x2 64x64x64x64", ts, tp, max_diff(ys, yp));
  }
  return 0;
}
