#pragma once

#include <cstdint>

// Hot inner loops, OpenMP-parallel where the shape pays for a team.
// Parallelism is always over independent output elements with serial inner
// accumulation, so results are bit-identical for any thread count. The
// *_grad_* functions accumulate (+=) into their output buffer.
namespace hcd::kernels {

// y[B,q] = x[B,p] * w[p,q]
void matmul(const double* x, const double* w, double* y,
            int64_t batch, int64_t p, int64_t q);
// gx[B,p] += gy[B,q] * w^T
void matmul_grad_x(const double* gy, const double* w, double* gx,
                   int64_t batch, int64_t p, int64_t q);
// gw[p,q] += x^T * gy
void matmul_grad_w(const double* x, const double* gy, double* gw,
                   int64_t batch, int64_t p, int64_t q);

// 3x3 cross-correlation, stride 1, zero pad 1 (spatial size preserved).
// x[B,C,H,W], k[O,C,3,3], y[B,O,H,W]
void conv2d(const double* x, const double* k, double* y,
            int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout);
void conv2d_grad_x(const double* gy, const double* k, double* gx,
                   int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout);
void conv2d_grad_k(const double* x, const double* gy, double* gk,
                   int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout);

// 2x2 average pooling, stride 2. Requires even H and W.
void avg_pool2x2(const double* x, double* y,
                 int64_t batch, int64_t c, int64_t h, int64_t w);
void avg_pool2x2_grad(const double* gy, double* gx,
                      int64_t batch, int64_t c, int64_t h, int64_t w);

// Global average over the hw spatial positions of each (b, c) plane.
void global_avg_pool(const double* x, double* y,
                     int64_t batch, int64_t c, int64_t hw);
void global_avg_pool_grad(const double* gy, double* gx,
                          int64_t batch, int64_t c, int64_t hw);

}  // namespace hcd::kernels
