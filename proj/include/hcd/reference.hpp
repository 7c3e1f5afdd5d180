#pragma once

#include <cstdint>

// Serial brute-force counterparts of the kernels in hcd::kernels, written
// as plain nested loops straight from the definitions. They exist as the
// trusted side of kernel tests and for the kernel benchmark; nothing in the
// training path links against them.
namespace hcd::ref {

void matmul(const double* x, const double* w, double* y,
            int64_t batch, int64_t p, int64_t q);

void conv2d(const double* x, const double* k, double* y,
            int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout);
void conv2d_grad_x(const double* gy, const double* k, double* gx,
                   int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout);
void conv2d_grad_k(const double* x, const double* gy, double* gk,
                   int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout);

void avg_pool2x2(const double* x, double* y,
                 int64_t batch, int64_t c, int64_t h, int64_t w);
void global_avg_pool(const double* x, double* y,
                     int64_t batch, int64_t c, int64_t hw);

}  // namespace hcd::ref
