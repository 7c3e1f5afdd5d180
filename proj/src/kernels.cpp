#include "hcd/kernels.hpp"

namespace hcd::kernels {

namespace {
// Team launch is not free; skip it for tiny work items.
constexpr int64_t kParallelCutoff = 8 * 1024;
}

void matmul(const double* x, const double* w, double* y,
            int64_t batch, int64_t p, int64_t q) {
  const int64_t work = batch * p * q;
#pragma omp parallel for schedule(static) if (work >= kParallelCutoff)
  for (int64_t b = 0; b < batch; ++b) {
    const double* xb = x + b * p;
    double* yb = y + b * q;
    for (int64_t j = 0; j < q; ++j) yb[j] = 0.0;
    for (int64_t i = 0; i < p; ++i) {
      const double xv = xb[i];
      const double* wrow = w + i * q;
      for (int64_t j = 0; j < q; ++j) yb[j] += xv * wrow[j];
    }
  }
}

void matmul_grad_x(const double* gy, const double* w, double* gx,
                   int64_t batch, int64_t p, int64_t q) {
  const int64_t work = batch * p * q;
#pragma omp parallel for schedule(static) if (work >= kParallelCutoff)
  for (int64_t b = 0; b < batch; ++b) {
    const double* gyb = gy + b * q;
    double* gxb = gx + b * p;
    for (int64_t i = 0; i < p; ++i) {
      const double* wrow = w + i * q;
      double acc = 0.0;
      for (int64_t j = 0; j < q; ++j) acc += gyb[j] * wrow[j];
      gxb[i] += acc;
    }
  }
}

void matmul_grad_w(const double* x, const double* gy, double* gw,
                   int64_t batch, int64_t p, int64_t q) {
  const int64_t work = batch * p * q;
#pragma omp parallel for schedule(static) if (work >= kParallelCutoff)
  for (int64_t i = 0; i < p; ++i) {
    double* gwrow = gw + i * q;
    for (int64_t b = 0; b < batch; ++b) {
      const double xv = x[b * p + i];
      const double* gyb = gy + b * q;
      for (int64_t j = 0; j < q; ++j) gwrow[j] += xv * gyb[j];
    }
  }
}

void conv2d(const double* x, const double* k, double* y,
            int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout) {
  const int64_t work = batch * cout * cin * h * w * 9;
#pragma omp parallel for collapse(2) schedule(static) if (work >= kParallelCutoff)
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t o = 0; o < cout; ++o) {
      double* yp = y + (b * cout + o) * h * w;
      for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
          double acc = 0.0;
          for (int64_t c = 0; c < cin; ++c) {
            const double* xp = x + (b * cin + c) * h * w;
            const double* kp = k + ((o * cin + c) * 3) * 3;
            for (int64_t u = 0; u < 3; ++u) {
              const int64_t ii = i + u - 1;
              if (ii < 0 || ii >= h) continue;
              for (int64_t v = 0; v < 3; ++v) {
                const int64_t jj = j + v - 1;
                if (jj < 0 || jj >= w) continue;
                acc += xp[ii * w + jj] * kp[u * 3 + v];
              }
            }
          }
          yp[i * w + j] = acc;
        }
      }
    }
  }
}

void conv2d_grad_x(const double* gy, const double* k, double* gx,
                   int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout) {
  const int64_t work = batch * cout * cin * h * w * 9;
#pragma omp parallel for collapse(2) schedule(static) if (work >= kParallelCutoff)
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < cin; ++c) {
      double* gxp = gx + (b * cin + c) * h * w;
      for (int64_t pi = 0; pi < h; ++pi) {
        for (int64_t pj = 0; pj < w; ++pj) {
          double acc = 0.0;
          for (int64_t o = 0; o < cout; ++o) {
            const double* gyp = gy + (b * cout + o) * h * w;
            const double* kp = k + ((o * cin + c) * 3) * 3;
            for (int64_t u = 0; u < 3; ++u) {
              const int64_t i = pi - u + 1;
              if (i < 0 || i >= h) continue;
              for (int64_t v = 0; v < 3; ++v) {
                const int64_t j = pj - v + 1;
                if (j < 0 || j >= w) continue;
                acc += gyp[i * w + j] * kp[u * 3 + v];
              }
            }
          }
          gxp[pi * w + pj] += acc;
        }
      }
    }
  }
}

void conv2d_grad_k(const double* x, const double* gy, double* gk,
                   int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout) {
  const int64_t work = batch * cout * cin * h * w * 9;
#pragma omp parallel for collapse(2) schedule(static) if (work >= kParallelCutoff)
  for (int64_t o = 0; o < cout; ++o) {
    for (int64_t c = 0; c < cin; ++c) {
      double* gkp = gk + ((o * cin + c) * 3) * 3;
      for (int64_t u = 0; u < 3; ++u) {
        for (int64_t v = 0; v < 3; ++v) {
          double acc = 0.0;
          for (int64_t b = 0; b < batch; ++b) {
            const double* gyp = gy + (b * cout + o) * h * w;
            const double* xp = x + (b * cin + c) * h * w;
            for (int64_t i = 0; i < h; ++i) {
              const int64_t ii = i + u - 1;
              if (ii < 0 || ii >= h) continue;
              for (int64_t j = 0; j < w; ++j) {
                const int64_t jj = j + v - 1;
                if (jj < 0 || jj >= w) continue;
                acc += gyp[i * w + j] * xp[ii * w + jj];
              }
            }
          }
          gkp[u * 3 + v] += acc;
        }
      }
    }
  }
}

void avg_pool2x2(const double* x, double* y,
                 int64_t batch, int64_t c, int64_t h, int64_t w) {
  const int64_t planes = batch * c;
  const int64_t oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static) if (planes * h * w >= kParallelCutoff)
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* xp = x + pl * h * w;
    double* yp = y + pl * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        const int64_t i0 = 2 * i, j0 = 2 * j;
        yp[i * ow + j] = 0.25 * (xp[i0 * w + j0] + xp[i0 * w + j0 + 1] +
                                 xp[(i0 + 1) * w + j0] + xp[(i0 + 1) * w + j0 + 1]);
      }
    }
  }
}

void avg_pool2x2_grad(const double* gy, double* gx,
                      int64_t batch, int64_t c, int64_t h, int64_t w) {
  const int64_t planes = batch * c;
  const int64_t oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static) if (planes * h * w >= kParallelCutoff)
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* gyp = gy + pl * oh * ow;
    double* gxp = gx + pl * h * w;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        const double g = 0.25 * gyp[i * ow + j];
        const int64_t i0 = 2 * i, j0 = 2 * j;
        gxp[i0 * w + j0] += g;
        gxp[i0 * w + j0 + 1] += g;
        gxp[(i0 + 1) * w + j0] += g;
        gxp[(i0 + 1) * w + j0 + 1] += g;
      }
    }
  }
}

void global_avg_pool(const double* x, double* y,
                     int64_t batch, int64_t c, int64_t hw) {
  const int64_t planes = batch * c;
#pragma omp parallel for schedule(static) if (planes * hw >= kParallelCutoff)
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* xp = x + pl * hw;
    double acc = 0.0;
    for (int64_t s = 0; s < hw; ++s) acc += xp[s];
    y[pl] = acc / double(hw);
  }
}

void global_avg_pool_grad(const double* gy, double* gx,
                          int64_t batch, int64_t c, int64_t hw) {
  const int64_t planes = batch * c;
#pragma omp parallel for schedule(static) if (planes * hw >= kParallelCutoff)
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double g = gy[pl] / double(hw);
    double* gxp = gx + pl * hw;
    for (int64_t s = 0; s < hw; ++s) gxp[s] += g;
  }
}

}  // namespace hcd::kernels
