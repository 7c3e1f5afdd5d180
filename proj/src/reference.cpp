#include "hcd/reference.hpp"

namespace hcd::ref {

void matmul(const double* x, const double* w, double* y,
            int64_t batch, int64_t p, int64_t q) {
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t j = 0; j < q; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < p; ++i) acc += x[b * p + i] * w[i * q + j];
      y[b * q + j] = acc;
    }
}

void conv2d(const double* x, const double* k, double* y,
            int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout) {
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t o = 0; o < cout; ++o)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          double acc = 0.0;
          for (int64_t c = 0; c < cin; ++c)
            for (int64_t u = 0; u < 3; ++u)
              for (int64_t v = 0; v < 3; ++v) {
                const int64_t ii = i + u - 1;
                const int64_t jj = j + v - 1;
                if (ii >= 0 && ii < h && jj >= 0 && jj < w)
                  acc += x[((b * cin + c) * h + ii) * w + jj] *
                         k[((o * cin + c) * 3 + u) * 3 + v];
              }
          y[((b * cout + o) * h + i) * w + j] = acc;
        }
}

void conv2d_grad_x(const double* gy, const double* k, double* gx,
                   int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout) {
  // Accumulate through every (output, kernel) pair that touches each input.
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t o = 0; o < cout; ++o)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          const double g = gy[((b * cout + o) * h + i) * w + j];
          for (int64_t c = 0; c < cin; ++c)
            for (int64_t u = 0; u < 3; ++u)
              for (int64_t v = 0; v < 3; ++v) {
                const int64_t ii = i + u - 1;
                const int64_t jj = j + v - 1;
                if (ii >= 0 && ii < h && jj >= 0 && jj < w)
                  gx[((b * cin + c) * h + ii) * w + jj] +=
                      g * k[((o * cin + c) * 3 + u) * 3 + v];
              }
        }
}

void conv2d_grad_k(const double* x, const double* gy, double* gk,
                   int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout) {
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t o = 0; o < cout; ++o)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          const double g = gy[((b * cout + o) * h + i) * w + j];
          for (int64_t c = 0; c < cin; ++c)
            for (int64_t u = 0; u < 3; ++u)
              for (int64_t v = 0; v < 3; ++v) {
                const int64_t ii = i + u - 1;
                const int64_t jj = j + v - 1;
                if (ii >= 0 && ii < h && jj >= 0 && jj < w)
                  gk[((o * cin + c) * 3 + u) * 3 + v] +=
                      g * x[((b * cin + c) * h + ii) * w + jj];
              }
        }
}

void avg_pool2x2(const double* x, double* y,
                 int64_t batch, int64_t c, int64_t h, int64_t w) {
  const int64_t oh = h / 2, ow = w / 2;
  for (int64_t pl = 0; pl < batch * c; ++pl)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int64_t u = 0; u < 2; ++u)
          for (int64_t v = 0; v < 2; ++v)
            acc += x[pl * h * w + (2 * i + u) * w + (2 * j + v)];
        y[pl * oh * ow + i * ow + j] = acc / 4.0;
      }
}

void global_avg_pool(const double* x, double* y,
                     int64_t batch, int64_t c, int64_t hw) {
  for (int64_t pl = 0; pl < batch * c; ++pl) {
    double acc = 0.0;
    for (int64_t s = 0; s < hw; ++s) acc += x[pl * hw + s];
    y[pl] = acc / double(hw);
  }
}

}  // namespace hcd::ref
