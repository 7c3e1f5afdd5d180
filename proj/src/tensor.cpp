#include "hcd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#include "hcd/kernels.hpp"

namespace hcd {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  for (int64_t d : shape)
    if (d < 0) fail(ErrorKind::kShape, "negative dimension in " + shape_str(shape));
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->value.assign(size_t(numel(impl_->shape)), fill);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != int64_t(values.size()))
    fail(ErrorKind::kShape, "value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  Tensor t(std::move(shape), 0.0, requires_grad);
  t.impl_->value = std::move(values);
  return t;
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

double Tensor::item() const {
  if (size() != 1)
    fail(ErrorKind::kShape, "item() on non-scalar tensor " + shape_str(shape()));
  return impl_->value[0];
}

static int64_t flat_index(const Shape& shape, std::initializer_list<int64_t> idx) {
  if (int64_t(idx.size()) != int64_t(shape.size()))
    fail(ErrorKind::kShape, "index rank mismatch for " + shape_str(shape));
  int64_t flat = 0;
  size_t d = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= shape[d])
      fail(ErrorKind::kShape, "index out of range for " + shape_str(shape));
    flat = flat * shape[d] + i;
    ++d;
  }
  return flat;
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return impl_->value[size_t(flat_index(shape(), idx))];
}
double& Tensor::at(std::initializer_list<int64_t> idx) {
  return impl_->value[size_t(flat_index(shape(), idx))];
}

Tensor& Tensor::set_requires_grad(bool rg) {
  impl_->requires_grad = rg;
  if (!rg) impl_->grad.clear();
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty())
    fail(ErrorKind::kState, "tensor has no gradient buffer");
  return impl_->grad;
}
std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty())
    fail(ErrorKind::kState, "tensor has no gradient buffer");
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, 0.0, impl_->requires_grad);
  t.impl_->value = impl_->value;
  return t;
}

Tensor Tensor::detach() const {
  Tensor t(impl_->shape);
  t.impl_->value = impl_->value;
  return t;
}

// ---- Graph --------------------------------------------------------------

namespace {
thread_local Graph* t_active = nullptr;
thread_local KinkTrace* t_kink = nullptr;
std::atomic<bool> g_finite{
#ifdef NDEBUG
    false
#else
    true
#endif
};
}  // namespace

Graph* Graph::active() noexcept { return t_active; }

int64_t Graph::record(std::function<void()> fn) {
  tape_.push_back(std::move(fn));
  return int64_t(tape_.size()) - 1;
}

void Graph::backward(const Tensor& loss) {
  if (spent_) fail(ErrorKind::kState, "backward called twice on the same graph");
  if (loss.size() != 1)
    fail(ErrorKind::kShape,
         "backward requires a scalar loss, got " + shape_str(loss.shape()));
  auto& li = *loss.impl();
  if (li.graph != this || li.node < 0)
    fail(ErrorKind::kState, "loss tensor was not recorded on this graph");
  spent_ = true;
  li.grad.assign(1, 1.0);
  // Recording order is topological, so reverse tape order from the loss
  // node visits every ancestor after all of its consumers.
  for (int64_t i = li.node; i >= 0; --i) tape_[size_t(i)]();
}

Recording::Recording(Graph& g) : prev_(t_active) {
  if (g.spent()) fail(ErrorKind::kState, "cannot record on a spent graph");
  t_active = &g;
}
Recording::~Recording() { t_active = prev_; }

void set_finite_checks(bool on) { g_finite.store(on, std::memory_order_relaxed); }
bool finite_checks() { return g_finite.load(std::memory_order_relaxed); }
void set_kink_trace(KinkTrace* sink) { t_kink = sink; }

// ---- op helpers ----------------------------------------------------------

namespace {

using detail::TensorImpl;
using Impl = std::shared_ptr<TensorImpl>;

std::vector<double>& ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.value.size(), 0.0);
  return t.grad;
}

void check_finite(const Tensor& t, const char* op) {
  if (!finite_checks()) return;
  for (double v : t.values())
    if (!std::isfinite(v))
      fail(ErrorKind::kNumeric, std::string("non-finite value produced by ") + op);
}

bool wants_grad(const Tensor& a) { return a.requires_grad(); }

// Attaches a backward closure to the active graph if any input is on the
// differentiation path; otherwise the op stays pure.
template <typename Fn>
void maybe_record(Tensor& out, bool any_input_grad, Fn&& fn) {
  Graph* g = Graph::active();
  if (!g || !any_input_grad) return;
  out.impl()->requires_grad = true;
  out.impl()->graph = g;
  out.impl()->node = g->record(std::forward<Fn>(fn));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void fold_kink_bit(uint64_t& h, bool bit) {
  h ^= uint64_t(bit) + 0x9e37;
  h *= 0x100000001b3ULL;
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  check_finite(out, "add");
  maybe_record(out, wants_grad(a) || wants_grad(b), [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    if (oi->grad.empty()) return;
    const auto& g = oi->grad;
    if (ai->requires_grad) {
      auto& ga = ensure_grad(*ai);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& gb = ensure_grad(*bi);
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  check_finite(out, "sub");
  maybe_record(out, wants_grad(a) || wants_grad(b), [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    if (oi->grad.empty()) return;
    const auto& g = oi->grad;
    if (ai->requires_grad) {
      auto& ga = ensure_grad(*ai);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& gb = ensure_grad(*bi);
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  check_finite(out, "mul");
  maybe_record(out, wants_grad(a) || wants_grad(b), [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    if (oi->grad.empty()) return;
    const auto& g = oi->grad;
    if (ai->requires_grad) {
      auto& ga = ensure_grad(*ai);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->value[i];
    }
    if (bi->requires_grad) {
      auto& gb = ensure_grad(*bi);
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->value[i];
    }
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tensor out(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] / b.data()[i];
  check_finite(out, "div");
  maybe_record(out, wants_grad(a) || wants_grad(b), [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    if (oi->grad.empty()) return;
    const auto& g = oi->grad;
    if (ai->requires_grad) {
      auto& ga = ensure_grad(*ai);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bi->value[i];
    }
    if (bi->requires_grad) {
      auto& gb = ensure_grad(*bi);
      for (size_t i = 0; i < g.size(); ++i)
        gb[i] -= g[i] * ai->value[i] / (bi->value[i] * bi->value[i]);
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  check_finite(out, "scale");
  maybe_record(out, wants_grad(a), [ai = a.impl(), oi = out.impl(), c] {
    if (oi->grad.empty() || !ai->requires_grad) return;
    auto& ga = ensure_grad(*ai);
    const auto& g = oi->grad;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  check_finite(out, "add_scalar");
  maybe_record(out, wants_grad(a), [ai = a.impl(), oi = out.impl()] {
    if (oi->grad.empty() || !ai->requires_grad) return;
    auto& ga = ensure_grad(*ai);
    const auto& g = oi->grad;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

namespace {
// Shared body of relu and max_with_scalar: y = max(0, x - thr).
// Subgradient at the kink is defined as 0.
Tensor relu_shifted(const Tensor& a, double thr, const char* op) {
  Tensor out(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) {
    const double v = a.data()[i] - thr;
    out.data()[i] = v > 0.0 ? v : 0.0;
  }
  if (t_kink) {
    for (int64_t i = 0; i < n; ++i)
      fold_kink_bit(t_kink->hash, a.data()[i] > thr);
  }
  check_finite(out, op);
  maybe_record(out, a.requires_grad(), [ai = a.impl(), oi = out.impl(), thr] {
    if (oi->grad.empty() || !ai->requires_grad) return;
    auto& ga = ensure_grad(*ai);
    const auto& g = oi->grad;
    for (size_t i = 0; i < g.size(); ++i)
      if (ai->value[i] > thr) ga[i] += g[i];
  });
  return out;
}
}  // namespace

Tensor relu(const Tensor& a) { return relu_shifted(a, 0.0, "relu"); }
Tensor max_with_scalar(const Tensor& a, double threshold) {
  return relu_shifted(a, threshold, "max_with_scalar");
}

Tensor sqrt_elem(const Tensor& a) {
  Tensor out(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::sqrt(a.data()[i]);
  check_finite(out, "sqrt");
  maybe_record(out, wants_grad(a), [ai = a.impl(), oi = out.impl()] {
    if (oi->grad.empty() || !ai->requires_grad) return;
    auto& ga = ensure_grad(*ai);
    const auto& g = oi->grad;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += 0.5 * g[i] / oi->value[i];
  });
  return out;
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 || w.rank() != 2)
    fail(ErrorKind::kShape, "matmul expects rank-2 inputs, got " +
                                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (x.shape()[1] != w.shape()[0])
    fail(ErrorKind::kShape, "matmul inner dimension mismatch: " +
                                shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const int64_t batch = x.shape()[0], p = x.shape()[1], q = w.shape()[1];
  Tensor out({batch, q});
  kernels::matmul(x.data(), w.data(), out.data(), batch, p, q);
  check_finite(out, "matmul");
  maybe_record(out, wants_grad(x) || wants_grad(w),
               [xi = x.impl(), wi = w.impl(), oi = out.impl(), batch, p, q] {
                 if (oi->grad.empty()) return;
                 if (xi->requires_grad)
                   kernels::matmul_grad_x(oi->grad.data(), wi->value.data(),
                                          ensure_grad(*xi).data(), batch, p, q);
                 if (wi->requires_grad)
                   kernels::matmul_grad_w(xi->value.data(), oi->grad.data(),
                                          ensure_grad(*wi).data(), batch, p, q);
               });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || x.shape()[1] != bias.shape()[0])
    fail(ErrorKind::kShape, "add_bias: incompatible shapes " + shape_str(x.shape()) +
                                " and " + shape_str(bias.shape()));
  const int64_t batch = x.shape()[0], q = x.shape()[1];
  Tensor out({batch, q});
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t j = 0; j < q; ++j)
      out.data()[b * q + j] = x.data()[b * q + j] + bias.data()[j];
  check_finite(out, "add_bias");
  maybe_record(out, wants_grad(x) || wants_grad(bias),
               [xi = x.impl(), bi = bias.impl(), oi = out.impl(), batch, q] {
                 if (oi->grad.empty()) return;
                 const auto& g = oi->grad;
                 if (xi->requires_grad) {
                   auto& gx = ensure_grad(*xi);
                   for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                 }
                 if (bi->requires_grad) {
                   auto& gb = ensure_grad(*bi);
                   for (int64_t b = 0; b < batch; ++b)
                     for (int64_t j = 0; j < q; ++j) gb[size_t(j)] += g[size_t(b * q + j)];
                 }
               });
  return out;
}

// ---- convolution / pooling -------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& k) {
  if (x.rank() != 4 || k.rank() != 4)
    fail(ErrorKind::kShape, "conv2d expects rank-4 input and kernel");
  if (k.shape()[2] != 3 || k.shape()[3] != 3)
    fail(ErrorKind::kShape, "conv2d kernel must be 3x3, got " + shape_str(k.shape()));
  if (x.shape()[1] != k.shape()[1])
    fail(ErrorKind::kShape, "conv2d channel mismatch: input " + shape_str(x.shape()) +
                                " vs kernel " + shape_str(k.shape()));
  const int64_t batch = x.shape()[0], cin = x.shape()[1];
  const int64_t h = x.shape()[2], w = x.shape()[3], cout = k.shape()[0];
  Tensor out({batch, cout, h, w});
  kernels::conv2d(x.data(), k.data(), out.data(), batch, cin, h, w, cout);
  check_finite(out, "conv2d");
  maybe_record(out, wants_grad(x) || wants_grad(k),
               [xi = x.impl(), ki = k.impl(), oi = out.impl(), batch, cin, h, w, cout] {
                 if (oi->grad.empty()) return;
                 if (xi->requires_grad)
                   kernels::conv2d_grad_x(oi->grad.data(), ki->value.data(),
                                          ensure_grad(*xi).data(), batch, cin, h, w, cout);
                 if (ki->requires_grad)
                   kernels::conv2d_grad_k(xi->value.data(), oi->grad.data(),
                                          ensure_grad(*ki).data(), batch, cin, h, w, cout);
               });
  return out;
}

Tensor adaptive_avg_pool(const Tensor& x) {
  if (x.rank() != 4)
    fail(ErrorKind::kShape, "adaptive_avg_pool expects [B,C,H,W], got " + shape_str(x.shape()));
  const int64_t batch = x.shape()[0], c = x.shape()[1];
  const int64_t hw = x.shape()[2] * x.shape()[3];
  Tensor out({batch, c});
  kernels::global_avg_pool(x.data(), out.data(), batch, c, hw);
  check_finite(out, "adaptive_avg_pool");
  maybe_record(out, wants_grad(x), [xi = x.impl(), oi = out.impl(), batch, c, hw] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    kernels::global_avg_pool_grad(oi->grad.data(), ensure_grad(*xi).data(), batch, c, hw);
  });
  return out;
}

Tensor avg_pool2x2(const Tensor& x) {
  if (x.rank() != 4)
    fail(ErrorKind::kShape, "avg_pool2x2 expects [B,C,H,W], got " + shape_str(x.shape()));
  const int64_t h = x.shape()[2], w = x.shape()[3];
  if (h < 2 || w < 2 || h % 2 || w % 2)
    fail(ErrorKind::kShape, "avg_pool2x2 requires even spatial extent, got " + shape_str(x.shape()));
  const int64_t batch = x.shape()[0], c = x.shape()[1];
  Tensor out({batch, c, h / 2, w / 2});
  kernels::avg_pool2x2(x.data(), out.data(), batch, c, h, w);
  check_finite(out, "avg_pool2x2");
  maybe_record(out, wants_grad(x), [xi = x.impl(), oi = out.impl(), batch, c, h, w] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    kernels::avg_pool2x2_grad(oi->grad.data(), ensure_grad(*xi).data(), batch, c, h, w);
  });
  return out;
}

// ---- batch norm -------------------------------------------------------------

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool training,
                   bool update_running, double momentum, double eps) {
  if (x.rank() != 4)
    fail(ErrorKind::kShape, "batchnorm2d expects [B,C,H,W], got " + shape_str(x.shape()));
  const int64_t batch = x.shape()[0], c = x.shape()[1];
  const int64_t hw = x.shape()[2] * x.shape()[3];
  const int64_t m = batch * hw;  // samples per channel
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c ||
      running_var.size() != c)
    fail(ErrorKind::kShape, "batchnorm2d parameter width mismatch for C=" + std::to_string(c));
  if (training && m <= 1)
    fail(ErrorKind::kShape, "batchnorm2d: batch-spatial extent " + std::to_string(m) +
                                " leaves the variance undefined");

  Tensor out(x.shape());
  // Saved for backward: normalized activations plus per-channel 1/std.
  auto xhat = std::make_shared<std::vector<double>>(size_t(x.size()));
  auto inv_std = std::make_shared<std::vector<double>>(size_t(c));

  const double* xp = x.data();
  double* yp = out.data();
#pragma omp parallel for schedule(static) if (c * m >= 4096)
  for (int64_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (training) {
      double s = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const double* p = xp + (b * c + ch) * hw;
        for (int64_t s2 = 0; s2 < hw; ++s2) s += p[s2];
      }
      mean = s / double(m);
      double sv = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const double* p = xp + (b * c + ch) * hw;
        for (int64_t s2 = 0; s2 < hw; ++s2) {
          const double d = p[s2] - mean;
          sv += d * d;
        }
      }
      var = sv / double(m);
      if (update_running) {
        running_mean.data()[ch] = (1.0 - momentum) * running_mean.data()[ch] + momentum * mean;
        // Unbiased variance goes into the running buffer.
        running_var.data()[ch] = (1.0 - momentum) * running_var.data()[ch] +
                                 momentum * var * double(m) / double(m - 1);
      }
    } else {
      mean = running_mean.data()[ch];
      var = running_var.data()[ch];
    }
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[size_t(ch)] = inv;
    const double gm = gamma.data()[ch], bt = beta.data()[ch];
    for (int64_t b = 0; b < batch; ++b) {
      const double* p = xp + (b * c + ch) * hw;
      double* q = yp + (b * c + ch) * hw;
      double* xh = xhat->data() + (b * c + ch) * hw;
      for (int64_t s2 = 0; s2 < hw; ++s2) {
        xh[s2] = (p[s2] - mean) * inv;
        q[s2] = gm * xh[s2] + bt;
      }
    }
  }
  check_finite(out, "batchnorm2d");

  maybe_record(out, wants_grad(x) || wants_grad(gamma) || wants_grad(beta),
               [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(),
                xhat, inv_std, batch, c, hw, m, training] {
                 if (oi->grad.empty()) return;
                 const auto& g = oi->grad;
                 // Allocate before the channel loop; lazy allocation inside
                 // the parallel region would race.
                 if (gi->requires_grad) ensure_grad(*gi);
                 if (bi->requires_grad) ensure_grad(*bi);
                 if (xi->requires_grad) ensure_grad(*xi);
#pragma omp parallel for schedule(static) if (c * m >= 4096)
                 for (int64_t ch = 0; ch < c; ++ch) {
                   double sg = 0.0, sgx = 0.0;
                   for (int64_t b = 0; b < batch; ++b) {
                     const size_t base = size_t((b * c + ch) * hw);
                     for (int64_t s2 = 0; s2 < hw; ++s2) {
                       sg += g[base + size_t(s2)];
                       sgx += g[base + size_t(s2)] * (*xhat)[base + size_t(s2)];
                     }
                   }
                   if (gi->requires_grad) gi->grad[size_t(ch)] += sgx;
                   if (bi->requires_grad) bi->grad[size_t(ch)] += sg;
                   if (xi->requires_grad) {
                     auto& gx = xi->grad;
                     const double inv = (*inv_std)[size_t(ch)];
                     const double gm = gi->value[size_t(ch)];
                     if (training) {
                       const double mg = sg / double(m), mgx = sgx / double(m);
                       for (int64_t b = 0; b < batch; ++b) {
                         const size_t base = size_t((b * c + ch) * hw);
                         for (int64_t s2 = 0; s2 < hw; ++s2) {
                           const size_t i = base + size_t(s2);
                           gx[i] += gm * inv * (g[i] - mg - (*xhat)[i] * mgx);
                         }
                       }
                     } else {
                       // Running statistics are constants in inference mode.
                       for (int64_t b = 0; b < batch; ++b) {
                         const size_t base = size_t((b * c + ch) * hw);
                         for (int64_t s2 = 0; s2 < hw; ++s2)
                           gx[base + size_t(s2)] += gm * inv * g[base + size_t(s2)];
                       }
                     }
                   }
                 }
               });
  return out;
}

// ---- shape ops ---------------------------------------------------------------

Tensor concat_features(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    fail(ErrorKind::kShape, "concat_features expects rank-2 inputs");
  if (a.shape()[0] != b.shape()[0])
    fail(ErrorKind::kShape, "concat_features batch mismatch: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const int64_t batch = a.shape()[0], wa = a.shape()[1], wb = b.shape()[1];
  Tensor out({batch, wa + wb});
  for (int64_t r = 0; r < batch; ++r) {
    std::memcpy(out.data() + r * (wa + wb), a.data() + r * wa, size_t(wa) * 8);
    std::memcpy(out.data() + r * (wa + wb) + wa, b.data() + r * wb, size_t(wb) * 8);
  }
  check_finite(out, "concat_features");
  maybe_record(out, wants_grad(a) || wants_grad(b),
               [ai = a.impl(), bi = b.impl(), oi = out.impl(), batch, wa, wb] {
                 if (oi->grad.empty()) return;
                 const auto& g = oi->grad;
                 if (ai->requires_grad) {
                   auto& ga = ensure_grad(*ai);
                   for (int64_t r = 0; r < batch; ++r)
                     for (int64_t j = 0; j < wa; ++j)
                       ga[size_t(r * wa + j)] += g[size_t(r * (wa + wb) + j)];
                 }
                 if (bi->requires_grad) {
                   auto& gb = ensure_grad(*bi);
                   for (int64_t r = 0; r < batch; ++r)
                     for (int64_t j = 0; j < wb; ++j)
                       gb[size_t(r * wb + j)] += g[size_t(r * (wa + wb) + wa + j)];
                 }
               });
  return out;
}

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
  if (a.rank() != 2)
    fail(ErrorKind::kShape, "slice_cols expects a rank-2 input");
  const int64_t batch = a.shape()[0], w = a.shape()[1];
  if (c0 < 0 || c1 > w || c0 >= c1)
    fail(ErrorKind::kShape, "slice_cols range [" + std::to_string(c0) + ", " +
                                std::to_string(c1) + ") invalid for width " + std::to_string(w));
  const int64_t ow = c1 - c0;
  Tensor out({batch, ow});
  for (int64_t r = 0; r < batch; ++r)
    std::memcpy(out.data() + r * ow, a.data() + r * w + c0, size_t(ow) * 8);
  maybe_record(out, wants_grad(a), [ai = a.impl(), oi = out.impl(), batch, w, c0, ow] {
    if (oi->grad.empty() || !ai->requires_grad) return;
    auto& ga = ensure_grad(*ai);
    const auto& g = oi->grad;
    for (int64_t r = 0; r < batch; ++r)
      for (int64_t j = 0; j < ow; ++j)
        ga[size_t(r * w + c0 + j)] += g[size_t(r * ow + j)];
  });
  return out;
}

// ---- softmax ------------------------------------------------------------------

namespace {
void check_softmax_args(const Tensor& z, double tau, const char* op) {
  if (z.rank() != 2)
    fail(ErrorKind::kShape, std::string(op) + " expects [B,K], got " + shape_str(z.shape()));
  if (!(tau > 0.0))
    fail(ErrorKind::kConfig, std::string(op) + " requires tau > 0, got " + std::to_string(tau));
}
}  // namespace

Tensor softmax_t(const Tensor& z, double tau) {
  check_softmax_args(z, tau, "softmax_t");
  const int64_t batch = z.shape()[0], k = z.shape()[1];
  Tensor out({batch, k});
  for (int64_t r = 0; r < batch; ++r) {
    const double* zp = z.data() + r * k;
    double* yp = out.data() + r * k;
    double mx = zp[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, zp[j]);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      yp[j] = std::exp((zp[j] - mx) / tau);
      s += yp[j];
    }
    const double inv = 1.0 / s;
    for (int64_t j = 0; j < k; ++j) yp[j] *= inv;
  }
  check_finite(out, "softmax_t");
  maybe_record(out, wants_grad(z), [zi = z.impl(), oi = out.impl(), batch, k, tau] {
    if (oi->grad.empty() || !zi->requires_grad) return;
    auto& gz = ensure_grad(*zi);
    const auto& g = oi->grad;
    for (int64_t r = 0; r < batch; ++r) {
      const size_t base = size_t(r * k);
      double dot = 0.0;
      for (int64_t j = 0; j < k; ++j) dot += g[base + size_t(j)] * oi->value[base + size_t(j)];
      for (int64_t j = 0; j < k; ++j)
        gz[base + size_t(j)] +=
            oi->value[base + size_t(j)] * (g[base + size_t(j)] - dot) / tau;
    }
  });
  return out;
}

Tensor log_softmax_t(const Tensor& z, double tau) {
  check_softmax_args(z, tau, "log_softmax_t");
  const int64_t batch = z.shape()[0], k = z.shape()[1];
  Tensor out({batch, k});
  for (int64_t r = 0; r < batch; ++r) {
    const double* zp = z.data() + r * k;
    double* yp = out.data() + r * k;
    double mx = zp[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, zp[j]);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += std::exp((zp[j] - mx) / tau);
    const double lse = mx / tau + std::log(s);
    for (int64_t j = 0; j < k; ++j) yp[j] = zp[j] / tau - lse;
  }
  check_finite(out, "log_softmax_t");
  maybe_record(out, wants_grad(z), [zi = z.impl(), oi = out.impl(), batch, k, tau] {
    if (oi->grad.empty() || !zi->requires_grad) return;
    auto& gz = ensure_grad(*zi);
    const auto& g = oi->grad;
    for (int64_t r = 0; r < batch; ++r) {
      const size_t base = size_t(r * k);
      double gsum = 0.0;
      for (int64_t j = 0; j < k; ++j) gsum += g[base + size_t(j)];
      for (int64_t j = 0; j < k; ++j)
        gz[base + size_t(j)] +=
            (g[base + size_t(j)] - std::exp(oi->value[base + size_t(j)]) * gsum) / tau;
    }
  });
  return out;
}

// ---- reductions -----------------------------------------------------------------

Tensor reduce(const Tensor& x, Reduce kind, std::vector<int64_t> axes) {
  const int64_t rank = x.rank();
  std::sort(axes.begin(), axes.end());
  for (size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] < 0 || axes[i] >= rank)
      fail(ErrorKind::kShape, "reduce: axis " + std::to_string(axes[i]) +
                                  " invalid for " + shape_str(x.shape()));
    if (i > 0 && axes[i] == axes[i - 1])
      fail(ErrorKind::kShape, "reduce: duplicate axis " + std::to_string(axes[i]));
  }
  std::vector<bool> reduced(size_t(rank), false);
  for (int64_t a : axes) reduced[size_t(a)] = true;

  Shape out_shape;
  int64_t count = 1;
  for (int64_t d = 0; d < rank; ++d) {
    if (reduced[size_t(d)]) count *= x.shape()[d];
    else out_shape.push_back(x.shape()[d]);
  }

  // Flat input index -> flat output index, reused by the backward pass.
  const int64_t n = x.size();
  auto out_of_in = std::make_shared<std::vector<int64_t>>(size_t(n));
  {
    std::vector<int64_t> idx(size_t(rank), 0);
    for (int64_t flat = 0; flat < n; ++flat) {
      int64_t o = 0;
      for (int64_t d = 0; d < rank; ++d)
        if (!reduced[size_t(d)]) o = o * x.shape()[d] + idx[size_t(d)];
      (*out_of_in)[size_t(flat)] = o;
      for (int64_t d = rank - 1; d >= 0; --d) {
        if (++idx[size_t(d)] < x.shape()[d]) break;
        idx[size_t(d)] = 0;
      }
    }
  }

  const double w = kind == Reduce::kMean ? 1.0 / double(count) : 1.0;
  Tensor out(out_shape);
  for (int64_t flat = 0; flat < n; ++flat)
    out.data()[(*out_of_in)[size_t(flat)]] += x.data()[flat];
  if (kind == Reduce::kMean)
    for (int64_t i = 0; i < out.size(); ++i) out.data()[i] *= w;
  check_finite(out, "reduce");

  maybe_record(out, wants_grad(x), [xi = x.impl(), oi = out.impl(), out_of_in, w] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    auto& gx = ensure_grad(*xi);
    const auto& g = oi->grad;
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += w * g[size_t((*out_of_in)[i])];
  });
  return out;
}

Tensor reduce_all(const Tensor& x, Reduce kind) {
  std::vector<int64_t> axes(size_t(x.rank()));
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = int64_t(i);
  return reduce(x, kind, std::move(axes));
}

}  // namespace hcd
