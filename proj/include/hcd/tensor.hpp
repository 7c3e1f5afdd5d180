#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hcd/error.hpp"

namespace hcd {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Graph;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward touches it
  bool requires_grad = false;
  Graph* graph = nullptr;  // graph that recorded the producing op
  int64_t node = -1;       // index of that op on the tape
};
}  // namespace detail

// Dense f64 tensor with value semantics over a shared buffer. Copies alias
// the same storage; clone() makes a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t rank() const { return int64_t(impl_->shape.size()); }
  int64_t size() const { return int64_t(impl_->value.size()); }

  double* data() { return impl_->value.data(); }
  const double* data() const { return impl_->value.data(); }
  std::vector<double>& values() { return impl_->value; }
  const std::vector<double>& values() const { return impl_->value; }

  // Value of a single-element tensor.
  double item() const;
  double at(std::initializer_list<int64_t> idx) const;
  double& at(std::initializer_list<int64_t> idx);

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg);

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& grad();
  void zero_grad();  // drops the buffer entirely

  // Deep copy of values; grad-free, unrecorded.
  Tensor clone() const;
  // Same values (copied), requires_grad=false, outside any graph.
  Tensor detach() const;

  std::shared_ptr<detail::TensorImpl>& impl() { return impl_; }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Ops append closures while a Recording is active; the
// recording order is a topological order, so backward just walks the tape
// in reverse from the loss node. Single-threaded per graph by contract.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad leaf.
  // Errors: non-scalar loss, loss not recorded on this graph, second call.
  void backward(const Tensor& loss);

  int64_t record(std::function<void()> fn);
  int64_t size() const { return int64_t(tape_.size()); }
  bool spent() const { return spent_; }

  static Graph* active() noexcept;

 private:
  friend class Recording;
  std::vector<std::function<void()>> tape_;
  bool spent_ = false;
};

// RAII activation of a graph on the current thread.
class Recording {
 public:
  explicit Recording(Graph& g);
  ~Recording();
  Recording(const Recording&) = delete;
  Recording& operator=(const Recording&) = delete;

 private:
  Graph* prev_;
};

// Debug/test guard: when enabled, every op forward scans its output for
// NaN/Inf and throws kNumeric. Defaults to on in non-NDEBUG builds.
void set_finite_checks(bool on);
bool finite_checks();

// When non-null, relu-family ops fold their activation mask into *sink.
// The gradient checker uses this to detect perturbations that cross a kink.
struct KinkTrace {
  uint64_t hash = 0xcbf29ce484222325ULL;
};
void set_kink_trace(KinkTrace* sink);

// ---- primitive ops ----------------------------------------------------
// Binary ops require identical shapes (no broadcasting beyond scalars).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
// max(0, x - threshold)
Tensor max_with_scalar(const Tensor& a, double threshold);
Tensor sqrt_elem(const Tensor& a);

// y[B,q] = x[B,p] * w[p,q]
Tensor matmul(const Tensor& x, const Tensor& w);
// y[B,q] = x[B,q] + bias[q] broadcast over rows
Tensor add_bias(const Tensor& x, const Tensor& bias);

// 3x3 cross-correlation, stride 1, pad 1; x[B,C,H,W], k[O,C,3,3]
Tensor conv2d(const Tensor& x, const Tensor& k);

// Batch norm over a [B,C,H,W] tensor, per-channel statistics.
// training=true normalizes with batch stats (requires B*H*W > 1) and, when
// update_running is set, folds them into running_mean/running_var with the
// given momentum. training=false normalizes with the running buffers.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool training,
                   bool update_running, double momentum, double eps);

// [B,C,H,W] -> [B,C]: mean over all spatial positions.
Tensor adaptive_avg_pool(const Tensor& x);
// [B,C,H,W] -> [B,C,H/2,W/2]; the student's stride-2 downsample.
Tensor avg_pool2x2(const Tensor& x);

// Column-wise concat of two [B,*] matrices.
Tensor concat_features(const Tensor& a, const Tensor& b);
// Columns [c0, c1) of a [B,*] matrix.
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1);

// Row-wise tempered softmax over [B,K]; tau > 0.
Tensor softmax_t(const Tensor& z, double tau);
Tensor log_softmax_t(const Tensor& z, double tau);

enum class Reduce { kSum, kMean };
// Removes the reduced axes from the shape; axes must be valid and unique.
Tensor reduce(const Tensor& x, Reduce kind, std::vector<int64_t> axes);
Tensor reduce_all(const Tensor& x, Reduce kind);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace hcd
