#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hcd/tensor.hpp"

namespace hcd {

inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEps = 1e-5;

enum class Init { kHeUniform, kZeros, kOnes };

// Ordered, name-unique registry of trainable parameters plus non-trainable
// buffers (BN running stats). Iteration order is construction order, which
// pins initialization, optimizer stepping, and checkpoint layout.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    Init init = Init::kZeros;
    int64_t fan_in = 0;  // He-uniform only
    double fill = 0.0;   // buffer reset value
  };

  Tensor add_param(const std::string& name, Shape shape, Init init, int64_t fan_in = 0);
  Tensor add_buffer(const std::string& name, Shape shape, double fill);

  std::vector<Entry>& params() { return params_; }
  const std::vector<Entry>& params() const { return params_; }
  std::vector<Entry>& buffers() { return buffers_; }
  const std::vector<Entry>& buffers() const { return buffers_; }

  const Tensor* find(const std::string& name) const;
  int64_t scalar_count() const;

 private:
  void check_unique(const std::string& name) const;
  std::vector<Entry> params_;
  std::vector<Entry> buffers_;
};

// Fills every parameter from its init spec, deterministically in registry
// order. Buffers reset to their construction fill.
void init_params(ParamStore& store, uint64_t seed);

// Conv(3x3, pad 1) -> BN -> ReLU.
class ConvBlock {
 public:
  ConvBlock(ParamStore& store, const std::string& prefix, int64_t cin, int64_t cout);
  Tensor forward(const Tensor& x, bool training, bool update_running) const;
  int64_t out_channels() const { return kernel_.shape()[0]; }

 private:
  Tensor kernel_, gamma_, beta_;
  mutable Tensor run_mean_, run_var_;
};

// y = x W + b
class AffineMap {
 public:
  AffineMap(ParamStore& store, const std::string& prefix, int64_t in, int64_t out);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor w_, b_;
};

struct StudentOutput {
  Tensor logits;                    // [B, K]
  std::vector<Tensor> stage_feats;  // one per stage, shrinking spatial extent
};

// Small staged CNN: each stage is ConvBlock + 2x2 average downsample; a
// global pool plus affine classifier sits on the last stage.
class StudentNet {
 public:
  StudentNet(ParamStore& store, int64_t in_channels, int64_t height, int64_t width,
             int64_t classes, std::vector<int64_t> channels);

  StudentOutput forward(const Tensor& x, bool training, bool update_running = true) const;

  int64_t num_stages() const { return int64_t(blocks_.size()); }
  int64_t stage_channels(int64_t stage_index) const;  // 0-based
  int64_t classes() const { return classes_; }

 private:
  std::vector<ConvBlock> blocks_;
  std::vector<AffineMap> classifier_;  // exactly one; vector defers construction
  int64_t in_channels_, height_, width_, classes_;
};

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int64_t epochs = 30;
  int64_t batch_size = 64;
  int64_t lr_decay_epoch = 20;
  double lr_decay_factor = 0.1;
  void validate() const;
};

// v <- momentum*v + g + wd*theta; theta <- theta - lr*v. Grads are cleared
// after the step; a trainable parameter without a gradient is an error.
class Sgd {
 public:
  Sgd(ParamStore& store, SgdConfig cfg);
  void step(double lr);
  const SgdConfig& config() const { return cfg_; }

 private:
  ParamStore* store_;
  SgdConfig cfg_;
  std::vector<std::vector<double>> velocity_;
};

// "HCDP" checkpoint: magic, u32 version, then per-tensor records of
// (u32 name length, name bytes, u32 rank, u32 dims..., f32 LE payload),
// params first, buffers after, in registry order.
void save_checkpoint(const std::string& path, const ParamStore& store);
// Fills every store entry from the file by name; file entries that the
// store does not declare are ignored (a student-only store can read a
// checkpoint that also carries projector heads).
void load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace hcd
