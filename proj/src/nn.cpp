#include "hcd/nn.hpp"

#include <cmath>
#include <unordered_map>

#include "hcd/io.hpp"
#include "hcd/rng.hpp"

namespace hcd {

// ---- ParamStore ----------------------------------------------------------

void ParamStore::check_unique(const std::string& name) const {
  if (find(name))
    fail(ErrorKind::kState, "duplicate parameter name: " + name);
}

Tensor ParamStore::add_param(const std::string& name, Shape shape, Init init,
                             int64_t fan_in) {
  check_unique(name);
  Tensor t(std::move(shape), 0.0, /*requires_grad=*/true);
  params_.push_back(Entry{name, t, init, fan_in});
  return t;
}

Tensor ParamStore::add_buffer(const std::string& name, Shape shape, double fill) {
  check_unique(name);
  Tensor t(std::move(shape), fill, /*requires_grad=*/false);
  buffers_.push_back(Entry{name, t, Init::kZeros, 0, fill});
  return t;
}

const Tensor* ParamStore::find(const std::string& name) const {
  for (const auto& e : params_)
    if (e.name == name) return &e.tensor;
  for (const auto& e : buffers_)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

int64_t ParamStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& e : params_) n += e.tensor.size();
  return n;
}

void init_params(ParamStore& store, uint64_t seed) {
  Rng rng(seed);
  for (auto& e : store.params()) {
    switch (e.init) {
      case Init::kHeUniform: {
        const double bound = std::sqrt(6.0 / double(e.fan_in));
        for (int64_t i = 0; i < e.tensor.size(); ++i)
          e.tensor.data()[i] = rng.uniform(-bound, bound);
        break;
      }
      case Init::kZeros:
        std::fill(e.tensor.values().begin(), e.tensor.values().end(), 0.0);
        break;
      case Init::kOnes:
        std::fill(e.tensor.values().begin(), e.tensor.values().end(), 1.0);
        break;
    }
    e.tensor.zero_grad();
  }
  for (auto& e : store.buffers())
    std::fill(e.tensor.values().begin(), e.tensor.values().end(), e.fill);
}

// ---- layers ---------------------------------------------------------------

ConvBlock::ConvBlock(ParamStore& store, const std::string& prefix, int64_t cin,
                     int64_t cout) {
  kernel_ = store.add_param(prefix + ".conv", {cout, cin, 3, 3}, Init::kHeUniform, 9 * cin);
  gamma_ = store.add_param(prefix + ".bn.gamma", {cout}, Init::kOnes);
  beta_ = store.add_param(prefix + ".bn.beta", {cout}, Init::kZeros);
  run_mean_ = store.add_buffer(prefix + ".bn.running_mean", {cout}, 0.0);
  run_var_ = store.add_buffer(prefix + ".bn.running_var", {cout}, 1.0);
}

Tensor ConvBlock::forward(const Tensor& x, bool training, bool update_running) const {
  Tensor y = conv2d(x, kernel_);
  y = batchnorm2d(y, gamma_, beta_, run_mean_, run_var_, training,
                  training && update_running, kBnMomentum, kBnEps);
  return relu(y);
}

AffineMap::AffineMap(ParamStore& store, const std::string& prefix, int64_t in,
                     int64_t out) {
  w_ = store.add_param(prefix + ".w", {in, out}, Init::kHeUniform, in);
  b_ = store.add_param(prefix + ".b", {out}, Init::kZeros);
}

Tensor AffineMap::forward(const Tensor& x) const { return add_bias(matmul(x, w_), b_); }

// ---- student ----------------------------------------------------------------

StudentNet::StudentNet(ParamStore& store, int64_t in_channels, int64_t height,
                       int64_t width, int64_t classes, std::vector<int64_t> channels)
    : in_channels_(in_channels), height_(height), width_(width), classes_(classes) {
  if (channels.empty()) fail(ErrorKind::kConfig, "student needs at least one stage");
  int64_t h = height, w = width, cin = in_channels;
  for (size_t i = 0; i < channels.size(); ++i) {
    if (h < 2 || w < 2 || h % 2 || w % 2)
      fail(ErrorKind::kConfig,
           "input " + std::to_string(height) + "x" + std::to_string(width) +
               " cannot be halved through " + std::to_string(channels.size()) + " stages");
    blocks_.emplace_back(store, "student.stage" + std::to_string(i + 1), cin, channels[i]);
    cin = channels[i];
    h /= 2;
    w /= 2;
  }
  classifier_.emplace_back(store, "student.classifier", cin, classes);
}

int64_t StudentNet::stage_channels(int64_t stage_index) const {
  if (stage_index < 0 || stage_index >= num_stages())
    fail(ErrorKind::kConfig, "stage index out of range: " + std::to_string(stage_index));
  return blocks_[size_t(stage_index)].out_channels();
}

StudentOutput StudentNet::forward(const Tensor& x, bool training,
                                  bool update_running) const {
  if (x.rank() != 4 || x.shape()[1] != in_channels_ || x.shape()[2] != height_ ||
      x.shape()[3] != width_)
    fail(ErrorKind::kShape,
         "student expects [B, " + std::to_string(in_channels_) + ", " +
             std::to_string(height_) + ", " + std::to_string(width_) + "], got " +
             shape_str(x.shape()));
  StudentOutput out;
  Tensor cur = x;
  for (const auto& block : blocks_) {
    cur = avg_pool2x2(block.forward(cur, training, update_running));
    out.stage_feats.push_back(cur);
  }
  out.logits = classifier_[0].forward(adaptive_avg_pool(cur));
  return out;
}

// ---- optimizer -----------------------------------------------------------------

void SgdConfig::validate() const {
  if (!(lr > 0.0)) fail(ErrorKind::kConfig, "learning rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    fail(ErrorKind::kConfig, "momentum must be in [0, 1), got " + std::to_string(momentum));
  if (weight_decay < 0.0) fail(ErrorKind::kConfig, "weight decay must be >= 0");
  if (epochs < 1) fail(ErrorKind::kConfig, "epochs must be >= 1");
  if (batch_size < 1) fail(ErrorKind::kConfig, "batch size must be >= 1");
}

Sgd::Sgd(ParamStore& store, SgdConfig cfg) : store_(&store), cfg_(cfg) {
  cfg_.validate();
  velocity_.reserve(store.params().size());
  for (const auto& e : store.params())
    velocity_.emplace_back(size_t(e.tensor.size()), 0.0);
}

void Sgd::step(double lr) {
  auto& params = store_->params();
  if (velocity_.size() != params.size())
    fail(ErrorKind::kState, "parameter set changed under the optimizer");
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p].tensor;
    if (!t.has_grad())
      fail(ErrorKind::kState, "missing gradient for trainable parameter " + params[p].name);
    auto& v = velocity_[p];
    const auto& g = t.grad();
    for (int64_t i = 0; i < t.size(); ++i) {
      v[size_t(i)] = cfg_.momentum * v[size_t(i)] + g[size_t(i)] +
                     cfg_.weight_decay * t.data()[i];
      t.data()[i] -= lr * v[size_t(i)];
    }
    t.zero_grad();
  }
}

// ---- checkpoint -----------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[4] = {'H', 'C', 'D', 'P'};
constexpr uint32_t kCheckpointVersion = 1;

void write_record(BinaryWriter& w, const ParamStore::Entry& e) {
  w.u32(uint32_t(e.name.size()));
  w.bytes(e.name.data(), e.name.size());
  w.u32(uint32_t(e.tensor.rank()));
  for (int64_t d : e.tensor.shape()) w.u32(uint32_t(d));
  for (int64_t i = 0; i < e.tensor.size(); ++i) w.f32(float(e.tensor.data()[i]));
}
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store) {
  BinaryWriter w(path);
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  for (const auto& e : store.params()) write_record(w, e);
  for (const auto& e : store.buffers()) write_record(w, e);
  w.close();
}

void load_checkpoint(const std::string& path, ParamStore& store) {
  BinaryReader r(path);
  r.expect_magic(kCheckpointMagic, "HCDP");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    fail(ErrorKind::kVersion, "unsupported checkpoint version " + std::to_string(version) +
                                  " in " + path);
  struct Record {
    Shape shape;
    std::vector<float> data;
  };
  std::unordered_map<std::string, Record> records;
  while (r.remaining() > 0) {
    const uint32_t name_len = r.u32();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const uint32_t rank = r.u32();
    Record rec;
    for (uint32_t i = 0; i < rank; ++i) rec.shape.push_back(int64_t(r.u32()));
    rec.data.resize(size_t(numel(rec.shape)));
    r.bytes(rec.data.data(), rec.data.size() * 4);
    records.emplace(std::move(name), std::move(rec));
  }
  auto fill = [&](ParamStore::Entry& e) {
    auto it = records.find(e.name);
    if (it == records.end())
      fail(ErrorKind::kFormat, "checkpoint " + path + " is missing tensor " + e.name);
    if (it->second.shape != e.tensor.shape())
      fail(ErrorKind::kShape, "checkpoint tensor " + e.name + " has shape " +
                                  shape_str(it->second.shape) + ", expected " +
                                  shape_str(e.tensor.shape()));
    for (int64_t i = 0; i < e.tensor.size(); ++i)
      e.tensor.data()[i] = double(it->second.data[size_t(i)]);
    e.tensor.zero_grad();
  };
  for (auto& e : store.params()) fill(e);
  for (auto& e : store.buffers()) fill(e);
}

}  // namespace hcd
