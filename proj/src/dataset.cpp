#include "hcd/dataset.hpp"

#include <cmath>

#include "hcd/error.hpp"
#include "hcd/io.hpp"
#include "hcd/rng.hpp"

namespace hcd {

namespace {
constexpr char kDatasetMagic[4] = {'H', 'C', 'D', 'X'};
constexpr uint32_t kDatasetVersion = 1;
}  // namespace

void write_dataset(const std::string& path, const Dataset& ds) {
  if (int64_t(ds.images.size()) != ds.n * ds.c * ds.h * ds.w ||
      int64_t(ds.labels.size()) != ds.n)
    fail(ErrorKind::kShape, "dataset arrays disagree with declared dimensions");
  for (uint32_t y : ds.labels)
    if (int64_t(y) >= ds.k)
      fail(ErrorKind::kShape, "label " + std::to_string(y) + " out of range for K=" +
                                  std::to_string(ds.k));
  BinaryWriter w(path);
  w.magic(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(uint32_t(ds.n));
  w.u32(uint32_t(ds.c));
  w.u32(uint32_t(ds.h));
  w.u32(uint32_t(ds.w));
  w.u32(uint32_t(ds.k));
  uint64_t h = fnv1a64(ds.images.data(), ds.images.size() * 4);
  h = fnv1a64(ds.labels.data(), ds.labels.size() * 4, h);
  w.bytes(ds.images.data(), ds.images.size() * 4);
  w.bytes(ds.labels.data(), ds.labels.size() * 4);
  w.u64(h);
  w.close();
}

Dataset read_dataset(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kDatasetMagic, "HCDX");
  const uint32_t version = r.u32();
  if (version != kDatasetVersion)
    fail(ErrorKind::kVersion,
         "unsupported dataset version " + std::to_string(version) + " in " + path);
  Dataset ds;
  ds.n = r.u32();
  ds.c = r.u32();
  ds.h = r.u32();
  ds.w = r.u32();
  ds.k = r.u32();
  const uint64_t payload = uint64_t(ds.n) * uint64_t(ds.c * ds.h * ds.w) * 4 +
                           uint64_t(ds.n) * 4;
  if (r.size() != 28 + payload + 8)
    fail(ErrorKind::kShape, "dataset " + path + " declares " + std::to_string(payload) +
                                " payload bytes but the file has " +
                                std::to_string(r.size()) + " total");
  const uint64_t expect = fnv1a64(r.cursor(), size_t(payload));
  ds.images.resize(size_t(ds.n * ds.c * ds.h * ds.w));
  ds.labels.resize(size_t(ds.n));
  r.bytes(ds.images.data(), ds.images.size() * 4);
  r.bytes(ds.labels.data(), ds.labels.size() * 4);
  const uint64_t stored = r.u64();
  if (stored != expect)
    fail(ErrorKind::kChecksum, "dataset " + path + " payload checksum mismatch");
  for (uint32_t y : ds.labels)
    if (int64_t(y) >= ds.k)
      fail(ErrorKind::kFormat, "dataset " + path + " has label " + std::to_string(y) +
                                   " >= K=" + std::to_string(ds.k));
  for (float v : ds.images)
    if (!std::isfinite(v))
      fail(ErrorKind::kNumeric, "dataset " + path + " contains non-finite pixels");
  return ds;
}

DataKind parse_data_kind(const std::string& s) {
  if (s == "blobs") return DataKind::kBlobs;
  if (s == "bars") return DataKind::kBars;
  fail(ErrorKind::kConfig, "unknown dataset kind: " + s + " (expected blobs|bars)");
}

Dataset gen_dataset(DataKind kind, int64_t n, int64_t k, int64_t c, int64_t h,
                    int64_t w, double noise, uint64_t seed, uint64_t salt) {
  if (k < 2) fail(ErrorKind::kConfig, "dataset needs K >= 2 classes");
  if (n < 1 || c < 1 || h < 1 || w < 1)
    fail(ErrorKind::kConfig, "dataset dimensions must be positive");
  Dataset ds;
  ds.n = n;
  ds.c = c;
  ds.h = h;
  ds.w = w;
  ds.k = k;
  ds.images.resize(size_t(n * c * h * w));
  ds.labels.resize(size_t(n));

  Rng class_rng = Rng(seed).fork(0x1);
  Rng sample_rng = Rng(seed).fork(Rng::mix(0x2, salt));

  // Balanced labels in shuffled order.
  for (int64_t i = 0; i < n; ++i) ds.labels[size_t(i)] = uint32_t(i % k);
  sample_rng.shuffle(ds.labels);

  const int64_t plane = c * h * w;
  switch (kind) {
    case DataKind::kBlobs: {
      std::vector<double> means(size_t(k * plane));
      for (auto& v : means) v = class_rng.normal();
      for (int64_t i = 0; i < n; ++i) {
        const double* mu = means.data() + int64_t(ds.labels[size_t(i)]) * plane;
        float* img = ds.images.data() + i * plane;
        for (int64_t p = 0; p < plane; ++p)
          img[p] = float(mu[p] + noise * sample_rng.normal());
      }
      break;
    }
    case DataKind::kBars: {
      // Class identity lives in the orientation/frequency of a full-image
      // stripe pattern; a per-sample phase shift removes fixed per-pixel
      // cues, so classification needs long-range structure.
      std::vector<double> angle(static_cast<size_t>(k), 0.0);
      std::vector<double> freq(static_cast<size_t>(k), 0.0);
      for (int64_t cls = 0; cls < k; ++cls) {
        angle[size_t(cls)] = 3.141592653589793 * double(cls) / double(k);
        freq[size_t(cls)] = 2.0 + double(cls % 3);
        (void)class_rng.next_u64();  // reserve stream slot per class
      }
      for (int64_t i = 0; i < n; ++i) {
        const int64_t cls = ds.labels[size_t(i)];
        const double ca = std::cos(angle[size_t(cls)]);
        const double sa = std::sin(angle[size_t(cls)]);
        const double f = freq[size_t(cls)];
        const double phase = sample_rng.uniform(0.0, 6.283185307179586);
        float* img = ds.images.data() + i * plane;
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
              const double proj = ca * (double(x) / double(w)) + sa * (double(y) / double(h));
              const double v = std::sin(6.283185307179586 * f * proj + phase);
              img[(ch * h + y) * w + x] = float(v + noise * sample_rng.normal());
            }
      }
      break;
    }
  }
  return ds;
}

}  // namespace hcd
