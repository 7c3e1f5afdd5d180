#include "hcd/teacher.hpp"

#include <cmath>

#include "hcd/error.hpp"
#include "hcd/io.hpp"
#include "hcd/rng.hpp"

namespace hcd {

namespace {
constexpr char kTeacherMagic[4] = {'H', 'C', 'D', 'T'};
constexpr uint32_t kTeacherVersion = 1;
}  // namespace

void write_teacher_dump(const std::string& path, const TeacherDump& dump) {
  if (int64_t(dump.features.size()) != dump.n * dump.d ||
      int64_t(dump.logits.size()) != dump.n * dump.k)
    fail(ErrorKind::kShape, "teacher dump arrays disagree with declared N/d/K");
  BinaryWriter w(path);
  w.magic(kTeacherMagic);
  w.u32(kTeacherVersion);
  w.u32(uint32_t(dump.n));
  w.u32(uint32_t(dump.d));
  w.u32(uint32_t(dump.k));
  uint64_t h = fnv1a64(dump.features.data(), dump.features.size() * 4);
  h = fnv1a64(dump.logits.data(), dump.logits.size() * 4, h);
  w.bytes(dump.features.data(), dump.features.size() * 4);
  w.bytes(dump.logits.data(), dump.logits.size() * 4);
  w.u64(h);
  w.close();
}

TeacherDump read_teacher_dump(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kTeacherMagic, "HCDT");
  const uint32_t version = r.u32();
  if (version != kTeacherVersion)
    fail(ErrorKind::kVersion,
         "unsupported teacher dump version " + std::to_string(version) + " in " + path);
  TeacherDump dump;
  dump.n = r.u32();
  dump.d = r.u32();
  dump.k = r.u32();
  const uint64_t payload = uint64_t(dump.n) * uint64_t(dump.d + dump.k) * 4;
  if (r.size() != 20 + payload + 8)
    fail(ErrorKind::kShape, "teacher dump " + path + " declares " +
                                std::to_string(payload) + " payload bytes but the file has " +
                                std::to_string(r.size()) + " total");
  const uint64_t expect = fnv1a64(r.cursor(), size_t(payload));
  dump.features.resize(size_t(dump.n * dump.d));
  dump.logits.resize(size_t(dump.n * dump.k));
  r.bytes(dump.features.data(), dump.features.size() * 4);
  r.bytes(dump.logits.data(), dump.logits.size() * 4);
  const uint64_t stored = r.u64();
  if (stored != expect)
    fail(ErrorKind::kChecksum, "teacher dump " + path + " payload checksum mismatch");
  for (float v : dump.features)
    if (!std::isfinite(v))
      fail(ErrorKind::kNumeric, "teacher dump " + path + " has non-finite features");
  for (float v : dump.logits)
    if (!std::isfinite(v))
      fail(ErrorKind::kNumeric, "teacher dump " + path + " has non-finite logits");
  for (int64_t i = 0; i < dump.n; ++i) {
    double norm = 0.0;
    for (int64_t j = 0; j < dump.d; ++j) {
      const double v = dump.features[size_t(i * dump.d + j)];
      norm += v * v;
    }
    if (norm <= 0.0)
      fail(ErrorKind::kNumeric,
           "teacher dump " + path + " has a zero feature vector at sample " + std::to_string(i));
  }
  return dump;
}

TeacherDump synth_teacher(const Dataset& ds, double quality, int64_t d,
                          double margin, uint64_t seed) {
  if (quality < 0.0 || quality > 1.0)
    fail(ErrorKind::kConfig, "teacher quality must be in [0, 1]");
  if (d < 1) fail(ErrorKind::kConfig, "teacher feature width must be >= 1");
  TeacherDump dump;
  dump.n = ds.n;
  dump.d = d;
  dump.k = ds.k;
  dump.features.resize(size_t(ds.n * d));
  dump.logits.resize(size_t(ds.n * ds.k));

  Rng rng(seed);
  Rng embed_rng = rng.fork(0x10);
  Rng proj_rng = rng.fork(0x20);
  Rng noise_rng = rng.fork(0x30);

  // Class-mean embeddings [K,d] and a fixed projection of whole-image
  // statistics (overall mean/std + row means + column means).
  const int64_t stat_dim = 2 + ds.h + ds.w;
  std::vector<double> embed(size_t(ds.k * d));
  for (auto& v : embed) v = embed_rng.normal();
  std::vector<double> proj(size_t(stat_dim * d));
  const double proj_scale = 1.0 / std::sqrt(double(stat_dim));
  for (auto& v : proj) v = proj_scale * proj_rng.normal();

  std::vector<double> stats(static_cast<size_t>(stat_dim), 0.0);
  const int64_t plane = ds.c * ds.h * ds.w;
  for (int64_t i = 0; i < ds.n; ++i) {
    const float* img = ds.images.data() + i * plane;
    double mean = 0.0;
    for (int64_t p = 0; p < plane; ++p) mean += img[p];
    mean /= double(plane);
    double var = 0.0;
    for (int64_t p = 0; p < plane; ++p) {
      const double dv = img[p] - mean;
      var += dv * dv;
    }
    stats[0] = mean;
    stats[1] = std::sqrt(var / double(plane));
    for (int64_t y = 0; y < ds.h; ++y) {
      double s = 0.0;
      for (int64_t ch = 0; ch < ds.c; ++ch)
        for (int64_t x = 0; x < ds.w; ++x) s += img[(ch * ds.h + y) * ds.w + x];
      stats[size_t(2 + y)] = s / double(ds.c * ds.w);
    }
    for (int64_t x = 0; x < ds.w; ++x) {
      double s = 0.0;
      for (int64_t ch = 0; ch < ds.c; ++ch)
        for (int64_t y = 0; y < ds.h; ++y) s += img[(ch * ds.h + y) * ds.w + x];
      stats[size_t(2 + ds.h + x)] = s / double(ds.c * ds.h);
    }

    const int64_t y = ds.labels[size_t(i)];
    for (int64_t j = 0; j < d; ++j) {
      double f = embed[size_t(y * d + j)];
      for (int64_t s = 0; s < stat_dim; ++s) f += stats[size_t(s)] * proj[size_t(s * d + j)];
      dump.features[size_t(i * d + j)] = float(f);
    }
    for (int64_t cls = 0; cls < ds.k; ++cls) {
      const double target = cls == y ? margin : 0.0;
      const double noise = noise_rng.normal();
      dump.logits[size_t(i * ds.k + cls)] =
          float(quality * target + (1.0 - quality) * noise);
    }
  }
  return dump;
}

}  // namespace hcd
