#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hcd {

// In-memory image classification dataset; f32 storage mirrors the on-disk
// "HCDX" layout (magic, u32 version, u32 N/C/H/W/K, f32 images row-major,
// u32 labels, u64 FNV-1a checksum of the payload).
struct Dataset {
  int64_t n = 0, c = 0, h = 0, w = 0, k = 0;
  std::vector<float> images;    // n*c*h*w
  std::vector<uint32_t> labels;  // n, each < k
};

void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

enum class DataKind {
  kBlobs,  // class-conditional Gaussian around a per-class mean image
  kBars,   // oriented global stripe patterns with random phase
};
DataKind parse_data_kind(const std::string& s);

// Deterministic generator. Class-level structure depends on seed only, so
// train/test splits built with different salts share the same classes.
Dataset gen_dataset(DataKind kind, int64_t n, int64_t k, int64_t c, int64_t h,
                    int64_t w, double noise, uint64_t seed, uint64_t salt);

}  // namespace hcd
