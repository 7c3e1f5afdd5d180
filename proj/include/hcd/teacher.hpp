#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hcd/dataset.hpp"

namespace hcd {

// Frozen teacher as data: index-aligned penultimate features [N,d] and
// logits [N,K]. On disk ("HCDT"): magic, u32 version=1, u32 N, u32 d,
// u32 K, f32 LE features row-major, f32 LE logits row-major, u64 FNV-1a
// checksum of the payload bytes.
struct TeacherDump {
  int64_t n = 0, d = 0, k = 0;
  std::vector<float> features;  // n*d
  std::vector<float> logits;    // n*k
};

void write_teacher_dump(const std::string& path, const TeacherDump& dump);
TeacherDump read_teacher_dump(const std::string& path);

// Desk-scale stand-in for a frozen encoder. Logits mix a confident margin
// on the true class with noise, so argmax accuracy tracks `quality`;
// features are a fixed random projection of whole-image statistics plus a
// class-mean embedding, i.e. deliberately global-context flavored.
TeacherDump synth_teacher(const Dataset& ds, double quality, int64_t d,
                          double margin, uint64_t seed);

}  // namespace hcd
