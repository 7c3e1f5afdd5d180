#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "hcd/dataset.hpp"
#include "hcd/error.hpp"
#include "hcd/rng.hpp"
#include "hcd/teacher.hpp"

using namespace hcd;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("hcd_teacher_" + name)).string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

TeacherDump small_dump() {
  TeacherDump d;
  d.n = 2;
  d.d = 3;
  d.k = 2;
  d.features = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f};
  d.logits = {0.5f, -0.5f, 1.5f, 2.5f};
  return d;
}

}  // namespace

TEST_CASE("teacher dump write/read round-trip") {
  const std::string path = temp_path("roundtrip.hcdt");
  TeacherDump d = small_dump();
  write_teacher_dump(path, d);
  TeacherDump r = read_teacher_dump(path);
  CHECK(r.n == d.n);
  CHECK(r.d == d.d);
  CHECK(r.k == d.k);
  CHECK(r.features == d.features);
  CHECK(r.logits == d.logits);

  // header (magic+version+N+d+K = 20) + 4*(N*d + N*K) + 8-byte checksum
  CHECK(fs::file_size(path) == 20 + 4 * (6 + 4) + 8);
}

TEST_CASE("teacher dump rejects corruption with distinct error kinds") {
  const std::string path = temp_path("corrupt.hcdt");
  write_teacher_dump(path, small_dump());
  const std::vector<char> good = slurp(path);

  auto write_bytes = [&](std::vector<char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
  };

  SUBCASE("wrong magic") {
    std::vector<char> bad = good;
    bad[0] = 'X';
    write_bytes(bad);
    try {
      read_teacher_dump(path);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kFormat);
    }
  }
  SUBCASE("wrong version") {
    std::vector<char> bad = good;
    bad[4] = 9;
    write_bytes(bad);
    try {
      read_teacher_dump(path);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kVersion);
    }
  }
  SUBCASE("truncation is caught, never silently misread") {
    std::vector<char> bad(good.begin(), good.end() - 11);
    write_bytes(bad);
    CHECK_THROWS_AS(read_teacher_dump(path), Error);
  }
  SUBCASE("flipped payload byte fails the checksum") {
    std::vector<char> bad = good;
    bad[24] ^= 0x40;  // inside the features block
    write_bytes(bad);
    try {
      read_teacher_dump(path);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kChecksum);
    }
  }
  SUBCASE("declared sizes must match the byte length") {
    std::vector<char> bad = good;
    bad[8] = 3;  // N: 2 -> 3 without adding payload
    write_bytes(bad);
    try {
      read_teacher_dump(path);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kShape);
    }
  }
  SUBCASE("zero feature vector is rejected") {
    TeacherDump d = small_dump();
    d.features[3] = d.features[4] = d.features[5] = 0.0f;
    write_teacher_dump(path, d);
    try {
      read_teacher_dump(path);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kNumeric);
    }
  }
}

TEST_CASE("synthetic teacher") {
  Dataset ds = gen_dataset(DataKind::kBars, 600, 10, 1, 16, 16, 0.5, 42, 0);

  SUBCASE("quality 1 puts the argmax on the label for every sample") {
    TeacherDump d = synth_teacher(ds, 1.0, 16, 6.0, 0);
    for (int64_t i = 0; i < d.n; ++i) {
      int64_t best = 0;
      for (int64_t j = 1; j < d.k; ++j)
        if (d.logits[size_t(i * d.k + j)] > d.logits[size_t(i * d.k + best)]) best = j;
      CHECK(best == int64_t(ds.labels[size_t(i)]));
    }
  }
  SUBCASE("quality 0 lands near chance accuracy") {
    TeacherDump d = synth_teacher(ds, 0.0, 16, 6.0, 7);
    int64_t hits = 0;
    for (int64_t i = 0; i < d.n; ++i) {
      int64_t best = 0;
      for (int64_t j = 1; j < d.k; ++j)
        if (d.logits[size_t(i * d.k + j)] > d.logits[size_t(i * d.k + best)]) best = j;
      if (best == int64_t(ds.labels[size_t(i)])) ++hits;
    }
    const double acc = 100.0 * double(hits) / double(d.n);
    CHECK(acc >= 10.0 - 5.0);
    CHECK(acc <= 10.0 + 5.0);
  }
  SUBCASE("fixed seed gives identical dump bytes") {
    const std::string p1 = temp_path("seed1.hcdt");
    const std::string p2 = temp_path("seed2.hcdt");
    write_teacher_dump(p1, synth_teacher(ds, 0.9, 8, 6.0, 123));
    write_teacher_dump(p2, synth_teacher(ds, 0.9, 8, 6.0, 123));
    CHECK(slurp(p1) == slurp(p2));
  }
  SUBCASE("quality outside [0,1] is a config error") {
    CHECK_THROWS_AS(synth_teacher(ds, 1.5, 8, 6.0, 0), Error);
  }
}
