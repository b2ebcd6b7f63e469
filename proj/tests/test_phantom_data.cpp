#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "reconformer/dataset.hpp"
#include "reconformer/metrics.hpp"
#include "reconformer/phantom.hpp"
#include "reconformer/record.hpp"
#include "reconformer/rng.hpp"
#include "test_util.hpp"

using namespace reconformer;

namespace {

std::string temp_dir(const char* tag) {
  auto dir = std::filesystem::temp_directory_path() / (std::string("reconformer_test_") + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("gen_phantom: deterministic, bounded, complex-valued") {
  PhantomSpec spec;
  spec.height = spec.width = 64;
  spec.seed = 11;
  ComplexImage a = gen_phantom(spec);
  ComplexImage b = gen_phantom(spec);
  CHECK(a.data == b.data);

  spec.seed = 12;
  ComplexImage c = gen_phantom(spec);
  CHECK(a.data != c.data);

  auto mag = magnitude(a);
  for (double m : mag) CHECK(m <= 1.5 + 1e-6);

  double imag_energy = 0;
  for (int r = 0; r < 64; ++r)
    for (int x = 0; x < 64; ++x) imag_energy += std::fabs(a.im(r, x));
  CHECK(imag_energy > 0.0);  // phase field present
}

TEST_CASE("gen_phantom: mean magnitude over 1000 seeds stays in calibration bounds") {
  PhantomSpec spec;
  spec.height = spec.width = 64;
  double total = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    spec.seed = seed;
    auto mag = magnitude(gen_phantom(spec));
    double m = 0;
    for (double v : mag) m += v;
    total += m / mag.size();
  }
  double mean = total / 1000.0;
  CHECK(mean > 0.1);
  CHECK(mean < 0.8);
}

TEST_CASE("gen_phantom rejects degenerate dimensions") {
  PhantomSpec spec;
  spec.height = 8;
  spec.width = 64;
  CHECK_THROWS_AS(gen_phantom(spec), Error);
}

TEST_CASE("TensorRecord: round trip preserves bytes and values") {
  std::string dir = temp_dir("records");
  TensorRecord rec = TensorRecord::f32("gt", {2, 3}, {1.5f, -2.25f, 0.0f, 1e-30f, 3e30f, -0.0f});
  save_record(dir + "/a.rfk", rec);
  TensorRecord back = load_record(dir + "/a.rfk", "gt");
  CHECK(back.name == "gt");
  CHECK(back.extents == std::vector<std::uint32_t>{2, 3});
  CHECK(std::memcmp(back.data_f32.data(), rec.data_f32.data(), 6 * sizeof(float)) == 0);
}

TEST_CASE("TensorRecord: empty extents and bad files are rejected") {
  std::string dir = temp_dir("badrecords");
  TensorRecord rec = TensorRecord::f32("x", {0}, {});
  CHECK_THROWS_AS(save_record(dir + "/bad.rfk", rec), Error);

  // bad magic
  {
    std::ofstream out(dir + "/magic.rfk", std::ios::binary);
    out << "JUNKdata";
  }
  CHECK_THROWS_AS(load_records(dir + "/magic.rfk"), Error);

  // truncation: write a valid record, then cut it short
  save_record(dir + "/ok.rfk", TensorRecord::f32("t", {4}, {1, 2, 3, 4}));
  auto bytes = read_bytes(dir + "/ok.rfk");
  {
    std::ofstream out(dir + "/trunc.rfk", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
  }
  try {
    load_records(dir + "/trunc.rfk");
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  // dtype mismatch on typed read
  save_record(dir + "/f64.rfk", TensorRecord::f64("t", {2}, {1.0, 2.0}));
  TensorRecord f64rec = load_record(dir + "/f64.rfk", "t");
  CHECK(f64rec.dtype == TensorRecord::kFloat64);
}

TEST_CASE("TensorRecord: fuzzed multi-record files round-trip bit-exactly") {
  std::string dir = temp_dir("fuzz");
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TensorRecord> records;
    const int count = 1 + static_cast<int>(rng.next_below(3));
    for (int r = 0; r < count; ++r) {
      const int rank = 1 + static_cast<int>(rng.next_below(4));
      std::vector<std::uint32_t> extents;
      std::uint64_t n = 1;
      for (int i = 0; i < rank; ++i) {
        extents.push_back(1 + static_cast<std::uint32_t>(rng.next_below(5)));
        n *= extents.back();
      }
      std::string name = "rec" + std::to_string(trial) + "_" + std::to_string(r);
      if (rng.next_below(2) == 0) {
        std::vector<float> vals(n);
        for (auto& v : vals) v = static_cast<float>(rng.next_gauss());
        records.push_back(TensorRecord::f32(name, extents, vals));
      } else {
        std::vector<double> vals(n);
        for (auto& v : vals) v = rng.next_gauss();
        records.push_back(TensorRecord::f64(name, extents, vals));
      }
    }
    const std::string path = dir + "/fuzz.rfk";
    save_records(path, records);
    auto loaded = load_records(path);
    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      CHECK(loaded[i].name == records[i].name);
      CHECK(loaded[i].extents == records[i].extents);
      CHECK(loaded[i].dtype == records[i].dtype);
      if (records[i].dtype == TensorRecord::kFloat32)
        CHECK(std::memcmp(loaded[i].data_f32.data(), records[i].data_f32.data(),
                          records[i].data_f32.size() * sizeof(float)) == 0);
      else
        CHECK(std::memcmp(loaded[i].data_f64.data(), records[i].data_f64.data(),
                          records[i].data_f64.size() * sizeof(double)) == 0);
    }
  }
}

TEST_CASE("build_dataset: files, determinism, and k-space consistency") {
  PhantomSpec spec;
  spec.height = spec.width = 32;

  std::string dir_a = temp_dir("ds_a");
  DatasetManifest m = build_dataset(2, spec, 4.0, 0.1, 0.0, 7, dir_a);
  CHECK(m.count == 2);
  CHECK(std::filesystem::exists(dir_a + "/manifest.txt"));
  CHECK(std::filesystem::exists(dir_a + "/sample_0000.gt.rfk"));
  CHECK(std::filesystem::exists(dir_a + "/sample_0000.ksp.rfk"));
  CHECK(std::filesystem::exists(dir_a + "/sample_0000.mask.rfk"));

  std::string dir_b = temp_dir("ds_b");
  build_dataset(2, spec, 4.0, 0.1, 0.0, 7, dir_b);
  for (const char* f : {"manifest.txt", "sample_0000.gt.rfk", "sample_0000.ksp.rfk",
                        "sample_0000.mask.rfk", "sample_0001.gt.rfk"})
    CHECK(read_bytes(dir_a + "/" + f) == read_bytes(dir_b + "/" + f));

  // recomputing x from the stored ground truth and mask reproduces stored x
  DatasetManifest loaded = load_manifest(dir_a);
  CHECK(loaded.count == 2);
  for (int i = 0; i < 2; ++i) {
    Sample s = load_sample(dir_a, loaded, i);
    KSpace recomputed = forward_model(s.ground_truth, s.mask, 0.0, 0);
    CHECK(testutil::max_abs_diff(recomputed.data, s.kspace.data) < 1e-6);
  }
}

TEST_CASE("build_dataset: fresh masks per sample and full-spectrum ground truth") {
  PhantomSpec spec;
  spec.height = spec.width = 32;
  std::string dir = temp_dir("ds_masks");
  build_dataset(32, spec, 4.0, 0.1, 0.0, 123, dir);
  auto samples = load_all_samples(dir);

  bool distinct = false;
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (samples[i].mask.columns_sampled != samples[0].mask.columns_sampled) distinct = true;
  CHECK(distinct);

  // ground truth is never under-sampled: Parseval against its own spectrum
  for (int i = 0; i < 3; ++i) {
    double ei = testutil::l2_norm(samples[i].ground_truth.data);
    double ek = testutil::l2_norm(fft2c(samples[i].ground_truth).data);
    CHECK(std::fabs(ei - ek) / ei < 1e-5);
  }
}
