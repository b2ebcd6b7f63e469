#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reconformer/kspace.hpp"
#include "reconformer/phantom.hpp"

namespace reconformer {

// Per-sample streams derive from the sample seed via fixed salts:
//   phantom = mix_seed(seed, 1), mask = mix_seed(seed, 2), noise = mix_seed(seed, 3).
// Sample seeds are master_seed + index.
struct DatasetManifest {
  int version = 1;
  int count = 0;
  int height = 0;
  int width = 0;
  double acceleration_factor = 4.0;
  double center_fraction = 0.08;
  double noise_sigma = 0.0;
  std::uint64_t master_seed = 0;

  struct Entry {
    int id = 0;
    std::string gt_file, kspace_file, mask_file;
    std::uint64_t seed = 0;
  };
  std::vector<Entry> samples;
};

struct Sample {
  int id = 0;
  std::uint64_t seed = 0;
  ComplexImage ground_truth;
  KSpace kspace;
  SamplingMask mask;
};

// Generates `count` phantoms, a fresh mask per sample, and the corresponding
// under-sampled k-space; writes RFK1 tensor files plus manifest.txt and
// returns the manifest.
DatasetManifest build_dataset(int count, const PhantomSpec& phantom_template,
                              double acceleration_factor, double center_fraction,
                              double noise_sigma, std::uint64_t master_seed,
                              const std::string& out_dir);

void save_manifest(const std::string& dir, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& dir);

Sample load_sample(const std::string& dir, const DatasetManifest& manifest, int index);
std::vector<Sample> load_all_samples(const std::string& dir);

}  // namespace reconformer
