#include "reconformer/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "reconformer/config.hpp"
#include "reconformer/record.hpp"
#include "reconformer/rng.hpp"

namespace reconformer {

namespace {

const char* const kWhere = "phantom-data::dataset";

std::string sample_stem(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04d", id);
  return buf;
}

TensorRecord field_record(const char* name, int h, int w, const std::vector<float>& data) {
  return TensorRecord::f32(name, {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w), 2},
                           data);
}

}  // namespace

DatasetManifest build_dataset(int count, const PhantomSpec& phantom_template,
                              double acceleration_factor, double center_fraction,
                              double noise_sigma, std::uint64_t master_seed,
                              const std::string& out_dir) {
  require(count >= 1, ErrorKind::Config, kWhere, "sample count must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, ErrorKind::Io, kWhere, "cannot create directory '" + out_dir + "'");

  DatasetManifest manifest;
  manifest.count = count;
  manifest.height = phantom_template.height;
  manifest.width = phantom_template.width;
  manifest.acceleration_factor = acceleration_factor;
  manifest.center_fraction = center_fraction;
  manifest.noise_sigma = noise_sigma;
  manifest.master_seed = master_seed;

  for (int i = 0; i < count; ++i) {
    const std::uint64_t sample_seed = master_seed + static_cast<std::uint64_t>(i);
    PhantomSpec spec = phantom_template;
    spec.seed = mix_seed(sample_seed, 1);

    ComplexImage gt = gen_phantom(spec);
    SamplingMask mask = make_cartesian_mask(spec.width, acceleration_factor, center_fraction,
                                            mix_seed(sample_seed, 2));
    KSpace ksp = forward_model(gt, mask, noise_sigma, mix_seed(sample_seed, 3));

    DatasetManifest::Entry entry;
    entry.id = i;
    entry.seed = sample_seed;
    const std::string stem = sample_stem(i);
    entry.gt_file = stem + ".gt.rfk";
    entry.kspace_file = stem + ".ksp.rfk";
    entry.mask_file = stem + ".mask.rfk";

    save_record(out_dir + "/" + entry.gt_file, field_record("gt", gt.height, gt.width, gt.data));
    save_record(out_dir + "/" + entry.kspace_file,
                field_record("kspace", ksp.height, ksp.width, ksp.data));
    std::vector<float> cols(mask.columns_sampled.begin(), mask.columns_sampled.end());
    save_record(out_dir + "/" + entry.mask_file,
                TensorRecord::f32("mask", {static_cast<std::uint32_t>(mask.width)}, cols));

    manifest.samples.push_back(std::move(entry));
  }
  save_manifest(out_dir, manifest);
  return manifest;
}

void save_manifest(const std::string& dir, const DatasetManifest& manifest) {
  std::ofstream out(dir + "/manifest.txt", std::ios::trunc);
  require(out.good(), ErrorKind::Io, kWhere, "cannot write manifest in '" + dir + "'");
  out << "version = " << manifest.version << "\n";
  out << "count = " << manifest.count << "\n";
  out << "height = " << manifest.height << "\n";
  out << "width = " << manifest.width << "\n";
  out << "acceleration_factor = " << format_double(manifest.acceleration_factor) << "\n";
  out << "center_fraction = " << format_double(manifest.center_fraction) << "\n";
  out << "noise_sigma = " << format_double(manifest.noise_sigma) << "\n";
  out << "master_seed = " << manifest.master_seed << "\n";
  out << "\n";
  out << "id\tgt\tkspace\tmask\tseed\n";
  for (const auto& s : manifest.samples)
    out << s.id << "\t" << s.gt_file << "\t" << s.kspace_file << "\t" << s.mask_file << "\t"
        << s.seed << "\n";
  require(out.good(), ErrorKind::Io, kWhere, "manifest write failed in '" + dir + "'");
}

DatasetManifest load_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.txt";
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, kWhere, "cannot open '" + path + "'");

  DatasetManifest m;
  std::string line;
  bool in_table = false;
  bool header_seen = false;
  std::string head_text;
  while (std::getline(in, line)) {
    if (!in_table) {
      if (line.empty()) {
        in_table = true;
        continue;
      }
      head_text += line;
      head_text += '\n';
      continue;
    }
    if (!header_seen) {  // column header row
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    std::istringstream row(line);
    DatasetManifest::Entry e;
    std::string id_str, seed_str;
    require(std::getline(row, id_str, '\t') && std::getline(row, e.gt_file, '\t') &&
                std::getline(row, e.kspace_file, '\t') && std::getline(row, e.mask_file, '\t') &&
                std::getline(row, seed_str),
            ErrorKind::Format, kWhere, "malformed sample row: " + line);
    e.id = std::stoi(id_str);
    e.seed = std::stoull(seed_str);
    m.samples.push_back(std::move(e));
  }
  KeyValueConfig head = KeyValueConfig::from_text(head_text);
  m.version = static_cast<int>(head.get_int("version", 1));
  m.count = static_cast<int>(head.get_int("count", 0));
  m.height = static_cast<int>(head.get_int("height", 0));
  m.width = static_cast<int>(head.get_int("width", 0));
  m.acceleration_factor = head.get_double("acceleration_factor", 0.0);
  m.center_fraction = head.get_double("center_fraction", 0.0);
  m.noise_sigma = head.get_double("noise_sigma", 0.0);
  m.master_seed = head.get_u64("master_seed", 0);
  require(static_cast<int>(m.samples.size()) == m.count, ErrorKind::Format, kWhere,
          "manifest sample table does not match count");
  return m;
}

Sample load_sample(const std::string& dir, const DatasetManifest& manifest, int index) {
  require(index >= 0 && index < static_cast<int>(manifest.samples.size()), ErrorKind::Usage,
          kWhere, "sample index out of range");
  const auto& e = manifest.samples[index];

  Sample s;
  s.id = e.id;
  s.seed = e.seed;

  TensorRecord gt = load_record(dir + "/" + e.gt_file, "gt");
  require(gt.extents.size() == 3 && gt.extents[2] == 2, ErrorKind::Format, kWhere,
          "ground-truth record is not [H,W,2]");
  s.ground_truth =
      ComplexImage(static_cast<int>(gt.extents[0]), static_cast<int>(gt.extents[1]), gt.data_f32);

  TensorRecord ksp = load_record(dir + "/" + e.kspace_file, "kspace");
  require(ksp.extents.size() == 3 && ksp.extents[2] == 2, ErrorKind::Format, kWhere,
          "k-space record is not [H,W,2]");
  s.kspace =
      KSpace(static_cast<int>(ksp.extents[0]), static_cast<int>(ksp.extents[1]), ksp.data_f32);

  TensorRecord mask = load_record(dir + "/" + e.mask_file, "mask");
  require(mask.extents.size() == 1, ErrorKind::Format, kWhere, "mask record is not rank 1");
  s.mask.width = static_cast<int>(mask.extents[0]);
  s.mask.columns_sampled.assign(mask.data_f32.size(), 0);
  for (std::size_t i = 0; i < mask.data_f32.size(); ++i)
    s.mask.columns_sampled[i] = mask.data_f32[i] != 0.0f ? 1 : 0;
  s.mask.acceleration_factor = manifest.acceleration_factor;
  s.mask.center_fraction = manifest.center_fraction;
  s.mask.seed = mix_seed(e.seed, 2);
  return s;
}

std::vector<Sample> load_all_samples(const std::string& dir) {
  DatasetManifest manifest = load_manifest(dir);
  std::vector<Sample> samples;
  samples.reserve(manifest.samples.size());
  for (int i = 0; i < static_cast<int>(manifest.samples.size()); ++i)
    samples.push_back(load_sample(dir, manifest, i));
  return samples;
}

}  // namespace reconformer
