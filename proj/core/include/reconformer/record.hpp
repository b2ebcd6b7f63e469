#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace reconformer {

// One record of the RFK1 container:
//   magic "RFK1" | dtype u8 (0 = float32, 1 = float64) | rank u8 |
//   extents rank x u32 LE | name length u16 LE | name UTF-8 |
//   payload row-major little-endian values.
// A file is a plain concatenation of records.
struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::uint8_t dtype = 0;
  std::vector<float> data_f32;
  std::vector<double> data_f64;

  static constexpr std::uint8_t kFloat32 = 0;
  static constexpr std::uint8_t kFloat64 = 1;

  static TensorRecord f32(std::string name, std::vector<std::uint32_t> extents,
                          std::vector<float> values);
  static TensorRecord f64(std::string name, std::vector<std::uint32_t> extents,
                          std::vector<double> values);

  std::uint64_t element_count() const;
};

void append_record(std::ostream& out, const TensorRecord& record);

// Writes records to `path`, replacing any existing file.
void save_records(const std::string& path, const std::vector<TensorRecord>& records);
void save_record(const std::string& path, const TensorRecord& record);

// Reads every record in the file; rejects bad magic, truncation, and invalid
// headers with the byte offset of the failure.
std::vector<TensorRecord> load_records(const std::string& path);

// Loads the record called `name`; format error if the file lacks it.
TensorRecord load_record(const std::string& path, const std::string& name);

}  // namespace reconformer
