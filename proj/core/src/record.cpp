#include "reconformer/record.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "reconformer/errors.hpp"

namespace reconformer {

namespace {

const char* const kWhere = "phantom-data::record";
constexpr char kMagic[4] = {'R', 'F', 'K', '1'};
constexpr std::size_t kMaxRank = 8;

void validate(const TensorRecord& r) {
  require(r.dtype == TensorRecord::kFloat32 || r.dtype == TensorRecord::kFloat64,
          ErrorKind::Format, kWhere, "unknown dtype code");
  require(!r.extents.empty() && r.extents.size() <= kMaxRank, ErrorKind::Format, kWhere,
          "rank must be in [1, 8]");
  for (auto e : r.extents)
    require(e != 0, ErrorKind::Format, kWhere, "zero extent in record '" + r.name + "'");
  require(r.name.size() <= 0xFFFF, ErrorKind::Format, kWhere, "record name too long");
  std::uint64_t n = r.element_count();
  if (r.dtype == TensorRecord::kFloat32)
    require(r.data_f32.size() == n && r.data_f64.empty(), ErrorKind::Format, kWhere,
            "payload length mismatch in record '" + r.name + "'");
  else
    require(r.data_f64.size() == n && r.data_f32.empty(), ErrorKind::Format, kWhere,
            "payload length mismatch in record '" + r.name + "'");
}

void put_u16(std::ostream& out, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_u64_bits(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    require(in_.good(), ErrorKind::Io, kWhere, "cannot open '" + path + "'");
  }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

  std::size_t offset() const { return offset_; }

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      std::ostringstream msg;
      msg << "truncated while reading " << what << " at offset " << offset_ << " in '" << path_
          << "'";
      fail(ErrorKind::Format, kWhere, msg.str());
    }
    offset_ += n;
  }

  std::uint16_t u16(const char* what) {
    unsigned char b[2];
    bytes(reinterpret_cast<char*>(b), 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t u64(const char* what) {
    std::uint64_t lo = u32(what), hi = u32(what);
    return lo | (hi << 32);
  }

  [[noreturn]] void bad(const std::string& what) {
    std::ostringstream msg;
    msg << what << " at offset " << offset_ << " in '" << path_ << "'";
    fail(ErrorKind::Format, kWhere, msg.str());
  }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace

TensorRecord TensorRecord::f32(std::string name, std::vector<std::uint32_t> extents,
                               std::vector<float> values) {
  TensorRecord r;
  r.name = std::move(name);
  r.extents = std::move(extents);
  r.dtype = kFloat32;
  r.data_f32 = std::move(values);
  return r;
}

TensorRecord TensorRecord::f64(std::string name, std::vector<std::uint32_t> extents,
                               std::vector<double> values) {
  TensorRecord r;
  r.name = std::move(name);
  r.extents = std::move(extents);
  r.dtype = kFloat64;
  r.data_f64 = std::move(values);
  return r;
}

std::uint64_t TensorRecord::element_count() const {
  std::uint64_t n = 1;
  for (auto e : extents) n *= e;
  return n;
}

void append_record(std::ostream& out, const TensorRecord& record) {
  validate(record);
  out.write(kMagic, 4);
  out.put(static_cast<char>(record.dtype));
  out.put(static_cast<char>(record.extents.size()));
  for (auto e : record.extents) put_u32(out, e);
  put_u16(out, static_cast<std::uint16_t>(record.name.size()));
  out.write(record.name.data(), static_cast<std::streamsize>(record.name.size()));
  if (record.dtype == TensorRecord::kFloat32) {
    for (float v : record.data_f32) put_u32(out, std::bit_cast<std::uint32_t>(v));
  } else {
    for (double v : record.data_f64) put_u64_bits(out, std::bit_cast<std::uint64_t>(v));
  }
}

void save_records(const std::string& path, const std::vector<TensorRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, kWhere, "cannot open '" + path + "' for writing");
  for (const auto& r : records) append_record(out, r);
  out.flush();
  require(out.good(), ErrorKind::Io, kWhere, "write failed for '" + path + "'");
}

void save_record(const std::string& path, const TensorRecord& record) {
  save_records(path, {record});
}

std::vector<TensorRecord> load_records(const std::string& path) {
  Reader in(path);
  std::vector<TensorRecord> records;
  while (!in.at_eof()) {
    char magic[4];
    in.bytes(magic, 4, "magic");
    if (std::string_view(magic, 4) != std::string_view(kMagic, 4)) in.bad("bad magic");

    TensorRecord r;
    char head[2];
    in.bytes(head, 2, "dtype/rank");
    r.dtype = static_cast<std::uint8_t>(head[0]);
    if (r.dtype != TensorRecord::kFloat32 && r.dtype != TensorRecord::kFloat64)
      in.bad("unknown dtype code");
    std::size_t rank = static_cast<std::uint8_t>(head[1]);
    if (rank == 0 || rank > kMaxRank) in.bad("rank out of range");
    r.extents.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
      r.extents[i] = in.u32("extent");
      if (r.extents[i] == 0) in.bad("zero extent");
    }
    std::uint16_t name_len = in.u16("name length");
    r.name.resize(name_len);
    if (name_len > 0) in.bytes(r.name.data(), name_len, "name");

    std::uint64_t n = r.element_count();
    if (r.dtype == TensorRecord::kFloat32) {
      r.data_f32.resize(n);
      for (std::uint64_t i = 0; i < n; ++i)
        r.data_f32[i] = std::bit_cast<float>(in.u32("payload"));
    } else {
      r.data_f64.resize(n);
      for (std::uint64_t i = 0; i < n; ++i)
        r.data_f64[i] = std::bit_cast<double>(in.u64("payload"));
    }
    records.push_back(std::move(r));
  }
  return records;
}

TensorRecord load_record(const std::string& path, const std::string& name) {
  for (auto& r : load_records(path))
    if (r.name == name) return r;
  fail(ErrorKind::Format, kWhere, "no record named '" + name + "' in '" + path + "'");
}

}  // namespace reconformer
