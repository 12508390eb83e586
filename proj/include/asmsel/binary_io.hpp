#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace asmsel {

/// Little-endian byte sink used by every binary container.
class ByteWriter {
 public:
  void magic(std::string_view tag) { bytes_.append(tag); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(std::string_view s);  // u32 length + bytes

  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

/// Little-endian byte source. Every read is bounds checked and throws
/// ContractError on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  void expect_magic(std::string_view tag);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const char* take(std::size_t n);

  std::string bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);

}  // namespace asmsel
