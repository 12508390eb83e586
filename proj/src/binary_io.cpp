#include "asmsel/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "asmsel/common.hpp"

namespace asmsel {

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fp));
  return buf;
}

std::uint64_t parse_fingerprint(std::string_view hex) {
  if (hex.size() != 16) throw ContractError("malformed fingerprint '" + std::string(hex) + "'");
  std::uint64_t v = 0;
  for (char c : hex) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw ContractError("malformed fingerprint '" + std::string(hex) + "'");
  }
  return v;
}

void ByteWriter::u32(std::uint32_t v) { put_le(bytes_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(bytes_, v); }
void ByteWriter::f32(float v) { put_le(bytes_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { put_le(bytes_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes_.append(s);
}

const char* ByteReader::take(std::size_t n) {
  if (bytes_.size() - pos_ < n) throw ContractError("truncated binary container");
  const char* p = bytes_.data() + pos_;
  pos_ += n;
  return p;
}

void ByteReader::expect_magic(std::string_view tag) {
  const char* p = take(tag.size());
  if (std::string_view(p, tag.size()) != tag) {
    throw ContractError("bad magic: expected " + std::string(tag));
  }
}

std::uint32_t ByteReader::u32() { return get_le<std::uint32_t>(take(4)); }
std::uint64_t ByteReader::u64() { return get_le<std::uint64_t>(take(8)); }
float ByteReader::f32() { return std::bit_cast<float>(get_le<std::uint32_t>(take(4))); }
double ByteReader::f64() { return std::bit_cast<double>(get_le<std::uint64_t>(take(8))); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  const char* p = take(n);
  return std::string(p, n);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

}  // namespace asmsel
