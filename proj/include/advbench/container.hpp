#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advbench/error.hpp"

// Little-endian binary container shared by model files, dataset caches and
// adversarial caches. Header: "ADVB", u32 version, u32 record count.
namespace advbench::container {

inline constexpr std::array<char, 4> kMagic{'A', 'D', 'V', 'B'};
inline constexpr std::uint32_t kVersion = 1;

enum class RecordTag : std::uint8_t {
  kConv2D = 1,
  kMaxPool2D = 2,
  kAdaptiveMaxPool2D = 3,
  kReLU = 4,
  kFlatten = 5,
  kDense = 6,
  kDataset = 0x40,
  kTensorList = 0x41,
};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u32(bits);
  }
  void f32s(std::span<const float> vs) {
    for (float v : vs) f32(v);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void header(std::uint32_t record_count) {
    for (char c : kMagic) u8(static_cast<std::uint8_t>(c));
    u32(kVersion);
    u32(record_count);
  }

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1, "u8");
    return bytes_[offset_++];
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[offset_ + i]) << (8 * i);
    offset_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[offset_ + i]) << (8 * i);
    offset_ += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  void f32s(std::span<float> out) {
    need(out.size() * 4, "f32 block");
    for (float& v : out) v = f32();
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n, "string");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + offset_), n);
    offset_ += n;
    return s;
  }
  // Validates magic and version; returns the record count.
  std::uint32_t header() {
    need(4, "magic");
    for (char c : kMagic) {
      if (bytes_[offset_++] != static_cast<std::uint8_t>(c)) {
        throw Error(ErrorCode::kFormat, "bad magic at offset 0 (expected ADVB)");
      }
    }
    const std::uint32_t version = u32();
    if (version != kVersion) {
      throw Error(ErrorCode::kFormat, "unsupported container version " + std::to_string(version) +
                                          " at offset 4");
    }
    return u32();
  }

  std::size_t offset() const noexcept { return offset_; }
  bool at_end() const noexcept { return offset_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - offset_ < n) {
      throw Error(ErrorCode::kFormat, std::string("truncated container reading ") + what +
                                          " at offset " + std::to_string(offset_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace advbench::container
