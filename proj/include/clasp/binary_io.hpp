#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace clasp {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Little-endian append-only buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buffer_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void raw(std::string_view bytes);
  // u16 length prefix + UTF-8 bytes.
  void short_string(std::string_view s);
  // CRC32 of everything written so far, appended as u32.
  void finish_with_crc();

  const std::vector<std::uint8_t>& bytes() const { return buffer_; }
  std::vector<std::uint8_t> take() { return std::move(buffer_); }

 private:
  std::vector<std::uint8_t> buffer_;
};

// Little-endian cursor; reading past the end throws TruncatedError.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string source);

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string raw(std::size_t n);
  std::string short_string();

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string source_;
};

// Checks the 4-byte magic, then that the trailing CRC32 covers the rest.
// Throws MagicError / TruncatedError / ChecksumError.
void check_magic(std::span<const std::uint8_t> bytes, std::string_view magic, const std::string& source);
void check_crc_trailer(std::span<const std::uint8_t> bytes, const std::string& source);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace clasp
