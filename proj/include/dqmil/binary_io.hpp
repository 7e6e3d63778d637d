#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dqmil {

/// Appends little-endian fields to a byte buffer regardless of host order.
class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void f32(float v);
    void raw(std::string_view s);
    void raw(std::span<const std::uint8_t> s);

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian reader; errors report the byte offset.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    std::string string(std::size_t length);
    void expect_magic(std::string_view magic);

    std::size_t offset() const noexcept { return offset_; }
    std::size_t remaining() const noexcept { return bytes_.size() - offset_; }
    /// FormatError naming the current offset.
    [[noreturn]] void fail(const std::string& message) const;

private:
    void need(std::size_t n);

    std::span<const std::uint8_t> bytes_;
    std::string what_;
    std::size_t offset_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames, so readers never see partial output.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace dqmil
