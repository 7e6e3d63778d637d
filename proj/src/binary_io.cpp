#include "dqmil/binary_io.hpp"

#include "dqmil/errors.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace dqmil {

void ByteWriter::u16(std::uint16_t v)
{
    bytes_.push_back(static_cast<std::uint8_t>(v));
    bytes_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v)
{
    for (int shift = 0; shift < 32; shift += 8) {
        bytes_.push_back(static_cast<std::uint8_t>(v >> shift));
    }
}

void ByteWriter::f32(float v)
{
    u32(std::bit_cast<std::uint32_t>(v));
}

void ByteWriter::raw(std::string_view s)
{
    bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteWriter::raw(std::span<const std::uint8_t> s)
{
    bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteReader::fail(const std::string& message) const
{
    throw FormatError(what_ + ": " + message + " at byte offset " + std::to_string(offset_));
}

void ByteReader::need(std::size_t n)
{
    if (remaining() < n) {
        fail("truncated data (need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left)");
    }
}

std::uint8_t ByteReader::u8()
{
    need(1);
    return bytes_[offset_++];
}

std::uint16_t ByteReader::u16()
{
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[offset_] | (bytes_[offset_ + 1] << 8));
    offset_ += 2;
    return v;
}

std::uint32_t ByteReader::u32()
{
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(bytes_[offset_ + i]) << (8 * i);
    }
    offset_ += 4;
    return v;
}

float ByteReader::f32()
{
    return std::bit_cast<float>(u32());
}

std::string ByteReader::string(std::size_t length)
{
    need(length);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + offset_), length);
    offset_ += length;
    return s;
}

void ByteReader::expect_magic(std::string_view magic)
{
    need(magic.size());
    for (std::size_t i = 0; i < magic.size(); ++i) {
        if (bytes_[offset_ + i] != static_cast<std::uint8_t>(magic[i])) {
            fail("bad magic, expected \"" + std::string(magic) + "\"");
        }
    }
    offset_ += magic.size();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw IoError("short write to " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

} // namespace dqmil
