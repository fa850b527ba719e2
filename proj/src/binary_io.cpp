#include "c3d/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "c3d/error.hpp"

namespace c3d::io {

void ByteWriter::bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }

void ByteWriter::u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

ByteReader::ByteReader(std::vector<std::uint8_t> data, std::string context)
    : data_(std::move(data)), context_(std::move(context)) {}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    return ByteReader(std::move(data), path.string());
}

void ByteReader::need(std::size_t n) const {
    if (n > remaining()) {
        throw FormatError(context_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", " + std::to_string(remaining()) + " left)");
    }
}

void ByteReader::expect_magic(std::string_view magic) {
    if (remaining() < magic.size() || bytes(magic.size()) != magic) {
        throw FormatError(context_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
}

std::string ByteReader::bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
}

std::uint8_t ByteReader::u8() {
    need(1);
    return data_[pos_++];
}

std::uint16_t ByteReader::u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
    need(n);
    std::span<const std::uint8_t> s(data_.data() + pos_, n);
    pos_ += n;
    return s;
}

}  // namespace c3d::io
