#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace c3d::io {

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
public:
    void bytes(std::string_view s);
    void u8(std::uint8_t v);
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void f32(float v);

    [[nodiscard]] const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    void write_file(const std::filesystem::path& path) const;

private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader. Every failure raises FormatError
/// prefixed with the caller-supplied context.
class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> data, std::string context = {});
    static ByteReader from_file(const std::filesystem::path& path);

    void expect_magic(std::string_view magic);
    std::string bytes(std::size_t n);
    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    std::span<const std::uint8_t> raw(std::size_t n);

    void set_context(std::string context) { context_ = std::move(context); }
    [[nodiscard]] std::size_t remaining() const noexcept { return data_.size() - pos_; }
    [[nodiscard]] bool at_end() const noexcept { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const;

    std::vector<std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string context_;
};

}  // namespace c3d::io
