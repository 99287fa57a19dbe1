#pragma once

// Little-endian encoding helpers shared by the dataset and checkpoint
// containers. Values are assembled byte by byte, so files are identical on
// every host regardless of native byte order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "trilite/error.hpp"

namespace trilite::io {

inline constexpr std::uint32_t kEndianTag = 0x01020304u;

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void zeros(std::size_t n) { bytes_.insert(bytes_.end(), n, 0); }
    void pad_to(std::size_t align) {
        if (const auto r = bytes_.size() % align) zeros(align - r);
    }

    std::size_t size() const noexcept { return bytes_.size(); }
    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

// Bounds-checked reader over a byte buffer that reports failures with the
// absolute file offset of the buffer start plus the cursor.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size, std::uint64_t base_offset = 0)
        : data_(data), size_(size), base_(base_offset) {}

    std::uint8_t u8() {
        need(1, "u8");
        return data_[pos_++];
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t n) {
        need(n, "string");
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }
    void skip(std::size_t n) {
        need(n, "padding");
        pos_ += n;
    }

    std::size_t position() const noexcept { return pos_; }
    std::uint64_t offset() const noexcept { return base_ + pos_; }
    std::size_t remaining() const noexcept { return size_ - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (size_ - pos_ < n) throw FormatError(std::string("truncated data reading ") + what, base_ + pos_);
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::uint64_t base_;
    std::size_t pos_ = 0;
};

inline std::size_t align_up(std::size_t n, std::size_t align) { return (n + align - 1) / align * align; }

} // namespace trilite::io
