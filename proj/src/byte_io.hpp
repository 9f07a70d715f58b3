#ifndef PERTNET_BYTE_IO_HPP
#define PERTNET_BYTE_IO_HPP

#include "pertnet/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

// Little-endian byte serialization with offset tracking, shared by the TSR1,
// WGT1 and SWC1 codecs. Readers throw pertnet::io_error carrying the byte
// offset of the first inconsistency.

namespace pertnet::detail {

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void magic(const char (&m)[5]) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(m[i]));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    const std::vector<uint8_t>& data() const { return buf_; }

private:
    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    uint8_t u8(const char* what) {
        need(1, what);
        return bytes_[pos_++];
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32(const char* what) {
        uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void magic(const char (&m)[5], const char* what) {
        std::size_t at = pos_;
        need(4, what);
        for (int i = 0; i < 4; ++i) {
            if (bytes_[at + i] != static_cast<uint8_t>(m[i]))
                throw io_error(std::string(what) + ": bad magic, expected \"" + m + "\"", at + i);
        }
        pos_ += 4;
    }
    void read_f32_block(float* dst, std::size_t count, const char* what) {
        need(4 * count, what);
        std::memcpy(dst, bytes_.data() + pos_, 4 * count);
        pos_ += 4 * count;
    }
    void expect_end(const char* what) {
        if (pos_ != bytes_.size())
            throw io_error(std::string(what) + ": trailing bytes after payload", pos_);
    }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n)
            throw io_error(std::string(what) + ": truncated input", bytes_.size());
    }

    std::span<const uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes);

}  // namespace pertnet::detail

#endif
