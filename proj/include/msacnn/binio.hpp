#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "msacnn/errors.hpp"

namespace msacnn {

// Little-endian byte writer backed by an in-memory buffer. Serializing to a
// buffer first keeps file writes atomic-ish and makes fingerprinting easy.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { append(&v, 2); }
    void u32(std::uint32_t v) { append(&v, 4); }
    void u64(std::uint64_t v) { append(&v, 8); }
    void f32(float v) { append(&v, 4); }
    void f64(double v) { append(&v, 8); }

    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }

    void str16(const std::string& s) {
        if (s.size() > 0xffff) throw DataError("string too long for u16 length prefix");
        u16(static_cast<std::uint16_t>(s.size()));
        bytes(s.data(), s.size());
    }

    const std::vector<unsigned char>& buffer() const { return buf_; }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open for writing: " + path);
        out.write(reinterpret_cast<const char*>(buf_.data()),
                  static_cast<std::streamsize>(buf_.size()));
        if (!out) throw DataError("short write: " + path);
    }

private:
    // Stores multi-byte values little-endian regardless of host order.
    template <typename T>
    void append(const T* v, int n) {
        unsigned char raw[8];
        std::memcpy(raw, v, static_cast<std::size_t>(n));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
        for (int i = 0; i < n / 2; ++i) std::swap(raw[i], raw[n - 1 - i]);
#endif
        buf_.insert(buf_.end(), raw, raw + n);
    }

    std::vector<unsigned char> buf_;
};

// Little-endian byte reader with offset tracking; errors carry the byte
// offset at which decoding failed.
class ByteReader {
public:
    explicit ByteReader(std::vector<unsigned char> data) : buf_(std::move(data)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open for reading: " + path);
        std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        return ByteReader(std::move(data));
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    std::uint8_t u8() { return take<std::uint8_t>(1); }
    std::uint16_t u16() { return take<std::uint16_t>(2); }
    std::uint32_t u32() { return take<std::uint32_t>(4); }
    std::uint64_t u64() { return take<std::uint64_t>(8); }
    float f32() { return take<float>(4); }
    double f64() { return take<double>(8); }

    void bytes(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::string str16() {
        std::size_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void need(std::size_t n) {
        if (remaining() < n)
            throw DataError("truncated payload at byte offset " + std::to_string(pos_) +
                            " (need " + std::to_string(n) + " more bytes, have " +
                            std::to_string(remaining()) + ")");
    }

private:
    template <typename T>
    T take(int n) {
        need(static_cast<std::size_t>(n));
        unsigned char raw[8];
        std::memcpy(raw, buf_.data() + pos_, static_cast<std::size_t>(n));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
        for (int i = 0; i < n / 2; ++i) std::swap(raw[i], raw[n - 1 - i]);
#endif
        T v;
        std::memcpy(&v, raw, static_cast<std::size_t>(n));
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
};

} // namespace msacnn
