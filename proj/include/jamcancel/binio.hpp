#pragma once

// Little-endian binary helpers for the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "jamcancel/errors.hpp"

namespace jamcancel::binio {

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void magic(std::string_view m) { bytes(m.data(), m.size()); }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { le(v); }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(std::string_view s) {
        u16(static_cast<std::uint16_t>(s.size()));
        bytes(s.data(), s.size());
    }

    const std::vector<std::uint8_t>& data() const { return buf_; }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
        f.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!f) throw std::runtime_error("write to '" + path + "' failed");
    }

private:
    template <typename T>
    void le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

inline std::vector<std::uint8_t> load_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

/// Bounds-checked cursor; every overrun is a FormatError.
class Reader {
public:
    Reader(const std::vector<std::uint8_t>& data, std::string context) : data_(data), ctx_(std::move(context)) {}

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

    void need(std::size_t n) const {
        if (remaining() < n) throw FormatError(ctx_ + ": truncated (need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ")");
    }
    void expect_magic(std::string_view m) {
        need(m.size());
        if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0)
            throw FormatError(ctx_ + ": bad magic (expected '" + std::string(m) + "')");
        pos_ += m.size();
    }
    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint16_t u16() { return le<std::uint16_t>(); }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const std::size_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    template <typename T>
    T le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }
    const std::vector<std::uint8_t>& data_;
    std::string ctx_;
    std::size_t pos_ = 0;
};

}  // namespace jamcancel::binio
