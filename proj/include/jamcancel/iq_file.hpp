#pragma once

// Two-antenna recordings: "IQ2A", u16 version, u32 block length, u64 sample count, then
// little-endian float32 quads (I1, Q1, I2, Q2) per sample.
//
// Single-antenna outputs (cancel-stream) are raw interleaved float32 I/Q with no header.

#include <string>

#include "jamcancel/binio.hpp"
#include "jamcancel/iq_core.hpp"

namespace jamcancel {

inline constexpr std::uint16_t kIqFileVersion = 1;

struct IqRecording {
    std::size_t block_len = kDefaultBlockLen;
    IqVector r1, r2;
};

inline void write_iq2a(const std::string& path, const IqRecording& rec) {
    if (rec.r1.size() != rec.r2.size()) throw UsageError("write_iq2a: antenna streams differ in length");
    binio::Writer w;
    w.magic("IQ2A");
    w.u16(kIqFileVersion);
    w.u32(static_cast<std::uint32_t>(rec.block_len));
    w.u64(rec.r1.size());
    for (std::size_t t = 0; t < rec.r1.size(); ++t) {
        w.f32(static_cast<float>(rec.r1[t].real()));
        w.f32(static_cast<float>(rec.r1[t].imag()));
        w.f32(static_cast<float>(rec.r2[t].real()));
        w.f32(static_cast<float>(rec.r2[t].imag()));
    }
    w.save(path);
}

inline IqRecording read_iq2a(const std::string& path) {
    const auto bytes = binio::load_file(path);
    binio::Reader r(bytes, path);
    r.expect_magic("IQ2A");
    const std::uint16_t version = r.u16();
    if (version != kIqFileVersion) throw FormatError(path + ": unsupported IQ2A version " + std::to_string(version));
    IqRecording rec;
    rec.block_len = r.u32();
    if (rec.block_len < 4) throw FormatError(path + ": block length below 4");
    const std::uint64_t n = r.u64();
    if (n > r.remaining() / 16 || r.remaining() != n * 16) throw FormatError(path + ": sample count does not match file size");
    rec.r1.resize(n);
    rec.r2.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const double i1 = r.f32(), q1 = r.f32(), i2 = r.f32(), q2 = r.f32();
        rec.r1[t] = {i1, q1};
        rec.r2[t] = {i2, q2};
    }
    return rec;
}

inline void write_cf32(const std::string& path, std::span<const IqSample> x) {
    binio::Writer w;
    for (const IqSample& s : x) {
        w.f32(static_cast<float>(s.real()));
        w.f32(static_cast<float>(s.imag()));
    }
    w.save(path);
}

inline IqVector read_cf32(const std::string& path) {
    const auto bytes = binio::load_file(path);
    if (bytes.size() % 8 != 0) throw FormatError(path + ": cf32 file size is not a multiple of 8");
    binio::Reader r(bytes, path);
    IqVector out(bytes.size() / 8);
    for (auto& s : out) {
        const double i = r.f32();
        s = {i, static_cast<double>(r.f32())};
    }
    return out;
}

}  // namespace jamcancel
