#pragma once

// Differential modulators, packet framing and the decodability check.
//
// Packet bit layout (modulated MSB-first, one sample per symbol, preceded by one
// differential reference symbol):
//
//   [preamble: 64 symbols of PRBS9 bits][length: u16 big-endian, payload length in bits]
//   [payload][CRC-32 of payload, big-endian][zero pad to the symbol boundary]
//
// 16-QAM is quadrant-differential: the first two bits of a symbol rotate the quadrant
// (Gray: 00 -> 0, 01 -> pi/2, 11 -> pi, 10 -> 3pi/2), the last two select one of the four
// points inside the quadrant (per-axis Gray, 0 -> 1, 1 -> 3, scaled by 1/sqrt(10)).

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jamcancel/iq_core.hpp"

namespace jamcancel {

using Bits = std::vector<std::uint8_t>;

enum class ModScheme { DBPSK, DQPSK, D8PSK, QAM16 };

inline constexpr std::array<ModScheme, 4> kAllSchemes = {ModScheme::DBPSK, ModScheme::DQPSK, ModScheme::D8PSK,
                                                         ModScheme::QAM16};

inline int bits_per_symbol(ModScheme s) {
    switch (s) {
        case ModScheme::DBPSK: return 1;
        case ModScheme::DQPSK: return 2;
        case ModScheme::D8PSK: return 3;
        case ModScheme::QAM16: return 4;
    }
    return 1;
}

inline std::string to_string(ModScheme s) {
    switch (s) {
        case ModScheme::DBPSK: return "bpsk";
        case ModScheme::DQPSK: return "qpsk";
        case ModScheme::D8PSK: return "8psk";
        case ModScheme::QAM16: return "16qam";
    }
    return "?";
}

inline ModScheme parse_scheme(std::string_view name) {
    if (name == "bpsk" || name == "dbpsk") return ModScheme::DBPSK;
    if (name == "qpsk" || name == "dqpsk") return ModScheme::DQPSK;
    if (name == "8psk" || name == "d8psk") return ModScheme::D8PSK;
    if (name == "16qam" || name == "qam16") return ModScheme::QAM16;
    throw UsageError("unknown modulation scheme '" + std::string(name) + "'");
}

namespace detail {

inline unsigned gray(unsigned n) { return n ^ (n >> 1); }

inline unsigned gray_inverse(unsigned g) {
    unsigned n = g;
    for (unsigned s = g >> 1; s != 0; s >>= 1) n ^= s;
    return n;
}

inline unsigned read_bits(std::span<const std::uint8_t> bits, std::size_t pos, int count) {
    unsigned v = 0;
    for (int i = 0; i < count; ++i) v = (v << 1) | (bits[pos + i] & 1u);
    return v;
}

inline void push_bits(Bits& out, unsigned value, int count) {
    for (int i = count - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((value >> i) & 1u));
}

inline constexpr double kQamScale = 0.31622776601683794;  // 1/sqrt(10)

inline IqSample qam_inner_point(unsigned two_bits) {
    const double re = (two_bits & 2u) ? 3.0 : 1.0;
    const double im = (two_bits & 1u) ? 3.0 : 1.0;
    return {re * kQamScale, im * kQamScale};
}

inline IqSample quarter_turns(IqSample x, int q) {
    switch (((q % 4) + 4) % 4) {
        case 1: return {-x.imag(), x.real()};
        case 2: return -x;
        case 3: return {x.imag(), -x.real()};
        default: return x;
    }
}

inline int quadrant_of(IqSample x) {
    // Quadrant 0 holds re > 0, im >= 0, matching quarter_turns(first-quadrant point, q).
    if (x.real() > 0 && x.imag() >= 0) return 0;
    if (x.real() <= 0 && x.imag() > 0) return 1;
    if (x.real() < 0 && x.imag() <= 0) return 2;
    return 3;
}

}  // namespace detail

/// Pads with zeros up to the next multiple of the scheme's bits per symbol.
inline Bits pad_to_symbol(Bits bits, ModScheme scheme) {
    const std::size_t k = static_cast<std::size_t>(bits_per_symbol(scheme));
    while (bits.size() % k != 0) bits.push_back(0);
    return bits;
}

/// One sample per symbol; sample 0 is the differential reference. Output length is 1 + bits/k.
inline IqVector modulate(std::span<const std::uint8_t> bits, ModScheme scheme) {
    const int k = bits_per_symbol(scheme);
    if (bits.size() % static_cast<std::size_t>(k) != 0)
        throw UsageError("modulate: bit count not padded to the symbol boundary");
    const std::size_t n_sym = bits.size() / static_cast<std::size_t>(k);
    IqVector out;
    out.reserve(n_sym + 1);
    if (scheme == ModScheme::QAM16) {
        int quadrant = 0;
        out.push_back(detail::qam_inner_point(0));
        for (std::size_t i = 0; i < n_sym; ++i) {
            const unsigned sym = detail::read_bits(bits, i * 4, 4);
            quadrant = (quadrant + static_cast<int>(detail::gray_inverse(sym >> 2))) % 4;
            out.push_back(detail::quarter_turns(detail::qam_inner_point(sym & 3u), quadrant));
        }
        return out;
    }
    const unsigned order = 1u << k;
    const double step = kTwoPi / static_cast<double>(order);
    unsigned index = 0;  // accumulated phase index mod order
    out.emplace_back(1.0, 0.0);
    for (std::size_t i = 0; i < n_sym; ++i) {
        const unsigned v = detail::read_bits(bits, i * static_cast<std::size_t>(k), k);
        index = (index + detail::gray_inverse(v)) % order;
        out.push_back(std::polar(1.0, step * static_cast<double>(index)));
    }
    return out;
}

inline IqVector modulate(const Bits& bits, ModScheme scheme) { return modulate(std::span<const std::uint8_t>(bits), scheme); }

/// Inverse of modulate. PSK decisions use arg(x_t conj(x_{t-1})); 16-QAM first removes a blind
/// gain and a fourth-power phase estimate over the whole sequence, so every scheme is
/// insensitive to a constant complex gain.
inline Bits demodulate(std::span<const IqSample> samples, ModScheme scheme) {
    if (samples.size() < 2) throw UsageError("demodulate: need at least two samples");
    const int k = bits_per_symbol(scheme);
    Bits out;
    out.reserve((samples.size() - 1) * static_cast<std::size_t>(k));
    if (scheme == ModScheme::QAM16) {
        IqSample fourth{};
        double power = 0.0;
        for (const auto& x : samples) {
            const IqSample x2 = x * x;
            fourth += x2 * x2;
            power += std::norm(x);
        }
        power /= static_cast<double>(samples.size());
        // E[s^4] of the square constellation is real and negative.
        const double theta = (std::arg(fourth) - kPi) / 4.0;
        const IqSample derotate = std::polar(power > 0 ? 1.0 / std::sqrt(power) : 1.0, -theta);
        const double threshold = 2.0 * detail::kQamScale;
        int prev_q = detail::quadrant_of(samples[0] * derotate);
        for (std::size_t t = 1; t < samples.size(); ++t) {
            const IqSample y = samples[t] * derotate;
            const int q = detail::quadrant_of(y);
            const IqSample inner = detail::quarter_turns(y, -q);
            const unsigned dq = static_cast<unsigned>(((q - prev_q) % 4 + 4) % 4);
            const unsigned hi = detail::gray(dq);
            const unsigned lo = ((inner.real() > threshold) ? 2u : 0u) | ((inner.imag() > threshold) ? 1u : 0u);
            detail::push_bits(out, (hi << 2) | lo, 4);
            prev_q = q;
        }
        return out;
    }
    const unsigned order = 1u << k;
    const double step = kTwoPi / static_cast<double>(order);
    for (std::size_t t = 1; t < samples.size(); ++t) {
        const double d = std::arg(samples[t] * std::conj(samples[t - 1]));
        long n = std::lround(d / step);
        const unsigned idx = static_cast<unsigned>(((n % static_cast<long>(order)) + order) % order);
        detail::push_bits(out, detail::gray(idx), k);
    }
    return out;
}

/// Fraction of differing positions.
inline double bit_error_rate(std::span<const std::uint8_t> sent, std::span<const std::uint8_t> received) {
    if (sent.size() != received.size())
        throw UsageError("bit_error_rate: length mismatch (" + std::to_string(sent.size()) + " vs " +
                         std::to_string(received.size()) + ")");
    if (sent.empty()) throw UsageError("bit_error_rate: empty streams");
    std::size_t errors = 0;
    for (std::size_t i = 0; i < sent.size(); ++i) errors += (sent[i] & 1u) != (received[i] & 1u);
    return static_cast<double>(errors) / static_cast<double>(sent.size());
}

inline std::size_t count_bit_errors(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) throw UsageError("count_bit_errors: length mismatch");
    std::size_t e = 0;
    for (std::size_t i = 0; i < a.size(); ++i) e += (a[i] & 1u) != (b[i] & 1u);
    return e;
}

/// Reflected CRC-32 (poly 0x04C11DB7, init and final xor 0xFFFFFFFF), fed one bit at a time
/// in stream order. Feeding each byte LSB-first reproduces the standard byte-wise CRC-32.
inline std::uint32_t crc32_bits(std::span<const std::uint8_t> bits) {
    std::uint32_t crc = 0xFFFFFFFFu;
    for (auto b : bits) {
        crc ^= (b & 1u);
        crc = (crc & 1u) ? (crc >> 1) ^ 0xEDB88320u : (crc >> 1);
    }
    return crc ^ 0xFFFFFFFFu;
}

inline constexpr int kPreambleSymbols = 64;
inline constexpr double kPreambleThreshold = 0.6;
inline constexpr std::size_t kMaxPayloadBits = 0xFFFF;

/// PRBS9 (x^9 + x^5 + 1, all-ones seed) bits used for the preamble of every packet.
inline Bits preamble_bits(ModScheme scheme) {
    const std::size_t n = static_cast<std::size_t>(kPreambleSymbols * bits_per_symbol(scheme));
    Bits out;
    out.reserve(n);
    unsigned lfsr = 0x1FF;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned bit = ((lfsr >> 8) ^ (lfsr >> 4)) & 1u;
        out.push_back(static_cast<std::uint8_t>(bit));
        lfsr = ((lfsr << 1) | bit) & 0x1FF;
    }
    return out;
}

/// Reference symbol plus the 64 preamble symbols, as they appear at the start of a packet.
inline IqVector preamble_symbols(ModScheme scheme) { return modulate(preamble_bits(scheme), scheme); }

struct Packet {
    Bits preamble;
    Bits payload;
    std::uint32_t crc = 0;

    /// Full bit layout before symbol padding.
    Bits layout(ModScheme scheme) const {
        Bits out = preamble_bits(scheme);
        detail::push_bits(out, static_cast<unsigned>(payload.size()), 16);
        out.insert(out.end(), payload.begin(), payload.end());
        detail::push_bits(out, crc >> 16, 16);
        detail::push_bits(out, crc & 0xFFFFu, 16);
        return out;
    }
};

inline Packet frame(const Bits& payload, ModScheme scheme) {
    if (payload.empty()) throw UsageError("frame: empty payload");
    if (payload.size() > kMaxPayloadBits) throw UsageError("frame: payload exceeds 65535 bits");
    return Packet{preamble_bits(scheme), payload, crc32_bits(payload)};
}

inline IqVector serialize_packet(const Packet& p, ModScheme scheme) { return modulate(pad_to_symbol(p.layout(scheme), scheme), scheme); }

/// Number of samples serialize_packet produces for a payload of `payload_bits`.
inline std::size_t packet_samples(std::size_t payload_bits, ModScheme scheme) {
    const std::size_t k = static_cast<std::size_t>(bits_per_symbol(scheme));
    const std::size_t total = static_cast<std::size_t>(kPreambleSymbols) * k + 16 + payload_bits + 32;
    return 1 + (total + k - 1) / k;
}

/// Bit offset of the payload inside the demodulated packet bit stream.
inline std::size_t payload_bit_offset(ModScheme scheme) {
    return static_cast<std::size_t>(kPreambleSymbols * bits_per_symbol(scheme)) + 16;
}

enum class DecodeStatus { NoPreamble, Incomplete, CrcMismatch, Ok };

struct DecodeResult {
    bool decodable = false;
    std::optional<Bits> payload;
    DecodeStatus status = DecodeStatus::NoPreamble;
    std::size_t start = 0;   // sample index of the packet's reference symbol
    std::size_t end = 0;     // one past the packet's last sample (when the length is known)
    double preamble_score = 0.0;
};

struct PreambleMatch {
    std::size_t lag = 0;
    double score = 0.0;  // |corr| / sqrt(E_ref E_window), in [0, 1]
};

/// Best normalized preamble correlation over all lags. Rotation and gain invariant.
inline PreambleMatch find_preamble(std::span<const IqSample> samples, ModScheme scheme) {
    const IqVector ref = preamble_symbols(scheme);
    PreambleMatch best;
    if (samples.size() < ref.size()) return best;
    double e_ref = 0.0;
    for (const auto& r : ref) e_ref += std::norm(r);
    double e_win = 0.0;
    for (std::size_t t = 0; t < ref.size(); ++t) e_win += std::norm(samples[t]);
    for (std::size_t lag = 0; lag + ref.size() <= samples.size(); ++lag) {
        if (lag > 0) {
            e_win += std::norm(samples[lag + ref.size() - 1]) - std::norm(samples[lag - 1]);
            e_win = std::max(e_win, 0.0);
        }
        if (e_win <= 0.0) continue;
        IqSample acc{};
        for (std::size_t t = 0; t < ref.size(); ++t) acc += samples[lag + t] * std::conj(ref[t]);
        const double score = std::abs(acc) / std::sqrt(e_ref * e_win);
        if (score > best.score) {
            best.score = score;
            best.lag = lag;
        }
    }
    return best;
}

/// Decodable iff the preamble correlation peak reaches the threshold and the CRC verifies.
inline DecodeResult check_decodable(std::span<const IqSample> samples, ModScheme scheme,
                                    double threshold = kPreambleThreshold) {
    DecodeResult r;
    const PreambleMatch m = find_preamble(samples, scheme);
    r.preamble_score = m.score;
    if (m.score < threshold) return r;
    r.start = m.lag;
    const std::size_t k = static_cast<std::size_t>(bits_per_symbol(scheme));
    const std::size_t header_bits = payload_bit_offset(scheme);
    const std::size_t header_samples = 1 + (header_bits + k - 1) / k;
    r.status = DecodeStatus::Incomplete;
    if (samples.size() - m.lag < header_samples) return r;
    const Bits head = demodulate(samples.subspan(m.lag, header_samples), scheme);
    const std::size_t n_payload = detail::read_bits(head, header_bits - 16, 16);
    if (n_payload == 0) {
        r.status = DecodeStatus::CrcMismatch;
        return r;
    }
    const std::size_t n_samples = packet_samples(n_payload, scheme);
    r.end = m.lag + n_samples;
    if (samples.size() - m.lag < n_samples) return r;
    const Bits all = demodulate(samples.subspan(m.lag, n_samples), scheme);
    Bits payload(all.begin() + static_cast<std::ptrdiff_t>(header_bits),
                 all.begin() + static_cast<std::ptrdiff_t>(header_bits + n_payload));
    const std::size_t crc_pos = header_bits + n_payload;
    const std::uint32_t crc = (detail::read_bits(all, crc_pos, 16) << 16) | detail::read_bits(all, crc_pos + 16, 16);
    if (crc != crc32_bits(payload)) {
        r.status = DecodeStatus::CrcMismatch;
        return r;
    }
    r.status = DecodeStatus::Ok;
    r.decodable = true;
    r.payload = std::move(payload);
    return r;
}

inline Bits random_bits(std::size_t n, Rng& rng) {
    Bits b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng.bit());
    return b;
}

/// Unit-power random symbol stream under the scheme (no framing).
inline IqVector random_symbols(std::size_t n, ModScheme scheme, Rng& rng) {
    if (n == 0) return {};
    const std::size_t k = static_cast<std::size_t>(bits_per_symbol(scheme));
    IqVector s = modulate(random_bits((n - 1) * k, rng), scheme);
    return s;
}

}  // namespace jamcancel
