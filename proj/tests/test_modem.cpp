#include <gtest/gtest.h>

#include "jamcancel/modem.hpp"

using namespace jamcancel;

namespace {

IqVector add_awgn(const IqVector& x, double noise_power, Rng& rng) {
    IqVector y = x;
    for (auto& s : y) s += rng.complex_gaussian(noise_power);
    return y;
}

}  // namespace

TEST(Modulate, DbpskZerosKeepConstantSymbol) {
    const IqVector s = modulate(Bits{0, 0, 0}, ModScheme::DBPSK);
    ASSERT_EQ(s.size(), 4u);
    for (std::size_t t = 1; t < s.size(); ++t) EXPECT_LT(std::abs(s[t] - s[0]), 1e-15);
}

TEST(Modulate, DbpskOnesRotateByPi) {
    const IqVector s = modulate(Bits{1, 1}, ModScheme::DBPSK);
    ASSERT_EQ(s.size(), 3u);
    EXPECT_LT(std::abs(s[1] + s[0]), 1e-12);
    EXPECT_LT(std::abs(s[2] - s[0]), 1e-12);
}

TEST(Modulate, DqpskGrayMap) {
    // {00: 0, 01: pi/2, 11: pi, 10: 3pi/2}
    const std::array<std::pair<Bits, double>, 4> cases = {{{{0, 0}, 0.0}, {{0, 1}, kPi / 2}, {{1, 1}, kPi}, {{1, 0}, 3 * kPi / 2}}};
    for (const auto& [bits, delta] : cases) {
        const IqVector s = modulate(bits, ModScheme::DQPSK);
        ASSERT_EQ(s.size(), 2u);
        EXPECT_LE(circular_distance(std::arg(s[1] * std::conj(s[0])), delta), 1e-12);
        EXPECT_EQ(demodulate(s, ModScheme::DQPSK), bits);
    }
}

TEST(Modulate, UnpaddedBitsRejected) {
    EXPECT_THROW(modulate(Bits{1, 0, 1}, ModScheme::DQPSK), UsageError);
    EXPECT_EQ(pad_to_symbol(Bits{1, 0, 1}, ModScheme::QAM16).size(), 4u);
}

TEST(Demodulate, RoundTripAllSchemes) {
    Rng rng(1);
    for (ModScheme s : kAllSchemes) {
        const Bits b = pad_to_symbol(random_bits(1'000'000, rng), s);
        EXPECT_EQ(demodulate(modulate(b, s), s), b) << to_string(s);
    }
}

TEST(Demodulate, RandomKilobitRoundTrip) {
    Rng rng(2);
    for (ModScheme s : kAllSchemes) {
        const Bits b = pad_to_symbol(random_bits(1024, rng), s);
        EXPECT_EQ(demodulate(modulate(b, s), s), b);
    }
}

TEST(Demodulate, InvariantToConstantRotation) {
    Rng rng(3);
    for (ModScheme s : kAllSchemes) {
        const Bits b = pad_to_symbol(random_bits(2048, rng), s);
        const IqVector x = modulate(b, s);
        for (int i = 0; i < 100; ++i) {
            const Phase th(rng.uniform(-kPi, kPi));
            ASSERT_EQ(demodulate(rotate(x, th), s), b) << to_string(s) << " theta=" << th.radians();
        }
    }
    const Bits b = random_bits(1024, rng);
    EXPECT_EQ(demodulate(rotate(modulate(b, ModScheme::DQPSK), Phase(1.3)), ModScheme::DQPSK), b);
}

TEST(Demodulate, QamInvariantToGain) {
    Rng rng(4);
    const Bits b = random_bits(4096, rng);
    IqVector x = modulate(b, ModScheme::QAM16);
    for (auto& v : x) v *= std::polar(0.37, 2.1);
    EXPECT_EQ(demodulate(x, ModScheme::QAM16), b);
}

TEST(Modulate, UnitAveragePower) {
    Rng rng(5);
    for (ModScheme s : {ModScheme::DBPSK, ModScheme::DQPSK, ModScheme::D8PSK}) {
        const IqVector x = modulate(pad_to_symbol(random_bits(100000, rng), s), s);
        EXPECT_NEAR(measure_power(x), 1.0, 1e-9) << to_string(s);
    }
    // The 16-QAM grid scaled by 1/sqrt(10) has unit mean power exactly over its 16 points.
    double grid = 0;
    for (unsigned q = 0; q < 4; ++q)
        for (unsigned p = 0; p < 4; ++p) grid += std::norm(detail::quarter_turns(detail::qam_inner_point(p), static_cast<int>(q)));
    EXPECT_NEAR(grid / 16.0, 1.0, 1e-12);
    const IqVector x = modulate(random_bits(400000, rng), ModScheme::QAM16);
    EXPECT_NEAR(measure_power(x), 1.0, 0.01);
}

TEST(DbpskBer, MatchesTheoryWithinTwentyPercent) {
    Rng rng(6);
    for (double snr_db : {6.0, 8.0, 10.0}) {
        const double snr = std::pow(10.0, snr_db / 10.0);
        const double theory = 0.5 * std::exp(-snr);
        std::size_t errors = 0, bits = 0;
        while (bits < 1'000'000) {
            const Bits b = random_bits(10000, rng);
            const IqVector y = add_awgn(modulate(b, ModScheme::DBPSK), 1.0 / snr, rng);
            errors += count_bit_errors(b, demodulate(y, ModScheme::DBPSK));
            bits += b.size();
        }
        const double ber = static_cast<double>(errors) / static_cast<double>(bits);
        EXPECT_NEAR(ber / theory, 1.0, 0.2) << "SNR " << snr_db << " dB: ber " << ber << " theory " << theory;
    }
}

TEST(BitErrorRate, Basics) {
    Rng rng(7);
    const Bits a = random_bits(1000, rng);
    EXPECT_EQ(bit_error_rate(a, a), 0.0);
    Bits c = a;
    for (auto& x : c) x ^= 1;
    EXPECT_EQ(bit_error_rate(a, c), 1.0);
    Bits f = a;
    f[3] ^= 1;
    f[500] ^= 1;
    f[999] ^= 1;
    EXPECT_DOUBLE_EQ(bit_error_rate(a, f), 0.003);
    EXPECT_THROW(bit_error_rate(a, Bits(999)), UsageError);
}

TEST(Crc32, StandardCheckValue) {
    // CRC-32 of ASCII "123456789" is 0xCBF43926; bits are fed LSB first per byte (reflected form).
    Bits bits;
    for (char ch : std::string("123456789"))
        for (int i = 0; i < 8; ++i) bits.push_back(static_cast<std::uint8_t>((static_cast<unsigned>(ch) >> i) & 1u));
    EXPECT_EQ(crc32_bits(bits), 0xCBF43926u);
}

TEST(Framing, CleanPacketDecodesAndRoundTrips) {
    Rng rng(8);
    for (ModScheme s : kAllSchemes) {
        const Bits payload = random_bits(512, rng);
        const Packet p = frame(payload, s);
        EXPECT_EQ(p.crc, crc32_bits(payload));
        EXPECT_EQ(p.preamble, preamble_bits(s));
        const IqVector x = serialize_packet(p, s);
        EXPECT_EQ(x.size(), packet_samples(payload.size(), s));
        const DecodeResult r = check_decodable(x, s);
        ASSERT_TRUE(r.decodable) << to_string(s);
        EXPECT_EQ(*r.payload, payload);
        EXPECT_EQ(r.start, 0u);
        EXPECT_EQ(r.end, x.size());
    }
    EXPECT_THROW(frame(Bits{}, ModScheme::DBPSK), UsageError);
}

TEST(Framing, DecodesAtOffsetUnderRotationAndNoise) {
    Rng rng(9);
    for (ModScheme s : kAllSchemes) {
        const Bits payload = random_bits(256, rng);
        const IqVector pkt = serialize_packet(frame(payload, s), s);
        IqVector stream = complex_noise(77, 0.001, rng);
        const IqVector rot = rotate(pkt, Phase(0.9));
        stream.insert(stream.end(), rot.begin(), rot.end());
        const IqVector tail = complex_noise(50, 0.001, rng);
        stream.insert(stream.end(), tail.begin(), tail.end());
        const DecodeResult r = check_decodable(add_awgn(stream, 0.001, rng), s);
        ASSERT_TRUE(r.decodable) << to_string(s);
        EXPECT_EQ(r.start, 77u);
        EXPECT_EQ(*r.payload, payload);
    }
}

TEST(Framing, IncompletePacketReportsIncomplete) {
    Rng rng(10);
    const IqVector pkt = serialize_packet(frame(random_bits(512, rng), ModScheme::DQPSK), ModScheme::DQPSK);
    const IqVector half(pkt.begin(), pkt.begin() + static_cast<std::ptrdiff_t>(pkt.size() / 2));
    const DecodeResult r = check_decodable(half, ModScheme::DQPSK);
    EXPECT_FALSE(r.decodable);
    EXPECT_EQ(r.status, DecodeStatus::Incomplete);
    EXPECT_EQ(r.end, pkt.size());
}

TEST(Framing, NoiseNeverDecodes) {
    Rng rng(11);
    for (int trial = 0; trial < 10000; ++trial) {
        const ModScheme s = kAllSchemes[static_cast<std::size_t>(trial % 4)];
        const IqVector n = complex_noise(128, 1.0, rng);
        ASSERT_FALSE(check_decodable(n, s).decodable);
    }
}

TEST(Framing, HeavyJammingPreventsDecoding) {
    Rng rng(12);
    int decoded = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const ModScheme s = kAllSchemes[static_cast<std::size_t>(trial % 4)];
        const IqVector pkt = serialize_packet(frame(random_bits(512, rng), s), s);
        const double jam_power = std::pow(10.0, 1.8);
        decoded += check_decodable(add_awgn(pkt, jam_power, rng), s).decodable;
    }
    EXPECT_EQ(decoded, 0);
}

TEST(Framing, CorruptedPayloadFailsCrc) {
    Rng rng(13);
    const Packet p = frame(random_bits(256, rng), ModScheme::DBPSK);
    IqVector x = serialize_packet(p, ModScheme::DBPSK);
    x[kPreambleSymbols + 16 + 40] *= -1.0;  // flips two adjacent differential decisions
    const DecodeResult r = check_decodable(x, ModScheme::DBPSK);
    EXPECT_FALSE(r.decodable);
    EXPECT_EQ(r.status, DecodeStatus::CrcMismatch);
}

TEST(Schemes, NamesRoundTrip) {
    for (ModScheme s : kAllSchemes) EXPECT_EQ(parse_scheme(to_string(s)), s);
    EXPECT_THROW(parse_scheme("64qam"), UsageError);
}
