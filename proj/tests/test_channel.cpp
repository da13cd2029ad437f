#include <gtest/gtest.h>

#include "jamcancel/channel.hpp"

using namespace jamcancel;

TEST(ApplyChannel, SenderOnlyDirectSubstitution) {
    Rng rng(1);
    const IqVector s = random_symbols(200, ModScheme::DQPSK, rng);
    const ChannelGains g({1, 0}, {0, 1}, {1, 0}, {1, 0});
    const auto out = apply_channel(&s, nullptr, g, 0.0, rng);
    const IqVector r2 = rotate(s, Phase(kPi / 2));
    for (std::size_t t = 0; t < s.size(); ++t) {
        EXPECT_EQ(out.r1[t], s[t]);
        EXPECT_LT(std::abs(out.r2[t] - r2[t]), 1e-15);
    }
}

TEST(ApplyChannel, UnitGainsSumEmitters) {
    Rng rng(2);
    const IqVector s = random_symbols(100, ModScheme::DBPSK, rng);
    const IqVector j = complex_noise(100, 2.0, rng);
    const ChannelGains g({1, 0}, {1, 0}, {1, 0}, {1, 0});
    const auto out = apply_channel(&s, &j, g, 0.0, rng);
    for (std::size_t t = 0; t < s.size(); ++t) {
        EXPECT_EQ(out.r1[t], s[t] + j[t]);
        EXPECT_EQ(out.r2[t], s[t] + j[t]);
    }
}

TEST(ApplyChannel, NoiseOnlyPower) {
    Rng rng(3);
    const IqVector zero(10000);
    const ChannelGains g({1, 0}, {1, 0}, {1, 0}, {1, 0});
    const auto out = apply_channel(&zero, nullptr, g, 0.01, rng);
    EXPECT_NEAR(measure_power(out.r1), 0.01, 0.001);
    EXPECT_NEAR(measure_power(out.r2), 0.01, 0.001);
}

TEST(ApplyChannel, RejectsMismatchAndNegativeNoise) {
    Rng rng(4);
    const IqVector a(10), b(11);
    const ChannelGains g({1, 0}, {1, 0}, {1, 0}, {1, 0});
    EXPECT_THROW(apply_channel(&a, &b, g, 0.0, rng), UsageError);
    EXPECT_THROW(apply_channel(&a, nullptr, g, -1.0, rng), UsageError);
}

TEST(ChannelGains, DerivedQuantities) {
    const ChannelGains g(std::polar(1.0, 0.4), std::polar(1.0, 0.1), std::polar(2.0, -1.0), std::polar(0.5, 0.5));
    EXPECT_NEAR(g.delta_phi_s().radians(), 0.3, 1e-12);
    EXPECT_NEAR(g.delta_phi_j().radians(), -1.5, 1e-12);
    EXPECT_NEAR(g.a_j(), 4.0, 1e-12);
    EXPECT_NEAR(g.sep(), 1.8, 1e-12);
    EXPECT_LT(std::abs(g.p1() - std::polar(4.0, -1.5)), 1e-12);
    EXPECT_THROW(ChannelGains({0, 0}, {1, 0}, {1, 0}, {1, 0}), UsageError);
}

TEST(MakeGains, ConstructiveSepAndAmplitude) {
    Rng rng(5);
    const ChannelGains g = make_gains(kPi / 2, 1.0, rng);
    EXPECT_NEAR(g.sep(), kPi / 2, 1e-12);
    const ChannelGains z = make_gains(0.0, 1.0, rng);
    EXPECT_LE(circular_distance(z.delta_phi_s().radians(), z.delta_phi_j().radians()), 1e-12);
    EXPECT_THROW(make_gains(-0.1, 1.0, rng), UsageError);
    EXPECT_THROW(make_gains(3.5, 1.0, rng), UsageError);
    EXPECT_THROW(make_gains(1.0, 0.0, rng), UsageError);
}

TEST(MakeGains, RandomDrawsHonourInvariants) {
    Rng rng(6);
    for (int i = 0; i < 1000; ++i) {
        const double sep = rng.uniform(0.0, kPi);
        const double a = std::exp(rng.uniform(-2.0, 2.0));
        const ChannelGains g = make_gains(sep, a, rng);
        ASSERT_NEAR(g.sep(), sep, 1e-9);
        ASSERT_NEAR(g.a_j(), a, 1e-9 * a);
        ASSERT_GE(g.sep(), 0.0);
        ASSERT_LE(g.sep(), kPi);
    }
}

TEST(GenerateJammer, ContinuousNoisePower) {
    Rng rng(7);
    const auto j = generate_jammer(JammerProfile{}, 10000, 100, rng);
    EXPECT_NEAR(measure_power(j.samples), 1.0, 0.05);
    for (auto a : j.active) EXPECT_EQ(a, 1);
}

TEST(GenerateJammer, IntermittentPeriod) {
    Rng rng(8);
    const auto j = generate_jammer(JammerProfile{GaussianWaveform{}, IntermittentSchedule{2, 3}, 0.0}, 20 * 64, 64, rng);
    ASSERT_EQ(j.active.size(), 20u);
    for (std::size_t b = 0; b < 20; ++b) {
        EXPECT_EQ(j.active[b], (b % 5) < 2 ? 1 : 0);
        const double p = measure_power(std::span<const IqSample>(j.samples).subspan(b * 64, 64));
        if (!j.active[b]) EXPECT_EQ(p, 0.0);
        else EXPECT_GT(p, 0.0);
    }
}

TEST(GenerateJammer, ReactiveIdleSenderNeverFires) {
    Rng rng(9);
    const auto idle = generate_jammer(JammerProfile{GaussianWaveform{}, ReactiveSchedule{0.1}, 0.0}, 1280, 128, rng);
    for (auto a : idle.active) EXPECT_EQ(a, 0);
    const std::vector<double> zeros(10, 0.0);
    const auto quiet = generate_jammer(JammerProfile{GaussianWaveform{}, ReactiveSchedule{0.1}, 0.0}, 1280, 128, rng, &zeros);
    for (auto a : quiet.active) EXPECT_EQ(a, 0);
}

TEST(GenerateJammer, ReactiveFollowsSenderWithOneBlockLatency) {
    Rng rng(10);
    const std::vector<double> p = {0, 0, 1, 1, 1, 0, 0, 1, 0, 0};
    const auto j = generate_jammer(JammerProfile{GaussianWaveform{}, ReactiveSchedule{0.5}, 0.0}, 1280, 128, rng, &p);
    const std::vector<std::uint8_t> expect = {0, 0, 0, 1, 1, 0, 0, 0, 0, 0};
    EXPECT_EQ(j.active, expect);
}

TEST(GenerateJammer, ModulatedWaveformIsUnitPowerPsk) {
    Rng rng(11);
    const auto j = generate_jammer(JammerProfile{ModulatedWaveform{ModScheme::DQPSK}, ContinuousSchedule{}, 3.0}, 4096, 128, rng);
    const double expect = std::pow(10.0, 0.3);
    for (const auto& s : j.samples) ASSERT_NEAR(std::norm(s), expect, 1e-9);
}

TEST(ScheduleParsing, RoundTripAndErrors) {
    for (const std::string s : {"continuous", "intermittent:2:3", "reactive:0.25"}) EXPECT_EQ(to_string(parse_schedule(s)), s);
    EXPECT_THROW(parse_schedule("intermittent:0:3"), UsageError);
    EXPECT_THROW(parse_schedule("bursty"), UsageError);
    EXPECT_TRUE(std::holds_alternative<GaussianWaveform>(parse_waveform("noise")));
    EXPECT_EQ(std::get<ModulatedWaveform>(parse_waveform("8psk")).scheme, ModScheme::D8PSK);
}

TEST(BuildScenario, JammerDisabledHasOnlyNoiseAndSender) {
    ScenarioConfig cfg;
    cfg.jammer_enabled = false;
    const Scenario sc = build_scenario(cfg);
    bool saw_sender = false;
    for (const auto& t : sc.truth) {
        EXPECT_TRUE(t.state == BlockState::Noise || t.state == BlockState::SenderOnly);
        saw_sender |= t.state == BlockState::SenderOnly;
    }
    EXPECT_TRUE(saw_sender);
}

TEST(BuildScenario, ContinuousJammerCollidesWithEveryPacketBlock) {
    ScenarioConfig cfg;
    cfg.gap_blocks = 0;
    const Scenario sc = build_scenario(cfg);
    for (std::size_t b = 0; b < sc.n_blocks(); ++b) {
        const auto st = sc.truth[b].state;
        if (b < static_cast<std::size_t>(cfg.warmup_blocks)) {
            EXPECT_EQ(st, BlockState::JammerOnly);
        } else if (b < sc.packets.back().end_block) {
            EXPECT_EQ(st, BlockState::Collision);
        }
    }
}

TEST(BuildScenario, DeterministicPerSeed) {
    ScenarioConfig cfg;
    cfg.seed = 99;
    const Scenario a = build_scenario(cfg), b = build_scenario(cfg);
    EXPECT_EQ(a.r1, b.r1);
    EXPECT_EQ(a.r2, b.r2);
    cfg.seed = 100;
    EXPECT_NE(build_scenario(cfg).r1, a.r1);
}

TEST(BuildScenario, SjrAudit) {
    for (double sjr : {-18.0, -6.0, 4.0}) {
        ScenarioConfig cfg;
        cfg.sjr_db = sjr;
        cfg.a_j = 1.7;
        cfg.n_packets = 6;
        const Scenario sc = build_scenario(cfg);
        double es = 0, ej = 0;
        std::size_t n = 0;
        for (std::size_t t = 0; t < sc.r1.size(); ++t) {
            if (sc.sender[t] == IqSample{}) continue;
            es += std::norm(sc.gains.h_s1() * sc.sender[t]);
            ej += std::norm(sc.gains.h_j1() * sc.jammer[t]);
            ++n;
        }
        ASSERT_GE(n, 1000u);
        const double realized = 10.0 * std::log10(es / ej);
        EXPECT_NEAR(realized, sjr, 0.5);
    }
}

TEST(BuildScenario, SjrMinus18PowerRatio) {
    ScenarioConfig cfg;
    cfg.sjr_db = -18.0;
    cfg.snr_db = 60.0;
    cfg.n_packets = 8;
    const Scenario sc = build_scenario(cfg);
    const std::size_t M = sc.block_len();
    double jam = 0, snd = 0;
    for (std::size_t b = 0; b < sc.n_blocks(); ++b) {
        const auto blk = std::span<const IqSample>(sc.r1).subspan(b * M, M);
        if (sc.truth[b].state == BlockState::JammerOnly) jam += measure_power(blk);
    }
    std::size_t nj = 0;
    for (const auto& t : sc.truth) nj += t.state == BlockState::JammerOnly;
    jam /= static_cast<double>(nj);
    snd = std::norm(sc.gains.h_s1());
    EXPECT_NEAR(jam / snd / std::pow(10.0, 1.8), 1.0, 0.1);
}

TEST(BuildScenario, GainsConstantAcrossPacket) {
    const Scenario sc = build_scenario(ScenarioConfig{});
    for (const auto& p : sc.packets)
        for (std::size_t b = p.first_block; b < p.end_block; ++b) EXPECT_EQ(sc.truth[b].gains, sc.truth[p.first_block].gains);
}

TEST(BuildScenario, NoiseFreeJammerOffDemodulatesExactly) {
    for (ModScheme s : kAllSchemes) {
        ScenarioConfig cfg;
        cfg.scheme = s;
        cfg.jammer_enabled = false;
        cfg.snr_db = 300.0;
        const Scenario sc = build_scenario(cfg);
        for (const auto& p : sc.packets) {
            const auto rx = std::span<const IqSample>(sc.r1).subspan(p.start_sample, p.n_samples);
            const DecodeResult r = check_decodable(rx, s);
            ASSERT_TRUE(r.decodable) << to_string(s);
            EXPECT_EQ(*r.payload, p.payload);
        }
    }
}

TEST(BuildScenario, InvalidFieldNamed) {
    ScenarioConfig cfg;
    cfg.sep_rad = 4.0;
    try {
        build_scenario(cfg);
        FAIL();
    } catch (const UsageError& e) {
        EXPECT_NE(std::string(e.what()).find("sep_rad"), std::string::npos);
    }
    cfg = {};
    cfg.payload_bytes = 0;
    EXPECT_THROW(build_scenario(cfg), UsageError);
}
