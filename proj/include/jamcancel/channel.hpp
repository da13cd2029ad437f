#pragma once

// Two-antenna flat slow-fading channel, jammer waveform models and scenario generation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "jamcancel/iq_core.hpp"
#include "jamcancel/modem.hpp"

namespace jamcancel {

/// Complex gains from sender (S) and jammer (J) to receive antennas 1 and 2.
/// Derived quantities are computed on demand, never cached.
class ChannelGains {
public:
    ChannelGains(IqSample h_s1, IqSample h_s2, IqSample h_j1, IqSample h_j2)
        : h_s1_(h_s1), h_s2_(h_s2), h_j1_(h_j1), h_j2_(h_j2) {
        if (h_s1 == 0.0 || h_s2 == 0.0 || h_j1 == 0.0 || h_j2 == 0.0)
            throw UsageError("ChannelGains: all gains must be nonzero");
    }

    IqSample h_s1() const { return h_s1_; }
    IqSample h_s2() const { return h_s2_; }
    IqSample h_j1() const { return h_j1_; }
    IqSample h_j2() const { return h_j2_; }

    Phase delta_phi_s() const { return Phase(std::arg(h_s1_) - std::arg(h_s2_)); }
    Phase delta_phi_j() const { return Phase(std::arg(h_j1_) - std::arg(h_j2_)); }
    double a_j() const { return std::abs(h_j1_) / std::abs(h_j2_); }
    double a_s() const { return std::abs(h_s1_) / std::abs(h_s2_); }
    /// Circular separation of the two phase shifts, in [0, pi].
    double sep() const { return circular_distance(delta_phi_s().radians(), delta_phi_j().radians()); }

    /// Exact nulling coefficient p1 = h_J1 / h_J2.
    IqSample p1() const { return h_j1_ / h_j2_; }
    /// Gain the sender sees after nulling: p2 = h_S1 - p1 h_S2.
    IqSample p2() const { return h_s1_ - p1() * h_s2_; }

    ChannelGains scaled_jammer(double amplitude) const {
        return ChannelGains(h_s1_, h_s2_, h_j1_ * amplitude, h_j2_ * amplitude);
    }

    bool operator==(const ChannelGains&) const = default;

private:
    IqSample h_s1_, h_s2_, h_j1_, h_j2_;
};

/// Unit-magnitude sender gains and |h_J2| = 1, |h_J1| = a_j, with the requested separation.
/// Delta phi_J, the sign of the separation and the common phases are drawn uniformly.
inline ChannelGains make_gains(double sep, double a_j, Rng& rng) {
    if (!(sep >= 0.0 && sep <= kPi)) throw UsageError("make_gains: sep must lie in [0, pi]");
    if (!(a_j > 0.0) || !std::isfinite(a_j)) throw UsageError("make_gains: a_j must be positive");
    const double dphi_j = rng.uniform(-kPi, kPi);
    const double sign = rng.bit() ? 1.0 : -1.0;
    const double dphi_s = dphi_j + sign * sep;
    const double base_s = rng.uniform(-kPi, kPi);
    const double base_j = rng.uniform(-kPi, kPi);
    return ChannelGains(std::polar(1.0, base_s + dphi_s), std::polar(1.0, base_s), std::polar(a_j, base_j + dphi_j),
                        std::polar(1.0, base_j));
}

struct ChannelOutput {
    IqVector r1, r2;
};

/// R_i = h_Si S + h_Ji J + N_i. Absent emitters contribute nothing; noise is drawn per antenna.
inline ChannelOutput apply_channel(const IqVector* sender, const IqVector* jammer, const ChannelGains& g,
                                   double noise_power, Rng& rng) {
    if (noise_power < 0.0) throw UsageError("apply_channel: negative noise power");
    std::size_t n = 0;
    if (sender) n = sender->size();
    if (jammer) {
        if (sender && jammer->size() != n) throw UsageError("apply_channel: sender/jammer length mismatch");
        n = jammer->size();
    }
    ChannelOutput out{IqVector(n), IqVector(n)};
    for (std::size_t t = 0; t < n; ++t) {
        IqSample a{}, b{};
        if (sender) {
            a += g.h_s1() * (*sender)[t];
            b += g.h_s2() * (*sender)[t];
        }
        if (jammer) {
            a += g.h_j1() * (*jammer)[t];
            b += g.h_j2() * (*jammer)[t];
        }
        out.r1[t] = a;
        out.r2[t] = b;
    }
    if (noise_power > 0.0) {
        for (std::size_t t = 0; t < n; ++t) {
            out.r1[t] += rng.complex_gaussian(noise_power);
            out.r2[t] += rng.complex_gaussian(noise_power);
        }
    }
    return out;
}

struct GaussianWaveform {
    bool operator==(const GaussianWaveform&) const = default;
};
struct ModulatedWaveform {
    ModScheme scheme = ModScheme::DBPSK;
    bool operator==(const ModulatedWaveform&) const = default;
};
using JammerWaveform = std::variant<GaussianWaveform, ModulatedWaveform>;

struct ContinuousSchedule {
    bool operator==(const ContinuousSchedule&) const = default;
};
struct IntermittentSchedule {
    int on_blocks = 1;
    int off_blocks = 1;
    bool operator==(const IntermittentSchedule&) const = default;
};
/// Turns on one block after the sender's block power exceeds the trigger and stays on
/// only while the sender keeps transmitting.
struct ReactiveSchedule {
    double trigger_threshold = 0.1;
    bool operator==(const ReactiveSchedule&) const = default;
};
using JammerSchedule = std::variant<ContinuousSchedule, IntermittentSchedule, ReactiveSchedule>;

struct JammerProfile {
    JammerWaveform waveform = GaussianWaveform{};
    JammerSchedule schedule = ContinuousSchedule{};
    double power_db_rel = 0.0;  // jammer emitted power relative to a unit-power sender
};

inline std::string to_string(const JammerWaveform& w) {
    if (const auto* m = std::get_if<ModulatedWaveform>(&w)) return to_string(m->scheme);
    return "noise";
}

inline JammerWaveform parse_waveform(const std::string& s) {
    if (s == "noise" || s == "gaussian") return GaussianWaveform{};
    return ModulatedWaveform{parse_scheme(s)};
}

inline std::string to_string(const JammerSchedule& s) {
    if (std::holds_alternative<ContinuousSchedule>(s)) return "continuous";
    if (const auto* i = std::get_if<IntermittentSchedule>(&s))
        return "intermittent:" + std::to_string(i->on_blocks) + ":" + std::to_string(i->off_blocks);
    const auto& r = std::get<ReactiveSchedule>(s);
    char buf[64];
    std::snprintf(buf, sizeof buf, "reactive:%.17g", r.trigger_threshold);
    return buf;
}

/// "continuous", "intermittent:ON:OFF" or "reactive:THRESHOLD".
inline JammerSchedule parse_schedule(const std::string& s) {
    if (s == "continuous") return ContinuousSchedule{};
    auto fields = [&](std::size_t from) {
        std::vector<std::string> out;
        std::size_t pos = from;
        while (pos <= s.size()) {
            const std::size_t next = s.find(':', pos);
            out.push_back(s.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        return out;
    };
    try {
        if (s.rfind("intermittent:", 0) == 0) {
            const auto f = fields(13);
            if (f.size() != 2) throw UsageError("");
            IntermittentSchedule i{std::stoi(f[0]), std::stoi(f[1])};
            if (i.on_blocks < 1 || i.off_blocks < 1) throw UsageError("");
            return i;
        }
        if (s.rfind("reactive:", 0) == 0) {
            const auto f = fields(9);
            if (f.size() != 1) throw UsageError("");
            return ReactiveSchedule{std::stod(f[0])};
        }
    } catch (const std::exception&) {
    }
    throw UsageError("jammer_schedule: expected continuous | intermittent:ON:OFF (ON,OFF >= 1) | reactive:THRESHOLD, got '" + s + "'");
}

struct JammerSignal {
    IqVector samples;
    std::vector<std::uint8_t> active;  // one flag per block
};

/// Jammer samples and per-block activity mask. `sender_block_power` drives the reactive schedule
/// (an absent vector means the sender is idle throughout).
inline JammerSignal generate_jammer(const JammerProfile& profile, std::size_t length, std::size_t block_len, Rng& rng,
                                    const std::vector<double>* sender_block_power = nullptr) {
    if (block_len == 0) throw UsageError("generate_jammer: zero block length");
    const std::size_t n_blocks = (length + block_len - 1) / block_len;
    JammerSignal out{IqVector(length), std::vector<std::uint8_t>(n_blocks, 0)};

    if (std::holds_alternative<ContinuousSchedule>(profile.schedule)) {
        std::fill(out.active.begin(), out.active.end(), 1);
    } else if (const auto* i = std::get_if<IntermittentSchedule>(&profile.schedule)) {
        if (i->on_blocks < 1 || i->off_blocks < 1) throw UsageError("generate_jammer: on/off block counts must be >= 1");
        const std::size_t period = static_cast<std::size_t>(i->on_blocks + i->off_blocks);
        for (std::size_t b = 0; b < n_blocks; ++b) out.active[b] = (b % period) < static_cast<std::size_t>(i->on_blocks);
    } else {
        const auto& r = std::get<ReactiveSchedule>(profile.schedule);
        if (sender_block_power) {
            const auto& p = *sender_block_power;
            for (std::size_t b = 1; b < n_blocks && b < p.size(); ++b)
                out.active[b] = p[b - 1] >= r.trigger_threshold && p[b] > 0.0;
        }
    }

    const double amp = std::pow(10.0, profile.power_db_rel / 20.0);
    // Each contiguous burst is an independent segment of the waveform.
    std::size_t b = 0;
    while (b < n_blocks) {
        if (!out.active[b]) {
            ++b;
            continue;
        }
        std::size_t e = b;
        while (e < n_blocks && out.active[e]) ++e;
        const std::size_t s0 = b * block_len;
        const std::size_t s1 = std::min(length, e * block_len);
        IqVector seg;
        if (const auto* m = std::get_if<ModulatedWaveform>(&profile.waveform))
            seg = random_symbols(s1 - s0, m->scheme, rng);
        else
            seg = complex_noise(s1 - s0, 1.0, rng);
        for (std::size_t t = s0; t < s1; ++t) out.samples[t] = amp * seg[t - s0];
        b = e;
    }
    return out;
}

enum class BlockState { Noise, SenderOnly, JammerOnly, Collision };

inline std::string to_string(BlockState s) {
    switch (s) {
        case BlockState::Noise: return "noise";
        case BlockState::SenderOnly: return "sender";
        case BlockState::JammerOnly: return "jammer";
        case BlockState::Collision: return "collision";
    }
    return "?";
}

struct ScenarioConfig {
    ModScheme scheme = ModScheme::DBPSK;
    double sjr_db = 0.0;
    double snr_db = 20.0;
    double sep_rad = kPi / 2.0;
    double a_j = 1.0;
    bool jammer_enabled = true;
    JammerWaveform jammer_waveform = GaussianWaveform{};
    JammerSchedule jammer_schedule = ContinuousSchedule{};
    std::uint64_t seed = 1;
    int n_packets = 4;
    int payload_bytes = 64;
    int block_len = kDefaultBlockLen;
    int warmup_blocks = 8;  // blocks before the first packet
    int gap_blocks = 2;     // idle blocks between packets
    int tail_blocks = 2;    // blocks after the last packet

    void validate() const {
        auto bad = [](const std::string& field, const std::string& why) { throw UsageError("config field '" + field + "': " + why); };
        if (!std::isfinite(sjr_db)) bad("sjr_db", "must be finite");
        if (!std::isfinite(snr_db)) bad("snr_db", "must be finite");
        if (!(sep_rad >= 0.0 && sep_rad <= kPi)) bad("sep_rad", "must lie in [0, pi]");
        if (!(a_j > 0.0) || !std::isfinite(a_j)) bad("a_j", "must be positive");
        if (n_packets < 0) bad("n_packets", "must be >= 0");
        if (payload_bytes < 1 || payload_bytes * 8 > static_cast<int>(kMaxPayloadBits)) bad("payload_bytes", "must be in [1, 8191]");
        if (block_len < 4) bad("block_len", "must be >= 4");
        if (warmup_blocks < 0) bad("warmup_blocks", "must be >= 0");
        if (gap_blocks < 0) bad("gap_blocks", "must be >= 0");
        if (tail_blocks < 0) bad("tail_blocks", "must be >= 0");
        if (const auto* i = std::get_if<IntermittentSchedule>(&jammer_schedule))
            if (i->on_blocks < 1 || i->off_blocks < 1) bad("jammer_schedule", "on/off block counts must be >= 1");
    }
};

struct BlockTruth {
    BlockState state = BlockState::Noise;
    ChannelGains gains;
    int packet = -1;  // index of the sender packet overlapping this block, -1 if none
};

struct PacketRecord {
    std::size_t start_sample = 0;  // reference symbol position
    std::size_t n_samples = 0;
    Bits payload;
    std::size_t first_block = 0;
    std::size_t end_block = 0;  // one past the last block the packet touches
};

struct Scenario {
    ScenarioConfig config;
    ChannelGains gains;
    double noise_power = 0.0;
    double jammer_amplitude = 0.0;  // scaling applied to unit-power jammer waveforms
    IqVector r1, r2;
    IqVector sender;  // transmitted sender samples (for audits)
    IqVector jammer;  // transmitted jammer samples
    std::vector<BlockTruth> truth;
    std::vector<PacketRecord> packets;

    std::size_t n_blocks() const { return truth.size(); }
    std::size_t block_len() const { return static_cast<std::size_t>(config.block_len); }
};

/// Deterministic per seed. SJR is referenced to antenna 1: 10 log10(E_S1 / E_J1).
/// SNR is sender power at antenna 1 over per-antenna noise power.
inline Scenario build_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    Rng root(cfg.seed);
    Rng gain_rng = root.fork(1), payload_rng = root.fork(2), jammer_rng = root.fork(3), noise_rng = root.fork(4);

    const ChannelGains base = make_gains(cfg.sep_rad, cfg.a_j, gain_rng);
    const std::size_t M = static_cast<std::size_t>(cfg.block_len);
    const std::size_t payload_bits = static_cast<std::size_t>(cfg.payload_bytes) * 8;
    const std::size_t pkt_len = packet_samples(payload_bits, cfg.scheme);
    const std::size_t pkt_blocks = (pkt_len + M - 1) / M;

    std::vector<PacketRecord> packets;
    std::size_t block = static_cast<std::size_t>(cfg.warmup_blocks);
    for (int p = 0; p < cfg.n_packets; ++p) {
        PacketRecord rec;
        rec.first_block = block;
        rec.end_block = block + pkt_blocks;
        rec.start_sample = block * M;
        rec.n_samples = pkt_len;
        rec.payload = random_bits(payload_bits, payload_rng);
        packets.push_back(std::move(rec));
        block += pkt_blocks + static_cast<std::size_t>(cfg.gap_blocks);
    }
    if (!packets.empty()) block -= static_cast<std::size_t>(cfg.gap_blocks);
    const std::size_t n_blocks = block + static_cast<std::size_t>(cfg.tail_blocks);
    const std::size_t n = n_blocks * M;

    IqVector sender(n);
    std::vector<int> packet_of(n_blocks, -1);
    for (std::size_t p = 0; p < packets.size(); ++p) {
        const IqVector s = serialize_packet(frame(packets[p].payload, cfg.scheme), cfg.scheme);
        std::copy(s.begin(), s.end(), sender.begin() + static_cast<std::ptrdiff_t>(packets[p].start_sample));
        for (std::size_t b = packets[p].first_block; b < packets[p].end_block; ++b) packet_of[b] = static_cast<int>(p);
    }
    std::vector<double> sender_block_power(n_blocks, 0.0);
    for (std::size_t b = 0; b < n_blocks; ++b)
        sender_block_power[b] = measure_power(std::span<const IqSample>(sender).subspan(b * M, M));

    Scenario sc{cfg, base, 0.0, 0.0, {}, {}, std::move(sender), {}, {}, std::move(packets)};
    sc.noise_power = std::norm(base.h_s1()) / std::pow(10.0, cfg.snr_db / 10.0);

    JammerSignal jam;
    if (cfg.jammer_enabled) {
        // E_J1 = |h_J1|^2 P_J must equal E_S1 10^(-SJR/10) with a unit-power sender.
        const double pj = std::norm(base.h_s1()) / std::norm(base.h_j1()) * std::pow(10.0, -cfg.sjr_db / 10.0);
        JammerProfile prof{cfg.jammer_waveform, cfg.jammer_schedule, 10.0 * std::log10(pj)};
        jam = generate_jammer(prof, n, M, jammer_rng, &sender_block_power);
        sc.jammer_amplitude = std::sqrt(pj);
    } else {
        jam = JammerSignal{IqVector(n), std::vector<std::uint8_t>(n_blocks, 0)};
    }
    sc.jammer = std::move(jam.samples);

    ChannelOutput rx = apply_channel(&sc.sender, &sc.jammer, base, sc.noise_power, noise_rng);
    sc.r1 = std::move(rx.r1);
    sc.r2 = std::move(rx.r2);

    sc.truth.reserve(n_blocks);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const bool s_on = packet_of[b] >= 0;
        const bool j_on = jam.active[b] != 0;
        BlockState st = s_on ? (j_on ? BlockState::Collision : BlockState::SenderOnly)
                             : (j_on ? BlockState::JammerOnly : BlockState::Noise);
        sc.truth.push_back(BlockTruth{st, base, packet_of[b]});
    }
    return sc;
}

}  // namespace jamcancel
