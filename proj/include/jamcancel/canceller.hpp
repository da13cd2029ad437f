#pragma once

// Per-block jamming cancellation state machine.
//
// Each block pair (R1, R2) arrives with the network's estimates. The indicator pair picks the branch:
//   Noise      skip the block
//   Single     pass R1 through; buffer the block until a decode check says whose it was
//              (sender: record E_S and track the sender phase; otherwise record E_J and track the jammer phase)
//   Collision  pick the jammer phase closest to the tracked one, smooth it, estimate the amplitude
//              ratio from the power ledger and output R1 - A_J e^{j phi_J} R2.

#include <array>
#include <cmath>
#include <cstdio>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jamcancel/iq_core.hpp"
#include "jamcancel/modem.hpp"
#include "jamcancel/phase_net.hpp"

namespace jamcancel {

enum class ChannelState { Noise, Single, Collision };

inline const char* to_string(ChannelState s) {
    switch (s) {
        case ChannelState::Noise: return "noise";
        case ChannelState::Single: return "single";
        case ChannelState::Collision: return "collision";
    }
    return "?";
}

inline ChannelState classify(std::array<int, 2> ind) {
    const int n = (ind[0] ? 1 : 0) + (ind[1] ? 1 : 0);
    return n == 0 ? ChannelState::Noise : n == 1 ? ChannelState::Single : ChannelState::Collision;
}

enum class SmoothingMode { Phasor, Linear };

inline const char* to_string(SmoothingMode m) { return m == SmoothingMode::Phasor ? "phasor" : "linear"; }

inline SmoothingMode parse_smoothing(const std::string& s) {
    if (s == "phasor") return SmoothingMode::Phasor;
    if (s == "linear") return SmoothingMode::Linear;
    throw UsageError("unknown smoothing mode '" + s + "' (expected phasor or linear)");
}

/// Exponential smoothing of a phase track. Phasor mode averages on the unit circle; linear mode
/// blends the raw angles and wraps the result. An unset track adopts the new estimate.
inline Phase smooth_phase(std::optional<Phase> cur, Phase estimate, double lambda, SmoothingMode mode = SmoothingMode::Phasor) {
    if (!cur) return estimate;
    if (mode == SmoothingMode::Linear) return Phase(lambda * estimate.radians() + (1.0 - lambda) * cur->radians());
    const IqSample z = lambda * estimate.phasor() + (1.0 - lambda) * cur->phasor();
    if (std::abs(z) < 1e-300) return *cur;  // exactly opposite phasors at lambda = 0.5
    return Phase(std::arg(z));
}

struct JammerPhaseChoice {
    Phase phase;
    int slot = 1;                 // 1 or 2: which network output was taken
    bool low_confidence = false;  // no phase history to choose by
};

/// Collision branch candidate selection. With a jammer track: closest candidate (ties to slot 1).
/// Cold start with a sender track: candidate farther from the sender phase (ties to slot 1).
/// No history: slot 2, flagged low-confidence.
inline JammerPhaseChoice select_jammer_phase(double p_s1, double p_s2, std::optional<Phase> jammer_cur,
                                             std::optional<Phase> sender_cur = std::nullopt) {
    const Phase a(p_s1), b(p_s2);
    if (jammer_cur) {
        const double da = circular_distance(a.radians(), jammer_cur->radians());
        const double db = circular_distance(b.radians(), jammer_cur->radians());
        return db < da ? JammerPhaseChoice{b, 2, false} : JammerPhaseChoice{a, 1, false};
    }
    if (sender_cur) {
        const double da = circular_distance(a.radians(), sender_cur->radians());
        const double db = circular_distance(b.radians(), sender_cur->radians());
        return db > da ? JammerPhaseChoice{b, 2, false} : JammerPhaseChoice{a, 1, false};
    }
    return {b, 2, true};
}

using PowerPair = std::array<double, 2>;

struct RatioEstimate {
    double a_j = 1.0;
    bool degenerate = false;
    std::optional<PowerPair> e_s;  // sender ledger after the refresh rule
};

/// Amplitude ratio at a collision block from the power ledger. When the previous block was a
/// jammer-only period (I_last_J = 1 and the previous indicators were a XOR), the sender ledger is
/// refreshed as E_S = E_T - E_J first. A non-positive difference or a missing ledger falls back
/// to the last good ratio (or 1).
inline RatioEstimate estimate_amplitude_ratio(const PowerPair& e_t, std::optional<PowerPair> e_s, std::optional<PowerPair> e_j,
                                              std::array<int, 2> prev_ind, int i_last_j, std::optional<double> a_j_last) {
    RatioEstimate r;
    r.e_s = e_s;
    if (i_last_j == 1 && classify(prev_ind) == ChannelState::Single && e_j) r.e_s = PowerPair{e_t[0] - (*e_j)[0], e_t[1] - (*e_j)[1]};
    const auto fallback = [&] {
        r.degenerate = true;
        r.a_j = a_j_last.value_or(1.0);
        return r;
    };
    if (!r.e_s) return fallback();
    const double num = e_t[0] - (*r.e_s)[0];
    const double den = e_t[1] - (*r.e_s)[1];
    if (!(num > 0.0) || !(den > 0.0)) return fallback();
    r.a_j = std::sqrt(num / den);
    if (!std::isfinite(r.a_j) || r.a_j <= 0.0) return fallback();
    return r;
}

/// R1 - p1 R2 with p1 = a_j e^{j phi_J}.
inline IqVector cancel(std::span<const IqSample> r1, std::span<const IqSample> r2, double a_j, Phase phi_j) {
    if (r1.size() != r2.size()) throw UsageError("cancel: antenna blocks differ in length");
    if (!(a_j > 0.0) || !std::isfinite(a_j)) throw UsageError("cancel: amplitude ratio must be positive");
    const IqSample p1 = std::polar(a_j, phi_j.radians());
    IqVector out(r1.size());
    for (std::size_t t = 0; t < r1.size(); ++t) out[t] = r1[t] - p1 * r2[t];
    return out;
}

inline IqBlock cancel(const IqBlock& r1, const IqBlock& r2, double a_j, Phase phi_j) {
    return IqBlock(cancel(r1.samples(), r2.samples(), a_j, phi_j), 1);
}

struct CancellerConfig {
    double lambda = 0.01;
    SmoothingMode smoothing = SmoothingMode::Phasor;
    ModScheme scheme = ModScheme::DQPSK;
    double preamble_threshold = kPreambleThreshold;
    std::size_t max_pending_blocks = 1024;

    void validate() const {
        if (!(lambda > 0.0 && lambda <= 1.0)) throw UsageError("CancellerConfig: lambda must lie in (0, 1]");
        if (max_pending_blocks < 2) throw UsageError("CancellerConfig: max_pending_blocks must be at least 2");
    }
};

/// A Single block waiting for the decode check.
struct PendingBlock {
    IqVector r1;
    PowerPair power{};
    Phase estimate;  // phase estimate from the indicated slot
};

struct CancellerCounters {
    std::uint64_t degenerate_ratio = 0;
    std::uint64_t low_confidence = 0;
    std::uint64_t sender_packets = 0;
    std::uint64_t jammer_blocks = 0;
    bool operator==(const CancellerCounters&) const = default;
};

struct CancellerState {
    std::optional<Phase> phi_j;  // tracked jammer phase shift
    std::optional<Phase> phi_s;  // tracked sender phase shift
    std::optional<PowerPair> e_s;
    std::optional<PowerPair> e_j;
    int i_last_j = 0;
    std::optional<double> a_j_last;
    std::array<int, 2> prev_ind{0, 0};
    // Pending blocks are immutable and shared between successive state values.
    std::vector<std::shared_ptr<const PendingBlock>> pending;
    CancellerCounters counters;

    bool operator==(const CancellerState&) const = default;
};

enum class Action { Pass, Cancelled, Skip };

inline const char* to_string(Action a) {
    switch (a) {
        case Action::Pass: return "pass";
        case Action::Cancelled: return "cancelled";
        case Action::Skip: return "skip";
    }
    return "?";
}

struct BlockDiagnostic {
    std::size_t index = 0;
    ChannelState state = ChannelState::Noise;
    std::array<int, 2> ind{0, 0};
    double p_s1 = 0.0, p_s2 = 0.0;
    double phi_j = std::nan("");   // phase used for cancellation (collision only)
    double a_j = std::nan("");
    PowerPair e_t{};
    Action action = Action::Skip;
    bool low_confidence = false;
    bool degenerate_ratio = false;
};

struct StepResult {
    CancellerState state;
    Action action = Action::Skip;
    IqVector output;  // Cancelled: cleaned block; Pass / Skip: R1 unchanged
    BlockDiagnostic diag;
};

namespace cancel_detail {

inline void resolve_jammer(CancellerState& s, const CancellerConfig& cfg, std::size_t count) {
    if (count == 0) return;
    PowerPair e{0.0, 0.0};
    for (std::size_t i = 0; i < count; ++i) {
        const auto& b = *s.pending[i];
        e[0] += b.power[0];
        e[1] += b.power[1];
        s.phi_j = smooth_phase(s.phi_j, b.estimate, cfg.lambda, cfg.smoothing);
    }
    s.e_j = PowerPair{e[0] / static_cast<double>(count), e[1] / static_cast<double>(count)};
    s.i_last_j = 1;
    s.counters.jammer_blocks += count;
    s.pending.erase(s.pending.begin(), s.pending.begin() + static_cast<std::ptrdiff_t>(count));
}

/// Sender packet occupying samples [start, end) of the pending buffer; blocks up to the one
/// containing `end - 1` are consumed. E_S is averaged over blocks lying fully inside the packet.
inline void resolve_sender(CancellerState& s, const CancellerConfig& cfg, std::size_t start, std::size_t end) {
    std::size_t offset = 0, consumed = 0;
    PowerPair e{0.0, 0.0};
    std::size_t inside = 0;
    for (const auto& bp : s.pending) {
        if (offset >= end) break;
        const std::size_t len = bp->r1.size();
        if (offset >= start && offset + len <= end) {
            e[0] += bp->power[0];
            e[1] += bp->power[1];
            ++inside;
        }
        if (offset + len > start) s.phi_s = smooth_phase(s.phi_s, bp->estimate, cfg.lambda, cfg.smoothing);
        offset += len;
        ++consumed;
    }
    if (inside == 0 && consumed > 0) {
        // Packet shorter than a block: use the blocks it touches.
        for (std::size_t i = 0; i < consumed; ++i) {
            e[0] += s.pending[i]->power[0];
            e[1] += s.pending[i]->power[1];
        }
        inside = consumed;
    }
    if (inside > 0) s.e_s = PowerPair{e[0] / static_cast<double>(inside), e[1] / static_cast<double>(inside)};
    s.i_last_j = 0;
    ++s.counters.sender_packets;
    s.pending.erase(s.pending.begin(), s.pending.begin() + static_cast<std::ptrdiff_t>(consumed));
}

/// Number of whole pending blocks that end at or before sample `pos`.
inline std::size_t blocks_before(const CancellerState& s, std::size_t pos) {
    std::size_t offset = 0, n = 0;
    for (const auto& bp : s.pending) {
        if (offset + bp->r1.size() > pos) break;
        offset += bp->r1.size();
        ++n;
    }
    return n;
}

inline IqVector concat_pending(const CancellerState& s) {
    IqVector all;
    for (const auto& bp : s.pending) all.insert(all.end(), bp->r1.begin(), bp->r1.end());
    return all;
}

/// Runs the decode check over the pending buffer until nothing more can be decided.
/// `flush` forces a decision for everything buffered (a non-Single block arrived).
inline void drain_pending(CancellerState& s, const CancellerConfig& cfg, bool flush) {
    while (!s.pending.empty()) {
        const IqVector all = concat_pending(s);
        const DecodeResult r = check_decodable(all, cfg.scheme, cfg.preamble_threshold);
        if (r.status == DecodeStatus::NoPreamble) {
            if (flush || s.pending.size() >= 2) {
                // Keep the newest block when not flushing: a preamble may still start inside it.
                resolve_jammer(s, cfg, flush ? s.pending.size() : s.pending.size() - 1);
            }
            return;
        }
        const std::size_t lead = blocks_before(s, r.start);
        if (lead > 0) {
            resolve_jammer(s, cfg, lead);
            continue;
        }
        switch (r.status) {
            case DecodeStatus::Ok:
                resolve_sender(s, cfg, r.start, r.end);
                continue;
            case DecodeStatus::CrcMismatch: {
                const std::size_t n = r.end > r.start ? std::max<std::size_t>(1, blocks_before(s, r.end)) : s.pending.size();
                resolve_jammer(s, cfg, std::min(n, s.pending.size()));
                continue;
            }
            case DecodeStatus::Incomplete:
                if (flush) {
                    // Truncated by a state change: preamble presence is the only evidence left.
                    resolve_sender(s, cfg, r.start, all.size());
                } else if (s.pending.size() >= cfg.max_pending_blocks) {
                    resolve_jammer(s, cfg, s.pending.size());
                }
                return;
            default:
                return;
        }
    }
}

}  // namespace cancel_detail

/// One step of the state machine. The input state is never modified.
inline StepResult step(const CancellerState& in, std::span<const IqSample> r1, std::span<const IqSample> r2, const NetOutput& net,
                       const CancellerConfig& cfg, std::size_t block_index = 0) {
    if (r1.size() != r2.size() || r1.empty()) throw UsageError("step: antenna blocks must be non-empty and equal length");
    StepResult out;
    out.state = in;
    CancellerState& s = out.state;
    const auto ind = indicators(net);
    const ChannelState cs = classify(ind);
    const PowerPair e_t{measure_power(r1), measure_power(r2)};

    BlockDiagnostic& d = out.diag;
    d.index = block_index;
    d.state = cs;
    d.ind = ind;
    d.p_s1 = net.p_s1;
    d.p_s2 = net.p_s2;
    d.e_t = e_t;

    if (cs != ChannelState::Single) cancel_detail::drain_pending(s, cfg, true);

    switch (cs) {
        case ChannelState::Noise:
            out.action = Action::Skip;
            out.output.assign(r1.begin(), r1.end());
            break;
        case ChannelState::Single: {
            auto pb = std::make_shared<PendingBlock>();
            pb->r1.assign(r1.begin(), r1.end());
            pb->power = e_t;
            pb->estimate = Phase(ind[0] ? net.p_s1 : net.p_s2);
            s.pending.push_back(std::move(pb));
            cancel_detail::drain_pending(s, cfg, false);
            out.action = Action::Pass;
            out.output.assign(r1.begin(), r1.end());
            break;
        }
        case ChannelState::Collision: {
            const JammerPhaseChoice choice = select_jammer_phase(net.p_s1, net.p_s2, s.phi_j, s.phi_s);
            if (choice.low_confidence) ++s.counters.low_confidence;
            s.phi_j = smooth_phase(s.phi_j, choice.phase, cfg.lambda, cfg.smoothing);
            const RatioEstimate ratio = estimate_amplitude_ratio(e_t, s.e_s, s.e_j, in.prev_ind, s.i_last_j, s.a_j_last);
            s.e_s = ratio.e_s;
            if (ratio.degenerate) {
                ++s.counters.degenerate_ratio;
            } else {
                s.a_j_last = ratio.a_j;
            }
            out.action = Action::Cancelled;
            out.output = cancel(r1, r2, ratio.a_j, *s.phi_j);
            d.phi_j = s.phi_j->radians();
            d.a_j = ratio.a_j;
            d.low_confidence = choice.low_confidence;
            d.degenerate_ratio = ratio.degenerate;
            break;
        }
    }
    d.action = out.action;
    s.prev_ind = ind;
    return out;
}

/// Runs a whole block stream through the state machine.
struct StreamResult {
    IqVector output;
    std::vector<BlockDiagnostic> diagnostics;
    CancellerState final_state;
};

inline StreamResult run_canceller(std::span<const IqSample> r1, std::span<const IqSample> r2, std::span<const NetOutput> nets,
                                  std::size_t block_len, const CancellerConfig& cfg, CancellerState initial = {}) {
    cfg.validate();
    if (r1.size() != r2.size()) throw UsageError("run_canceller: antenna streams differ in length");
    if (block_len == 0 || r1.size() % block_len != 0) throw UsageError("run_canceller: stream length is not a whole number of blocks");
    const std::size_t n_blocks = r1.size() / block_len;
    if (nets.size() != n_blocks) throw UsageError("run_canceller: one network output per block is required");
    StreamResult res;
    res.output.reserve(r1.size());
    res.diagnostics.reserve(n_blocks);
    CancellerState state = std::move(initial);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        StepResult sr = step(state, r1.subspan(b * block_len, block_len), r2.subspan(b * block_len, block_len), nets[b], cfg, b);
        res.output.insert(res.output.end(), sr.output.begin(), sr.output.end());
        res.diagnostics.push_back(sr.diag);
        state = std::move(sr.state);
    }
    res.final_state = std::move(state);
    return res;
}

inline std::string diagnostics_csv_header() { return "block,state,ind1,ind2,p_s1,p_s2,phi_j,a_j,e_t1,e_t2,action,low_confidence,degenerate_ratio\n"; }

inline std::string diagnostics_csv_row(const BlockDiagnostic& d) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%zu,%s,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s,%d,%d\n", d.index, to_string(d.state), d.ind[0], d.ind[1],
                  d.p_s1, d.p_s2, d.phi_j, d.a_j, d.e_t[0], d.e_t[1], to_string(d.action), d.low_confidence ? 1 : 0,
                  d.degenerate_ratio ? 1 : 0);
    return buf;
}

}  // namespace jamcancel
